//! Fine-tuning objectives and their gradient estimators.
//!
//! | kind     | objective                          | exact gradient              |
//! |----------|------------------------------------|-----------------------------|
//! | `PureRl` | `E_πθ[r]`                          | `Σ πθ(x) r(x) ∇log πθ(x)`   |
//! | `Klrl`   | `E_πθ[r] − β KL(πθ, π0)`           | `Σ πθ(x) r'(x) ∇log πθ(x)`  |
//! | `Gdc`    | `−KL(π*, πθ)`                      | `Σ π*(x) ∇log πθ(x)`        |
//! | `Mle`    | `mean_i log πθ(x_i)`               | `mean_i ∇log πθ(x_i)`       |
//!
//! Here `r'(x) = r(x) + β(log π0(x) − log πθ(x))` is the reshaped reward.
//! Differentiating `E_πθ[r']` also produces `−β E_πθ[∇log πθ]`, which is
//! identically zero, so the score-only form above is exact and its sampled
//! version unbiased.
//!
//! Monte-Carlo estimators draw a batch from πθ. GDC reweights the batch by
//! `π*(x)/πθ(x)`, either with the exact normaliser or self-normalised.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{expected_reward, kl, klrl_objective_exact, TargetDistribution};
use crate::policy::{GradientTable, TabularPolicy};
use crate::seqspace::{Sequence, SequenceSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "pure-rl", alias = "purerl", alias = "rl")]
    PureRl,
    #[serde(rename = "klrl", alias = "kl-rl")]
    Klrl,
    #[serde(rename = "gdc")]
    Gdc,
    #[serde(rename = "mle")]
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    #[default]
    None,
    BatchMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GdcWeighting {
    #[default]
    ExactZ,
    SelfNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Estimator {
    #[default]
    Exact,
    #[serde(rename = "mc", alias = "monte-carlo")]
    MonteCarlo {
        batch: usize,
        #[serde(default)]
        baseline: Baseline,
    },
}

/// Which objective to optimise and how to estimate its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Required for KL-RL and GDC. For the other kinds it only selects the
    /// Gibbs target used by diagnostics (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub gdc_weighting: GdcWeighting,
    /// Training sequences for MLE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<String>>,
}

impl ObjectiveSpec {
    pub fn exact(kind: ObjectiveKind, beta: Option<f64>) -> Self {
        Self {
            kind,
            beta,
            estimator: Estimator::Exact,
            gdc_weighting: GdcWeighting::ExactZ,
            data: None,
        }
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_weighting(mut self, weighting: GdcWeighting) -> Self {
        self.gdc_weighting = weighting;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidBeta(b));
            }
        }
        if matches!(self.kind, ObjectiveKind::Klrl | ObjectiveKind::Gdc) && self.beta.is_none() {
            return Err(Error::InvalidConfig(format!(
                "objective {:?} requires beta",
                self.kind
            )));
        }
        if let Estimator::MonteCarlo { batch, baseline } = self.estimator {
            if batch == 0 {
                return Err(Error::InvalidConfig("batch must be at least 1".into()));
            }
            if baseline == Baseline::BatchMean && batch < 2 {
                return Err(Error::InvalidConfig(
                    "batch-mean baseline needs batch >= 2".into(),
                ));
            }
        }
        match (self.kind, &self.data) {
            (ObjectiveKind::Mle, None) => {
                Err(Error::InvalidConfig("mle objective requires data".into()))
            }
            (ObjectiveKind::Mle, _) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidConfig(
                "data only applies to the mle objective".into(),
            )),
            _ => Ok(()),
        }
    }

    /// β of the Gibbs target: the configured value, or 1.
    pub fn target_beta(&self) -> f64 {
        self.beta.unwrap_or(1.0)
    }
}

/// A non-empty multiset of sequences, stored as indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    indices: Vec<usize>,
}

impl Dataset {
    pub fn new(space: &SequenceSpace, sequences: &[Sequence]) -> Result<Self> {
        let indices = sequences
            .iter()
            .map(|x| space.index_of(x))
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(space, indices)
    }

    pub fn from_indices(space: &SequenceSpace, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidConfig("dataset must be non-empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= space.size()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                size: space.size(),
            });
        }
        Ok(Self { indices })
    }

    pub fn parse(space: &SequenceSpace, texts: &[String]) -> Result<Self> {
        let seqs = texts
            .iter()
            .map(|t| space.parse(t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, &seqs)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn empirical(&self, space: &SequenceSpace) -> Result<TargetDistribution> {
        TargetDistribution::empirical(space, &self.indices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McDiagnostics {
    pub batch_size: usize,
    /// Trace of the estimated covariance of the batch-mean gradient.
    pub est_variance_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: GradientTable,
    /// Exact objective, or its batch estimate for Monte-Carlo.
    pub objective_value: f64,
    pub diag: Option<McDiagnostics>,
}

fn check_rewards(policy: &TabularPolicy, rewards: &[f64]) -> Result<()> {
    let size = policy.space().size();
    if rewards.len() != size {
        return Err(Error::ShapeMismatch {
            expected: size,
            got: rewards.len(),
        });
    }
    Ok(())
}

fn check_nonneg_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidBeta(beta))
    }
}

/// r'(x) = r(x) + β(log π0(x) − log πθ(x)).
pub fn reshaped_reward(
    policy: &TabularPolicy,
    prior: &TabularPolicy,
    rewards: &[f64],
    beta: f64,
    x: &Sequence,
) -> Result<f64> {
    check_rewards(policy, rewards)?;
    check_nonneg_beta(beta)?;
    let i = policy.space().index_of(x)?;
    if beta == 0.0 {
        return Ok(rewards[i]);
    }
    Ok(rewards[i] + beta * (prior.log_prob_at(i) - policy.log_prob_at(i)))
}

/// r'(x) for every sequence, in index order.
pub fn reshaped_rewards(
    policy: &TabularPolicy,
    prior: &TabularPolicy,
    rewards: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    check_rewards(policy, rewards)?;
    check_rewards(prior, rewards)?;
    check_nonneg_beta(beta)?;
    if beta == 0.0 {
        return Ok(rewards.to_vec());
    }
    let lp = policy.log_probs();
    let lp0 = prior.log_probs();
    Ok(rewards
        .iter()
        .zip(lp0.iter().zip(&lp))
        .map(|(r, (a, b))| r + beta * (a - b))
        .collect())
}

/// Batch-mean estimate `mean_i f_i ∇log πθ(x_i)` with the trace of its
/// estimated covariance.
fn batch_score_estimate(
    policy: &TabularPolicy,
    samples: &[usize],
    signal: &[f64],
) -> (GradientTable, f64) {
    let n = samples.len();
    let inv_n = 1.0 / n as f64;
    let grad = policy.score_sum(
        samples
            .iter()
            .copied()
            .zip(signal.iter().map(|f| f * inv_n)),
    );

    // per-sample gradients are sparse: one one-hot-minus-softmax row per step
    let probs = policy.softmax_table();
    let cols = policy.n_cols();
    let mut sumsq = vec![0.0; grad.as_slice().len()];
    for (&i, &f) in samples.iter().zip(signal) {
        if f == 0.0 {
            continue;
        }
        policy.space().for_each_step(i, |row, chosen| {
            let base = row * cols;
            for t in 0..cols {
                let indicator = if t == chosen { 1.0 } else { 0.0 };
                let v = f * (indicator - probs[base + t]);
                sumsq[base + t] += v * v;
            }
        });
    }
    let variance = if n < 2 {
        0.0
    } else {
        sumsq
            .iter()
            .zip(grad.as_slice())
            .map(|(s, m)| ((s - n as f64 * m * m) / (n - 1) as f64).max(0.0))
            .sum::<f64>()
            * inv_n
    };
    (grad, variance)
}

/// Applies the batch-mean baseline in place. The `B/(B−1)` factor makes the
/// estimator exactly unbiased (it equals a leave-one-out mean baseline).
fn apply_baseline(signal: &mut [f64], baseline: Baseline) {
    if baseline == Baseline::None || signal.len() < 2 {
        return;
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let correction = n / (n - 1.0);
    for f in signal.iter_mut() {
        *f = (*f - mean) * correction;
    }
}

fn draw<R: Rng + ?Sized>(policy: &TabularPolicy, batch: usize, rng: &mut R) -> Vec<usize> {
    let sampler = policy.sampler();
    (0..batch).map(|_| sampler.sample_index(rng)).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Score-function estimate of `∇ E_πθ[f]` for a per-sequence value table.
fn reward_gradient<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    values: &[f64],
    estimator: Estimator,
    rng: &mut R,
) -> Result<GradientEstimate> {
    match estimator {
        Estimator::Exact => {
            let p = policy.distribution();
            let grad = policy.score_sum(
                p.iter()
                    .zip(values)
                    .enumerate()
                    .map(|(i, (pi, v))| (i, pi * v)),
            );
            Ok(GradientEstimate {
                grad,
                objective_value: expected_reward(&p, values)?,
                diag: None,
            })
        }
        Estimator::MonteCarlo { batch, baseline } => {
            let samples = draw(policy, batch, rng);
            let raw: Vec<f64> = samples.iter().map(|&i| values[i]).collect();
            let objective_value = mean(&raw);
            let mut signal = raw;
            apply_baseline(&mut signal, baseline);
            let (grad, est_variance_norm) = batch_score_estimate(policy, &samples, &signal);
            Ok(GradientEstimate {
                grad,
                objective_value,
                diag: Some(McDiagnostics {
                    batch_size: batch,
                    est_variance_norm,
                }),
            })
        }
    }
}

/// Gradient of `E_πθ[r]`.
pub fn grad_pure_rl<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    rewards: &[f64],
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_rewards(policy, rewards)?;
    reward_gradient(policy, rewards, spec.estimator, rng)
}

/// Gradient of `E_πθ[r] − β KL(πθ, π0)` via the reshaped reward.
///
/// `spec.beta` may be 0 here, which reproduces [`grad_pure_rl`] exactly.
pub fn grad_klrl<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    prior: &TabularPolicy,
    rewards: &[f64],
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<GradientEstimate> {
    let beta = spec
        .beta
        .ok_or_else(|| Error::InvalidConfig("klrl requires beta".into()))?;
    let reshaped = reshaped_rewards(policy, prior, rewards, beta)?;
    let mut est = reward_gradient(policy, &reshaped, spec.estimator, rng)?;
    if spec.estimator == Estimator::Exact {
        est.objective_value = klrl_objective_exact(policy, prior, rewards, beta)?;
    }
    Ok(est)
}

/// Ascent direction on `−KL(π*, πθ)`.
pub fn grad_gdc<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    target: &TargetDistribution,
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_rewards(policy, target.probs())?;
    match spec.estimator {
        Estimator::Exact => {
            let grad = policy.score_sum(target.probs().iter().copied().enumerate());
            Ok(GradientEstimate {
                grad,
                objective_value: -kl(target.probs(), &policy.distribution())?,
                diag: None,
            })
        }
        Estimator::MonteCarlo { batch, baseline } => {
            let lp = policy.log_probs();
            let lt = target.log_probs();
            let samples = draw(policy, batch, rng);
            let weights: Vec<f64> = samples.iter().map(|&i| (lt[i] - lp[i]).exp()).collect();
            let log_ratio: Vec<f64> = samples
                .iter()
                .map(|&i| {
                    if target.probs()[i] > 0.0 {
                        lp[i] - lt[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            let (mut signal, objective_value) = match spec.gdc_weighting {
                GdcWeighting::ExactZ => {
                    let obj = mean(
                        &weights
                            .iter()
                            .zip(&log_ratio)
                            .map(|(w, l)| w * l)
                            .collect::<Vec<_>>(),
                    );
                    (weights, obj)
                }
                GdcWeighting::SelfNormalized => {
                    let total: f64 = weights.iter().sum();
                    let n = batch as f64;
                    // scaled so the batch mean of the signal is the SNIS estimate
                    let signal: Vec<f64> = weights.iter().map(|w| n * w / total).collect();
                    let obj = weights
                        .iter()
                        .zip(&log_ratio)
                        .map(|(w, l)| w / total * l)
                        .sum();
                    (signal, obj)
                }
            };
            apply_baseline(&mut signal, baseline);
            let (grad, est_variance_norm) = batch_score_estimate(policy, &samples, &signal);
            Ok(GradientEstimate {
                grad,
                objective_value,
                diag: Some(McDiagnostics {
                    batch_size: batch,
                    est_variance_norm,
                }),
            })
        }
    }
}

/// Gradient of the mean log-likelihood of `data`.
pub fn grad_mle(policy: &TabularPolicy, data: &Dataset) -> Result<GradientEstimate> {
    let size = policy.space().size();
    if let Some(&bad) = data.indices().iter().find(|&&i| i >= size) {
        return Err(Error::IndexOutOfRange { index: bad, size });
    }
    let w = 1.0 / data.len() as f64;
    let grad = policy.score_sum(data.indices().iter().map(|&i| (i, w)));
    Ok(GradientEstimate {
        grad,
        objective_value: mean_log_likelihood(policy, data),
        diag: None,
    })
}

pub fn mean_log_likelihood(policy: &TabularPolicy, data: &Dataset) -> f64 {
    let lp = policy.log_probs();
    data.indices().iter().map(|&i| lp[i]).sum::<f64>() / data.len() as f64
}

/// Everything an objective may need besides the policy being trained.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub prior: &'a TabularPolicy,
    pub rewards: &'a [f64],
    /// Gibbs posterior (or empirical distribution for MLE).
    pub target: &'a TargetDistribution,
    pub data: Option<&'a Dataset>,
}

impl Problem<'_> {
    fn data(&self) -> Result<&Dataset> {
        self.data
            .ok_or_else(|| Error::InvalidConfig("mle objective requires data".into()))
    }
}

/// Gradient estimate for whichever objective `spec` selects.
pub fn estimate_gradient<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    spec: &ObjectiveSpec,
    problem: &Problem<'_>,
    rng: &mut R,
) -> Result<GradientEstimate> {
    match spec.kind {
        ObjectiveKind::PureRl => grad_pure_rl(policy, problem.rewards, spec, rng),
        ObjectiveKind::Klrl => grad_klrl(policy, problem.prior, problem.rewards, spec, rng),
        ObjectiveKind::Gdc => grad_gdc(policy, problem.target, spec, rng),
        ObjectiveKind::Mle => grad_mle(policy, problem.data()?),
    }
}

/// Exact value of the objective `spec` selects.
pub fn exact_objective(
    policy: &TabularPolicy,
    spec: &ObjectiveSpec,
    problem: &Problem<'_>,
) -> Result<f64> {
    match spec.kind {
        ObjectiveKind::PureRl => expected_reward(&policy.distribution(), problem.rewards),
        ObjectiveKind::Klrl => {
            klrl_objective_exact(policy, problem.prior, problem.rewards, spec.target_beta())
        }
        ObjectiveKind::Gdc => Ok(-kl(problem.target.probs(), &policy.distribution())?),
        ObjectiveKind::Mle => Ok(mean_log_likelihood(policy, problem.data()?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::gibbs_posterior;
    use crate::policy::PriorScheme;
    use crate::seqspace::Vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(n_content: usize, max_len: usize) -> SequenceSpace {
        let mut symbols: Vec<String> = (0..n_content)
            .map(|i| ((b'a' + i as u8) as char).to_string())
            .collect();
        symbols.push("<eos>".into());
        SequenceSpace::new(Vocab::with_eos_symbol(symbols, "<eos>").unwrap(), max_len).unwrap()
    }

    fn gaussian(space: &SequenceSpace, sigma: f64, seed: u64) -> TabularPolicy {
        TabularPolicy::init_prior(space, &PriorScheme::GaussianLogits { sigma, seed }).unwrap()
    }

    fn rewards(s: &SequenceSpace, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..s.size()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn spec_json_round_trip() {
        let spec: ObjectiveSpec = serde_json::from_str(
            r#"{"kind": "klrl", "beta": 0.5, "estimator": {"type": "mc", "batch": 512, "baseline": "batch-mean"}, "gdc_weighting": "self-normalized"}"#,
        )
        .unwrap();
        assert_eq!(spec.kind, ObjectiveKind::Klrl);
        assert_eq!(
            spec.estimator,
            Estimator::MonteCarlo {
                batch: 512,
                baseline: Baseline::BatchMean
            }
        );
        assert_eq!(spec.gdc_weighting, GdcWeighting::SelfNormalized);
        spec.validate().unwrap();
        let back: ObjectiveSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn spec_validation() {
        let bad = |json: &str| {
            serde_json::from_str::<ObjectiveSpec>(json)
                .map_err(Error::from)
                .and_then(|s| s.validate())
                .is_err()
        };
        assert!(bad(r#"{"kind":"klrl"}"#));
        assert!(bad(r#"{"kind":"gdc","beta":0}"#));
        assert!(bad(
            r#"{"kind":"klrl","beta":1,"estimator":{"type":"mc","batch":1,"baseline":"batch-mean"}}"#
        ));
        assert!(bad(r#"{"kind":"mle"}"#));
        assert!(bad(r#"{"kind":"klrl","beta":1,"data":["a"]}"#));
        assert!(bad(r#"{"kind":"ppo"}"#));
        assert!(!bad(r#"{"kind":"pure-rl"}"#));
        assert!(!bad(r#"{"kind":"mle","data":["ab"]}"#));
    }

    #[test]
    fn reshaped_reward_reductions() {
        let s = space(2, 3);
        let prior = gaussian(&s, 1.0, 1);
        let policy = gaussian(&s, 1.0, 2);
        let r = rewards(&s, 3);
        for (i, x) in s.enumerate().enumerate() {
            assert!((reshaped_reward(&prior, &prior, &r, 0.7, &x).unwrap() - r[i]).abs() < 1e-15);
            assert_eq!(reshaped_reward(&policy, &prior, &r, 0.0, &x).unwrap(), r[i]);
        }
    }

    #[test]
    fn reshaped_expectation_equals_klrl_objective() {
        let s = space(2, 3);
        for seed in 0..100 {
            let prior = gaussian(&s, 1.0, seed);
            let policy = gaussian(&s, 1.5, seed + 1000);
            let r = rewards(&s, seed + 2000);
            let beta = 0.05 + (seed as f64) * 0.1;
            let reshaped = reshaped_rewards(&policy, &prior, &r, beta).unwrap();
            let lhs = expected_reward(&policy.distribution(), &reshaped).unwrap();
            let rhs = klrl_objective_exact(&policy, &prior, &r, beta).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let s = space(2, 3);
        let policy = gaussian(&s, 1.0, 4);
        let spec = ObjectiveSpec::exact(ObjectiveKind::PureRl, None);
        let g = grad_pure_rl(&policy, &vec![2.5; s.size()], &spec, &mut rng()).unwrap();
        assert!(g.grad.max_abs() < 1e-10);
    }

    #[test]
    fn one_point_space_gradient_is_empty() {
        let s = space(2, 0);
        let policy = TabularPolicy::uniform(s);
        let spec = ObjectiveSpec::exact(ObjectiveKind::PureRl, None);
        let g = grad_pure_rl(&policy, &[3.0], &spec, &mut rng()).unwrap();
        assert_eq!(g.grad.as_slice().len(), 0);
        assert_eq!(g.objective_value, 3.0);
    }

    #[test]
    fn klrl_stationary_at_posterior() {
        let s = space(2, 3);
        let prior = gaussian(&s, 1.0, 7);
        let r = rewards(&s, 8);
        for beta in [0.2, 1.0, 5.0] {
            let post = gibbs_posterior(&prior, &r, beta).unwrap();
            let policy = TabularPolicy::from_distribution(&s, post.probs()).unwrap();
            let spec = ObjectiveSpec::exact(ObjectiveKind::Klrl, Some(beta));
            let g = grad_klrl(&policy, &prior, &r, &spec, &mut rng()).unwrap();
            assert!(g.grad.norm() < 1e-7, "beta {beta}: {}", g.grad.norm());

            let gspec = ObjectiveSpec::exact(ObjectiveKind::Gdc, Some(beta));
            let g = grad_gdc(&policy, &post, &gspec, &mut rng()).unwrap();
            assert!(g.grad.max_abs() < 1e-8);
        }
    }

    #[test]
    fn klrl_with_zero_beta_is_pure_rl_bit_for_bit() {
        let s = space(2, 3);
        let prior = gaussian(&s, 1.0, 7);
        let policy = gaussian(&s, 1.0, 9);
        let r = rewards(&s, 10);
        let k = grad_klrl(
            &policy,
            &prior,
            &r,
            &ObjectiveSpec::exact(ObjectiveKind::Klrl, Some(0.0)),
            &mut rng(),
        )
        .unwrap();
        let p = grad_pure_rl(
            &policy,
            &r,
            &ObjectiveSpec::exact(ObjectiveKind::PureRl, None),
            &mut rng(),
        )
        .unwrap();
        assert_eq!(k.grad, p.grad);
        assert_eq!(k.objective_value.to_bits(), p.objective_value.to_bits());
    }

    #[test]
    fn mle_uniform_data_at_uniform_distribution() {
        let s = space(2, 3);
        let data = Dataset::from_indices(&s, (0..s.size()).collect()).unwrap();
        let uniform = vec![1.0 / s.size() as f64; s.size()];
        let policy = TabularPolicy::from_distribution(&s, &uniform).unwrap();
        let g = grad_mle(&policy, &data).unwrap();
        assert!(g.grad.max_abs() < 1e-12);
        assert!((g.objective_value + (s.size() as f64).ln()).abs() < 1e-12);

        // and equals the forward-KL gradient towards the empirical target elsewhere
        let other = gaussian(&s, 1.0, 3);
        let target = data.empirical(&s).unwrap();
        let spec = ObjectiveSpec::exact(ObjectiveKind::Gdc, Some(1.0));
        let a = grad_mle(&other, &data).unwrap();
        let b = grad_gdc(&other, &target, &spec, &mut rng()).unwrap();
        for (x, y) in a.grad.as_slice().iter().zip(b.grad.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_validation() {
        let s = space(2, 2);
        assert!(Dataset::from_indices(&s, vec![]).is_err());
        assert!(Dataset::from_indices(&s, vec![7]).is_err());
        let d = Dataset::parse(&s, &["ab".into(), "".into(), "ab".into()]).unwrap();
        assert_eq!(d.indices(), &[4, 0, 4]);
        assert!(Dataset::parse(&s, &["abb".into()]).is_err());
    }

    #[test]
    fn baseline_shrinks_variance() {
        let s = space(2, 3);
        let policy = gaussian(&s, 1.0, 7);
        // rewards far from zero so the baseline has something to remove
        let r: Vec<f64> = rewards(&s, 11).iter().map(|v| 3.0 + v).collect();
        for seed in 0..5 {
            let run = |baseline| {
                let spec = ObjectiveSpec::exact(ObjectiveKind::PureRl, None).with_estimator(
                    Estimator::MonteCarlo {
                        batch: 256,
                        baseline,
                    },
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                grad_pure_rl(&policy, &r, &spec, &mut rng)
                    .unwrap()
                    .diag
                    .unwrap()
            };
            let plain = run(Baseline::None);
            let based = run(Baseline::BatchMean);
            assert!(based.est_variance_norm < plain.est_variance_norm);
            assert_eq!(plain.batch_size, 256);
        }
    }

    #[test]
    fn variance_norm_matches_dense_computation() {
        let s = space(2, 3);
        let policy = gaussian(&s, 1.0, 7);
        let samples = [0usize, 3, 3, 14, 7, 1];
        let signal = [0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        let (grad, var) = batch_score_estimate(&policy, &samples, &signal);
        let dense: Vec<GradientTable> = samples
            .iter()
            .zip(&signal)
            .map(|(&i, &f)| {
                let mut g = policy.grad_log_prob(&s.sequence_at(i).unwrap()).unwrap();
                g.scale(f);
                g
            })
            .collect();
        let n = samples.len() as f64;
        let mut want = 0.0;
        for c in 0..grad.as_slice().len() {
            let m = dense.iter().map(|g| g.as_slice()[c]).sum::<f64>() / n;
            assert!((m - grad.as_slice()[c]).abs() < 1e-14);
            let v = dense
                .iter()
                .map(|g| (g.as_slice()[c] - m).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            want += v / n;
        }
        assert!((var - want).abs() < 1e-12);
    }

    #[test]
    fn self_normalized_gdc_moves_towards_target() {
        let s = space(2, 3);
        let prior = gaussian(&s, 1.0, 7);
        let r = rewards(&s, 12);
        let target = gibbs_posterior(&prior, &r, 0.5).unwrap();
        let spec = ObjectiveSpec::exact(ObjectiveKind::Gdc, Some(0.5))
            .with_estimator(Estimator::MonteCarlo {
                batch: 512,
                baseline: Baseline::None,
            })
            .with_weighting(GdcWeighting::SelfNormalized);
        let mut policy = prior.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = kl(target.probs(), &policy.distribution()).unwrap();
        for _ in 0..2000 {
            let g = grad_gdc(&policy, &target, &spec, &mut rng).unwrap();
            policy.ascend(&g.grad, 0.5);
        }
        let end = kl(target.probs(), &policy.distribution()).unwrap();
        assert!(end < 1e-2 && end < start, "{start} -> {end}");
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let s = space(2, 3);
        let prior = gaussian(&s, 1.0, 7);
        let policy = gaussian(&s, 1.0, 8);
        let r = rewards(&s, 13);
        let target = gibbs_posterior(&prior, &r, 2.0).unwrap();
        let data = Dataset::from_indices(&s, vec![1, 2, 2]).unwrap();
        let problem = Problem {
            prior: &prior,
            rewards: &r,
            target: &target,
            data: Some(&data),
        };
        let spec = ObjectiveSpec::exact(ObjectiveKind::Klrl, Some(2.0));
        let a = estimate_gradient(&policy, &spec, &problem, &mut rng()).unwrap();
        let b = grad_klrl(&policy, &prior, &r, &spec, &mut rng()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            exact_objective(&policy, &spec, &problem).unwrap(),
            klrl_objective_exact(&policy, &prior, &r, 2.0).unwrap()
        );
        let mut mle = ObjectiveSpec::exact(ObjectiveKind::Mle, None);
        mle.data = Some(vec!["a".into()]);
        let g = estimate_gradient(&policy, &mle, &problem, &mut rng()).unwrap();
        assert_eq!(g, grad_mle(&policy, &data).unwrap());
    }
}
