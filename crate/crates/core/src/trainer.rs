//! Plain gradient ascent with exact per-step diagnostics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::entropy;
use crate::objectives::{
    estimate_gradient, exact_objective, Estimator, ObjectiveKind, ObjectiveSpec, Problem,
};
use crate::oracle::{check_beta, elbo, expected_reward, gibbs_posterior, kl};
use crate::policy::TabularPolicy;
use crate::reward::{argmax_set, OptimalityModel};

/// Probability above which a sequence counts towards `support_size`.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Largest learning rate for which exact-gradient runs must improve the
/// objective monotonically.
pub const MONOTONE_LR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Objective,
    ExpectedReward,
    KlToPrior,
    KlToTarget,
    FwdKlFromTarget,
    Entropy,
    ElboGap,
    ArgmaxMass,
    SupportSize,
    MaxProb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDirection {
    #[default]
    Below,
    Above,
}

/// Stop as soon as `metric` is strictly below (or above) `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopWhen {
    pub metric: Metric,
    pub threshold: f64,
    #[serde(default)]
    pub direction: StopDirection,
}

impl StopWhen {
    pub fn below(metric: Metric, threshold: f64) -> Self {
        Self {
            metric,
            threshold,
            direction: StopDirection::Below,
        }
    }

    fn satisfied(&self, row: &MetricsRow) -> bool {
        match row.get(self.metric) {
            None => false,
            Some(v) => match self.direction {
                StopDirection::Below => v < self.threshold,
                StopDirection::Above => v > self.threshold,
            },
        }
    }
}

fn default_decay() -> f64 {
    1.0
}

fn default_log_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per step.
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_when: Option<StopWhen>,
}

impl TrainConfig {
    pub fn new(steps: usize, lr: f64) -> Self {
        Self {
            steps,
            lr,
            lr_decay: 1.0,
            seed: 0,
            log_every: 1,
            stop_when: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if let Some(stop) = &self.stop_when {
            if !stop.threshold.is_finite() {
                return Err(Error::InvalidConfig("stop threshold must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Exact diagnostics of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub objective: f64,
    pub expected_reward: f64,
    pub kl_to_prior: f64,
    pub kl_to_target: f64,
    pub fwd_kl_from_target: f64,
    pub entropy: f64,
    /// log Z − ELBO for the shifted reward; present only when the target's
    /// β is 1.
    pub elbo_gap: Option<f64>,
    pub argmax_mass: f64,
    pub support_size: usize,
    pub max_prob: f64,
}

impl MetricsRow {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        Some(match metric {
            Metric::Objective => self.objective,
            Metric::ExpectedReward => self.expected_reward,
            Metric::KlToPrior => self.kl_to_prior,
            Metric::KlToTarget => self.kl_to_target,
            Metric::FwdKlFromTarget => self.fwd_kl_from_target,
            Metric::Entropy => self.entropy,
            Metric::ElboGap => return self.elbo_gap,
            Metric::ArgmaxMass => self.argmax_mass,
            Metric::SupportSize => self.support_size as f64,
            Metric::MaxProb => self.max_prob,
        })
    }
}

/// Why a run stopped before `steps`.
#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    NonFiniteGradient {
        step: usize,
    },
    NonMonotone {
        step: usize,
        before: f64,
        after: f64,
    },
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::NonFiniteGradient { step } => write!(f, "non-finite gradient at step {step}"),
            Abort::NonMonotone {
                step,
                before,
                after,
            } => write!(
                f,
                "objective decreased from {before} to {after} at step {step}"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub objective: ObjectiveSpec,
    pub config: TrainConfig,
    pub rows: Vec<MetricsRow>,
    pub policy: TabularPolicy,
    /// Step at which `stop_when` was first satisfied.
    pub stopped_at: Option<usize>,
    pub abort: Option<Abort>,
}

impl Trajectory {
    pub fn last(&self) -> &MetricsRow {
        self.rows.last().expect("trajectory has at least one row")
    }

    /// True when a stop condition was configured but never met.
    pub fn stop_unmet(&self) -> bool {
        self.config.stop_when.is_some() && self.stopped_at.is_none()
    }
}

/// Precomputed pieces of the exact diagnostics.
pub struct Diagnostics<'a> {
    problem: Problem<'a>,
    prior_dist: Vec<f64>,
    argmax: Vec<usize>,
    /// Shifted reward model and its log Z at β = 1, when the target's β is 1.
    elbo_terms: Option<(OptimalityModel, f64)>,
}

impl<'a> Diagnostics<'a> {
    pub fn new(problem: Problem<'a>, spec: &ObjectiveSpec) -> Result<Self> {
        let elbo_terms = if spec.kind != ObjectiveKind::Mle && spec.target_beta() == 1.0 {
            let model = OptimalityModel::from_rewards(problem.rewards)?;
            let log_z = gibbs_posterior(problem.prior, &model.shifted_rewards(), 1.0)?.log_z();
            Some((model, log_z))
        } else {
            None
        };
        Ok(Self {
            problem,
            prior_dist: problem.prior.distribution(),
            argmax: argmax_set(problem.rewards),
            elbo_terms,
        })
    }

    pub fn row(&self, step: usize, policy: &TabularPolicy, objective: f64) -> Result<MetricsRow> {
        let p = policy.distribution();
        let target = self.problem.target.probs();
        let elbo_gap = match &self.elbo_terms {
            Some((model, log_z)) => Some(log_z - elbo(policy, self.problem.prior, model)?),
            None => None,
        };
        Ok(MetricsRow {
            step,
            objective,
            expected_reward: expected_reward(&p, self.problem.rewards)?,
            kl_to_prior: kl(&p, &self.prior_dist)?,
            kl_to_target: kl(&p, target)?,
            fwd_kl_from_target: kl(target, &p)?,
            entropy: entropy(&p),
            elbo_gap,
            argmax_mass: self.argmax.iter().map(|&i| p[i]).sum::<f64>().min(1.0),
            support_size: p.iter().filter(|&&v| v > SUPPORT_THRESHOLD).count(),
            max_prob: p.iter().copied().fold(0.0, f64::max),
        })
    }
}

/// True when `after` is below `before` by more than rounding noise.
fn decreased(before: f64, after: f64) -> bool {
    after < before - 1e-11 * (1.0 + before.abs())
}

/// Runs gradient ascent from `policy`, logging exact diagnostics.
///
/// Numerical failures do not return `Err`; they end the run early and are
/// recorded in [`Trajectory::abort`] together with a final diagnostic row.
pub fn train(
    mut policy: TabularPolicy,
    problem: Problem<'_>,
    spec: &ObjectiveSpec,
    config: &TrainConfig,
) -> Result<Trajectory> {
    config.validate()?;
    spec.validate()?;
    let diagnostics = Diagnostics::new(problem, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let check_monotone = spec.estimator == Estimator::Exact;

    let mut rows = Vec::new();
    let mut stopped_at = None;
    let mut abort = None;
    let mut lr = config.lr;
    let mut previous = exact_objective(&policy, spec, &problem)?;

    for step in 1..=config.steps {
        let estimate = estimate_gradient(&policy, spec, &problem, &mut rng)?;
        if !estimate.grad.is_finite() {
            rows.push(diagnostics.row(step, &policy, previous)?);
            abort = Some(Abort::NonFiniteGradient { step });
            break;
        }
        policy.ascend(&estimate.grad, lr);
        let objective = exact_objective(&policy, spec, &problem)?;

        if check_monotone && lr <= MONOTONE_LR && decreased(previous, objective) {
            rows.push(diagnostics.row(step, &policy, objective)?);
            abort = Some(Abort::NonMonotone {
                step,
                before: previous,
                after: objective,
            });
            break;
        }
        previous = objective;

        let mut logged = false;
        if let Some(stop) = &config.stop_when {
            let row = diagnostics.row(step, &policy, objective)?;
            if stop.satisfied(&row) {
                rows.push(row);
                stopped_at = Some(step);
                break;
            }
            if step % config.log_every == 0 || step == config.steps {
                rows.push(row);
                logged = true;
            }
        }
        if !logged && (step % config.log_every == 0 || step == config.steps) {
            rows.push(diagnostics.row(step, &policy, objective)?);
        }
        lr *= config.lr_decay;
    }

    Ok(Trajectory {
        objective: spec.clone(),
        config: config.clone(),
        rows,
        policy,
        stopped_at,
        abort,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub entropy: f64,
    pub argmax_mass: f64,
    pub support_size: usize,
    pub mass_outside_argmax: f64,
    /// Total variation between the policy and its restriction to the argmax
    /// set (renormalised); 1 when the policy puts no mass there.
    pub tv_to_nearest_argmax_distribution: f64,
}

/// How close a policy is to a point mass on the reward maximisers.
pub fn collapse_report(policy: &TabularPolicy, rewards: &[f64]) -> Result<CollapseReport> {
    let p = policy.distribution();
    if rewards.len() != p.len() {
        return Err(Error::ShapeMismatch {
            expected: p.len(),
            got: rewards.len(),
        });
    }
    let argmax = argmax_set(rewards);
    let mut in_set = vec![false; p.len()];
    for &i in &argmax {
        in_set[i] = true;
    }
    let mass: f64 = argmax.iter().map(|&i| p[i]).sum::<f64>().min(1.0);
    let tv = if mass > 0.0 {
        0.5 * p
            .iter()
            .zip(&in_set)
            .map(|(&pi, &inside)| {
                let restricted = if inside { pi / mass } else { 0.0 };
                (pi - restricted).abs()
            })
            .sum::<f64>()
    } else {
        1.0
    };
    Ok(CollapseReport {
        entropy: entropy(&p),
        argmax_mass: mass,
        support_size: p.iter().filter(|&&v| v > SUPPORT_THRESHOLD).count(),
        mass_outside_argmax: 1.0 - mass,
        tv_to_nearest_argmax_distribution: tv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub expected_reward: f64,
    pub kl_to_prior: f64,
    pub entropy: f64,
}

/// Exact properties of the Gibbs posterior at each β (ascending).
pub fn beta_sweep(prior: &TabularPolicy, rewards: &[f64], betas: &[f64]) -> Result<Vec<SweepRow>> {
    if betas.is_empty() {
        return Err(Error::InvalidConfig("no betas to sweep".into()));
    }
    for &b in betas {
        check_beta(b)?;
    }
    if betas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig(
            "betas must be sorted ascending".into(),
        ));
    }
    let p0 = prior.distribution();
    betas
        .iter()
        .map(|&beta| {
            let post = gibbs_posterior(prior, rewards, beta)?;
            Ok(SweepRow {
                beta,
                expected_reward: expected_reward(post.probs(), rewards)?,
                kl_to_prior: kl(post.probs(), &p0)?,
                entropy: post.entropy(),
            })
        })
        .collect()
}
