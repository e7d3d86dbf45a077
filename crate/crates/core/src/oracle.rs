//! Exact quantities computed by enumerating the whole sequence space.
//!
//! The central object is the Gibbs posterior
//!
//! ```text
//! π*(x) = π0(x) · exp(r(x) / β) / Z,    log Z = logsumexp_x [log π0(x) + r(x) / β]
//! ```
//!
//! which is both the Bayesian update of the prior on the evidence carried by
//! the reward and the maximiser of the KL-regularised objective
//! `J(θ) = E_πθ[r] − β·KL(πθ, π0)`. The exact relation tying them together,
//! checked by [`verify_identities`], is
//!
//! ```text
//! J(θ) = β·log Z − β·KL(πθ, π*)
//! ```
//!
//! All reductions run in index order so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{entropy, log_sum_exp};
use crate::objectives::reshaped_rewards;
use crate::policy::TabularPolicy;
use crate::reward::OptimalityModel;
use crate::seqspace::SequenceSpace;

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidBeta(beta))
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, got })
    }
}

/// A fully enumerated target distribution with its normaliser.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    log_z: f64,
    beta: f64,
}

impl TargetDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    /// Overrides the stored normaliser without touching the probabilities.
    /// Only useful for checking that verification notices a wrong `log Z`.
    pub fn with_log_z(mut self, log_z: f64) -> Self {
        self.log_z = log_z;
        self
    }

    /// Empirical distribution of a multiset of sequence indices.
    ///
    /// The unnormalised weights are the counts, so `log Z = ln N`; β is 1.
    pub fn empirical(space: &SequenceSpace, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidDistribution("empty dataset".into()));
        }
        let size = space.size();
        let mut counts = vec![0usize; size];
        for &i in indices {
            if i >= size {
                return Err(Error::IndexOutOfRange { index: i, size });
            }
            counts[i] += 1;
        }
        let n = indices.len() as f64;
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            probs,
            log_probs,
            log_z: n.ln(),
            beta: 1.0,
        })
    }
}

/// log Z for the Gibbs posterior of `prior` tilted by `rewards / beta`.
pub fn partition_function(prior: &TabularPolicy, rewards: &[f64], beta: f64) -> Result<f64> {
    Ok(tilted_log_weights(prior, rewards, beta)?.1)
}

fn tilted_log_weights(
    prior: &TabularPolicy,
    rewards: &[f64],
    beta: f64,
) -> Result<(Vec<f64>, f64)> {
    check_beta(beta)?;
    check_len(prior.space().size(), rewards.len())?;
    let weights: Vec<f64> = prior
        .log_probs()
        .iter()
        .zip(rewards)
        .map(|(lp, r)| lp + r / beta)
        .collect();
    let log_z = log_sum_exp(&weights);
    Ok((weights, log_z))
}

/// π*(x) = π0(x)·exp(r(x)/β) / Z, built in log space.
pub fn gibbs_posterior(
    prior: &TabularPolicy,
    rewards: &[f64],
    beta: f64,
) -> Result<TargetDistribution> {
    let (weights, log_z) = tilted_log_weights(prior, rewards, beta)?;
    let log_probs: Vec<f64> = weights.iter().map(|w| w - log_z).collect();
    let probs = log_probs.iter().map(|l| l.exp()).collect();
    Ok(TargetDistribution {
        probs,
        log_probs,
        log_z,
        beta,
    })
}

/// KL(p ‖ q) = Σ p ln(p/q) with `0 ln 0 = 0`; `+inf` when `q` misses mass of `p`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p.len(), q.len())?;
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += pi * (pi.ln() - qi.ln());
        }
    }
    Ok(total)
}

/// Σ p(x) f(x) in index order.
pub fn expectation(p: &[f64], values: &[f64]) -> Result<f64> {
    check_len(p.len(), values.len())?;
    Ok(p.iter().zip(values).map(|(a, b)| a * b).sum())
}

/// E_p[r].
pub fn expected_reward(p: &[f64], rewards: &[f64]) -> Result<f64> {
    expectation(p, rewards)
}

/// KL-regularised objective `E_πθ[r] − β·KL(πθ, π0)`.
///
/// `beta = 0` is accepted and gives the pure expected reward.
pub fn klrl_objective_exact(
    policy: &TabularPolicy,
    prior: &TabularPolicy,
    rewards: &[f64],
    beta: f64,
) -> Result<f64> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidBeta(beta));
    }
    let p = policy.distribution();
    let reward = expected_reward(&p, rewards)?;
    if beta == 0.0 {
        return Ok(reward);
    }
    let penalty = kl(&p, &prior.distribution())?;
    Ok(reward - beta * penalty)
}

/// Evidence lower bound on `log p(O = 1)` with `p(O = 1 | x) = exp(r̃(x))`:
/// `Σ πθ(x) [r̃(x) + log π0(x) − log πθ(x)]`.
pub fn elbo(policy: &TabularPolicy, prior: &TabularPolicy, model: &OptimalityModel) -> Result<f64> {
    let size = policy.space().size();
    check_len(size, prior.space().size())?;
    check_len(size, model.base().len())?;
    let lp = policy.log_probs();
    let lp0 = prior.log_probs();
    let mut total = 0.0;
    for i in 0..size {
        let p = lp[i].exp();
        if p > 0.0 {
            total += p * (model.shifted(i) + lp0[i] - lp[i]);
        }
    }
    Ok(total)
}

/// Residuals of the exact relations between objective, posterior and ELBO at
/// one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// |J + β·KL(πθ, π*) − β·log Z|.
    #[serde(rename = "residual_eq7")]
    pub residual_affine_kl: f64,
    /// |E_πθ[r'] − J| where r' is the reshaped reward.
    #[serde(rename = "residual_eq3_eq4")]
    pub residual_reshaped_reward: f64,
    /// max(0, ELBO − log Z) for the shifted reward at β = 1.
    pub elbo_gap_violation: f64,
    /// |(log Z − ELBO) − KL(πθ, π*)| for the shifted reward at β = 1.
    pub residual_elbo_gap_kl: f64,
    /// |ELBO − J| for the shifted reward at β = 1.
    pub residual_elbo_objective: f64,
    /// J at this policy.
    pub objective: f64,
    /// KL(πθ, π*).
    pub kl_to_target: f64,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub beta: f64,
}

impl IdentityReport {
    /// Largest residual among the equality checks.
    pub fn max_identity_residual(&self) -> f64 {
        self.residual_affine_kl
            .max(self.residual_reshaped_reward)
            .max(self.residual_elbo_gap_kl)
            .max(self.residual_elbo_objective)
    }
}

/// Checks every identity at `policy` against a freshly built posterior.
pub fn verify_identities(
    policy: &TabularPolicy,
    prior: &TabularPolicy,
    rewards: &[f64],
    beta: f64,
) -> Result<IdentityReport> {
    let target = gibbs_posterior(prior, rewards, beta)?;
    identity_report(policy, prior, rewards, &target)
}

/// Checks every identity at `policy` against a given target; the target's
/// β is used throughout.
pub fn identity_report(
    policy: &TabularPolicy,
    prior: &TabularPolicy,
    rewards: &[f64],
    target: &TargetDistribution,
) -> Result<IdentityReport> {
    let beta = target.beta();
    check_beta(beta)?;
    let p = policy.distribution();

    let objective = klrl_objective_exact(policy, prior, rewards, beta)?;
    let kl_to_target = kl(&p, target.probs())?;
    let residual_affine_kl = (objective + beta * kl_to_target - beta * target.log_z()).abs();

    let reshaped = reshaped_rewards(policy, prior, rewards, beta)?;
    let residual_reshaped_reward = (expectation(&p, &reshaped)? - objective).abs();

    let model = OptimalityModel::from_rewards(rewards)?;
    let shifted = model.shifted_rewards();
    let unit = gibbs_posterior(prior, &shifted, 1.0)?;
    let bound = elbo(policy, prior, &model)?;
    let elbo_gap_violation = (bound - unit.log_z()).max(0.0);
    let residual_elbo_gap_kl = ((unit.log_z() - bound) - kl(&p, unit.probs())?).abs();
    let residual_elbo_objective =
        (bound - klrl_objective_exact(policy, prior, &shifted, 1.0)?).abs();

    Ok(IdentityReport {
        residual_affine_kl,
        residual_reshaped_reward,
        elbo_gap_violation,
        residual_elbo_gap_kl,
        residual_elbo_objective,
        objective,
        kl_to_target,
        log_z: target.log_z(),
        beta,
    })
}
