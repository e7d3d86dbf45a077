//! KL-regularised training with exact gradients converges to the Gibbs
//! posterior, and its objective to β·log Z.
//!
//! cargo run --release --example klrl_convergence

use klvi::objectives::Problem;
use klvi::oracle::gibbs_posterior;
use klvi::trainer::{train, Metric, StopWhen};
use klvi::{
    ObjectiveKind, ObjectiveSpec, PriorScheme, RewardFn, RewardSpec, SequenceSpace, TabularPolicy,
    TrainConfig, Vocab,
};

fn main() -> klvi::Result<()> {
    let space = SequenceSpace::new(Vocab::with_eos_symbol(vec!["a", "b", "<eos>"], "<eos>")?, 3)?;
    let prior = TabularPolicy::init_prior(
        &space,
        &PriorScheme::GaussianLogits {
            sigma: 1.0,
            seed: 7,
        },
    )?;
    let spec: RewardSpec = serde_json::from_str(
        r#"{"kind": "composite", "terms": [
            {"reward": {"kind": "contains", "substring": "ab", "bonus": 1.0}},
            {"reward": {"kind": "length-penalty", "c": 0.1}}]}"#,
    )?;
    let rewards = RewardFn::from_spec(&spec, &space)?.tabulate(&space)?;

    for beta in [0.3, 1.0, 3.0] {
        let target = gibbs_posterior(&prior, &rewards, beta)?;
        let problem = Problem {
            prior: &prior,
            rewards: &rewards,
            target: &target,
            data: None,
        };
        let objective = ObjectiveSpec::exact(ObjectiveKind::Klrl, Some(beta));
        let mut cfg = TrainConfig::new(20_000, 2.0);
        cfg.log_every = 1000;
        cfg.stop_when = Some(StopWhen::below(Metric::KlToTarget, 1e-10));
        let traj = train(prior.clone(), problem, &objective, &cfg)?;
        let last = traj.last();
        println!(
            "beta {beta}: step {:>5}  KL(pi, pi*) {:.2e}  J {:.8}  beta*log Z {:.8}  elbo gap {}",
            last.step,
            last.kl_to_target,
            last.objective,
            beta * target.log_z(),
            last.elbo_gap.map_or("-".into(), |g| format!("{g:.2e}")),
        );
    }
    Ok(())
}
