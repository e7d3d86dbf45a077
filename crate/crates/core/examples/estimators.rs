//! Monte-Carlo gradient estimators against the exact gradient g*: spread,
//! distance of the average of 400 estimates from g*, and the effect of the
//! batch-mean baseline and of self-normalised importance weights.
//!
//! cargo run --release --example estimators

use klvi::objectives::{estimate_gradient, Baseline, GdcWeighting, Problem};
use klvi::oracle::gibbs_posterior;
use klvi::{
    Estimator, ObjectiveKind, ObjectiveSpec, PriorScheme, RewardFn, RewardSpec, SequenceSpace,
    TabularPolicy, Vocab,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> klvi::Result<()> {
    let space = SequenceSpace::new(Vocab::with_eos_symbol(vec!["a", "b", "<eos>"], "<eos>")?, 3)?;
    let prior = TabularPolicy::init_prior(
        &space,
        &PriorScheme::GaussianLogits {
            sigma: 1.0,
            seed: 7,
        },
    )?;
    let policy = TabularPolicy::init_prior(
        &space,
        &PriorScheme::GaussianLogits {
            sigma: 1.0,
            seed: 11,
        },
    )?;
    let spec: RewardSpec = serde_json::from_str(
        r#"{"kind": "composite", "terms": [
            {"reward": {"kind": "contains", "substring": "ab", "bonus": 1.0}},
            {"reward": {"kind": "length-penalty", "c": 0.1}}]}"#,
    )?;
    let rewards = RewardFn::from_spec(&spec, &space)?.tabulate(&space)?;
    let target = gibbs_posterior(&prior, &rewards, 1.0)?;
    let problem = Problem {
        prior: &prior,
        rewards: &rewards,
        target: &target,
        data: None,
    };

    println!(
        "{:<22} {:>6} {:>14} {:>12} {:>12}",
        "estimator", "batch", "E|g - mean|^2", "|mean - g*|", "noise floor"
    );
    let cases = [
        (
            "pure RL",
            ObjectiveKind::PureRl,
            Baseline::None,
            GdcWeighting::ExactZ,
        ),
        (
            "pure RL + baseline",
            ObjectiveKind::PureRl,
            Baseline::BatchMean,
            GdcWeighting::ExactZ,
        ),
        (
            "KL-RL",
            ObjectiveKind::Klrl,
            Baseline::None,
            GdcWeighting::ExactZ,
        ),
        (
            "KL-RL + baseline",
            ObjectiveKind::Klrl,
            Baseline::BatchMean,
            GdcWeighting::ExactZ,
        ),
        (
            "GDC exact Z",
            ObjectiveKind::Gdc,
            Baseline::None,
            GdcWeighting::ExactZ,
        ),
        (
            "GDC self-normalised",
            ObjectiveKind::Gdc,
            Baseline::None,
            GdcWeighting::SelfNormalized,
        ),
    ];
    for (name, kind, baseline, weighting) in cases {
        let exact_spec = ObjectiveSpec::exact(kind, Some(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let exact = estimate_gradient(&policy, &exact_spec, &problem, &mut rng)?.grad;
        for batch in [8, 64, 512] {
            let spec = exact_spec
                .clone()
                .with_estimator(Estimator::MonteCarlo { batch, baseline })
                .with_weighting(weighting);
            let draws: Vec<_> = (0..400)
                .map(|_| estimate_gradient(&policy, &spec, &problem, &mut rng).map(|e| e.grad))
                .collect::<klvi::Result<_>>()?;
            let mut mean = policy.zero_gradient();
            for g in &draws {
                mean.add_scaled(g, 1.0 / draws.len() as f64);
            }
            let mut bias = mean.clone();
            bias.add_scaled(&exact, -1.0);
            let spread = draws
                .iter()
                .map(|g| {
                    let mut d = g.clone();
                    d.add_scaled(&mean, -1.0);
                    d.norm().powi(2)
                })
                .sum::<f64>()
                / draws.len() as f64;
            // an unbiased estimator leaves |mean - g*| at the noise floor
            let floor = (spread / draws.len() as f64).sqrt();
            println!(
                "{name:<22} {batch:>6} {spread:>14.3e} {:>12.2e} {floor:>12.2e}",
                bias.norm()
            );
        }
    }
    Ok(())
}
