//! Pure reward maximisation drives the policy to a point mass on the best
//! sequence, while KL-regularised training keeps the posterior's spread.
//!
//! cargo run --release --example distribution_collapse

use klvi::objectives::Problem;
use klvi::oracle::gibbs_posterior;
use klvi::trainer::{collapse_report, train};
use klvi::{
    ObjectiveKind, ObjectiveSpec, PriorScheme, SequenceSpace, TabularPolicy, TrainConfig, Vocab,
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
    let rewards: Vec<f64> = space
        .enumerate()
        .map(|x| match space.display(&x).as_str() {
            "ab" => 1.0,
            "bab" => 0.6,
            "ba" => 0.5,
            "a" => 0.3,
            _ => 0.0,
        })
        .collect();
    let target = gibbs_posterior(&prior, &rewards, 1.0)?;
    let problem = Problem {
        prior: &prior,
        rewards: &rewards,
        target: &target,
        data: None,
    };

    let mut cfg = TrainConfig::new(5000, 4.0);
    cfg.log_every = 500;
    for (name, spec) in [
        ("pure RL", ObjectiveSpec::exact(ObjectiveKind::PureRl, None)),
        (
            "KL-RL",
            ObjectiveSpec::exact(ObjectiveKind::Klrl, Some(1.0)),
        ),
    ] {
        let traj = train(prior.clone(), problem, &spec, &cfg)?;
        println!("{name}");
        println!(
            "  {:>5} {:>9} {:>11} {:>8}",
            "step", "entropy", "argmax mass", "E[r]"
        );
        for row in &traj.rows {
            println!(
                "  {:>5} {:>9.5} {:>11.6} {:>8.4}",
                row.step, row.entropy, row.argmax_mass, row.expected_reward
            );
        }
        let report = collapse_report(&traj.policy, &rewards)?;
        println!("  final: {report:?}\n");
    }
    println!("H(pi*) = {:.5}", target.entropy());
    Ok(())
}
