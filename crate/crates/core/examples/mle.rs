//! Maximum-likelihood fitting of a tabular policy to a small dataset; the
//! optimum is the empirical distribution.
//!
//! cargo run --release --example mle

use klvi::objectives::{mean_log_likelihood, Problem};
use klvi::trainer::train;
use klvi::{
    Dataset, ObjectiveKind, ObjectiveSpec, SequenceSpace, TabularPolicy, TrainConfig, Vocab,
};

fn main() -> klvi::Result<()> {
    let space = SequenceSpace::new(Vocab::with_eos_symbol(vec!["a", "b", "<eos>"], "<eos>")?, 3)?;
    let texts: Vec<String> = ["ab", "ab", "ab", "ba", "a", "", "bab", "ab"]
        .map(String::from)
        .to_vec();
    let data = Dataset::parse(&space, &texts)?;
    let empirical = data.empirical(&space)?;
    let prior = TabularPolicy::uniform(space.clone());
    let rewards = vec![0.0; space.size()];
    let problem = Problem {
        prior: &prior,
        rewards: &rewards,
        target: &empirical,
        data: Some(&data),
    };

    let mut spec = ObjectiveSpec::exact(ObjectiveKind::Mle, None);
    spec.data = Some(texts);
    let mut cfg = TrainConfig::new(3000, 2.0);
    cfg.log_every = 500;
    let traj = train(prior.clone(), problem, &spec, &cfg)?;
    for row in &traj.rows {
        println!(
            "step {:>5}: mean log-lik {:.6}  KL(data, pi) {:.3e}",
            row.step, row.objective, row.fwd_kl_from_target
        );
    }
    println!("-H(data) = {:.6}", -empirical.entropy());
    let p = traj.policy.distribution();
    for (i, x) in space.enumerate().enumerate() {
        if empirical.probs()[i] > 0.0 || p[i] > 1e-3 {
            println!(
                "{:>6?} data {:.3}  model {:.4}",
                space.display(&x),
                empirical.probs()[i],
                p[i]
            );
        }
    }
    assert!((mean_log_likelihood(&traj.policy, &data) + empirical.entropy()).abs() < 1e-2);
    Ok(())
}
