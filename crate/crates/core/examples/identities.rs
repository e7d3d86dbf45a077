//! Checks the exact relations between the KL-regularised objective, the
//! Gibbs posterior and the ELBO on random policies.
//!
//! cargo run --example identities

use klvi::oracle::verify_identities;
use klvi::{PriorScheme, RewardFn, RewardSpec, SequenceSpace, TabularPolicy, Vocab};

fn main() -> klvi::Result<()> {
    let space = SequenceSpace::new(
        Vocab::with_eos_symbol(vec!["a", "b", "c", "<eos>"], "<eos>")?,
        3,
    )?;
    let prior = TabularPolicy::init_prior(
        &space,
        &PriorScheme::GaussianLogits {
            sigma: 1.0,
            seed: 7,
        },
    )?;
    let spec: RewardSpec = serde_json::from_str(
        r#"{"kind": "composite", "terms": [
            {"reward": {"kind": "token-count", "token": "c", "weight": 0.7}},
            {"reward": {"kind": "contains", "substring": "ab", "bonus": 1.5}}]}"#,
    )?;
    let rewards = RewardFn::from_spec(&spec, &space)?.tabulate(&space)?;
    println!("{space}");
    println!(
        "{:>5} {:>12} {:>12} {:>12} {:>12}",
        "beta", "affine KL", "reshaped", "gap vs KL", "ELBO > logZ"
    );
    for beta in [0.1, 0.5, 1.0, 2.0, 10.0] {
        let mut worst = [0.0f64; 4];
        for seed in 0..200 {
            let policy = TabularPolicy::init_prior(
                &space,
                &PriorScheme::GaussianLogits { sigma: 2.0, seed },
            )?;
            let r = verify_identities(&policy, &prior, &rewards, beta)?;
            for (w, v) in worst.iter_mut().zip([
                r.residual_affine_kl,
                r.residual_reshaped_reward,
                r.residual_elbo_gap_kl,
                r.elbo_gap_violation,
            ]) {
                *w = w.max(v);
            }
        }
        println!(
            "{beta:>5} {:>12.2e} {:>12.2e} {:>12.2e} {:>12.2e}",
            worst[0], worst[1], worst[2], worst[3]
        );
    }
    Ok(())
}
