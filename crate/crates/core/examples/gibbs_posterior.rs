//! The exact Gibbs posterior π* ∝ π0·exp(r/β) on the two-sequence instance
//! and on the default 15-sequence instance.
//!
//! cargo run --example gibbs_posterior

use klvi::oracle::{gibbs_posterior, kl};
use klvi::{PriorScheme, RewardFn, RewardSpec, SequenceSpace, TabularPolicy, Vocab};

fn main() -> klvi::Result<()> {
    // "" and "a" under a uniform prior, r = (ln 3, 0): Z = 2, π* = (3/4, 1/4)
    let micro = SequenceSpace::new(Vocab::with_eos_symbol(vec!["a", "<eos>"], "<eos>")?, 1)?;
    let prior = TabularPolicy::uniform(micro);
    let post = gibbs_posterior(&prior, &[3f64.ln(), 0.0], 1.0)?;
    println!(
        "micro: Z = {}, posterior = {:?}",
        post.log_z().exp(),
        post.probs()
    );

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
    let p0 = prior.distribution();

    println!(
        "\n{:<8} {:>8} {:>8} {:>8} {:>8}",
        "sequence", "prior", "b=0.1", "b=1", "b=10"
    );
    let posts: Vec<_> = [0.1, 1.0, 10.0]
        .iter()
        .map(|&b| gibbs_posterior(&prior, &rewards, b))
        .collect::<klvi::Result<_>>()?;
    for (i, x) in space.enumerate().enumerate() {
        print!("{:<8} {:>8.4}", format!("{:?}", space.display(&x)), p0[i]);
        for post in &posts {
            print!(" {:>8.4}", post.probs()[i]);
        }
        println!();
    }
    for post in &posts {
        println!(
            "beta {:>4}: log Z = {:.6}, H(pi*) = {:.4}, KL(pi*, pi0) = {:.4}",
            post.beta(),
            post.log_z(),
            post.entropy(),
            kl(post.probs(), &p0)?
        );
    }
    Ok(())
}
