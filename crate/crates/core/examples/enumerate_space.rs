//! Lists a small sequence space in index order with a composite reward.
//!
//! cargo run --example enumerate_space

use klvi::reward::argmax_set;
use klvi::{RewardFn, RewardSpec, SequenceSpace, Vocab};

fn main() -> klvi::Result<()> {
    let vocab = Vocab::with_eos_symbol(vec!["a", "b", "<eos>"], "<eos>")?;
    let space = SequenceSpace::new(vocab, 3)?;
    println!("{space}");

    let spec: RewardSpec = serde_json::from_str(
        r#"{"kind": "composite", "terms": [
            {"reward": {"kind": "contains", "substring": "ab", "bonus": 1.0}},
            {"reward": {"kind": "length-penalty", "c": 0.1}}]}"#,
    )?;
    let rewards = RewardFn::from_spec(&spec, &space)?.tabulate(&space)?;

    println!("{:>5}  {:<8} {:>7}", "index", "sequence", "reward");
    for (i, x) in space.enumerate().enumerate() {
        let shown = if x.is_empty() {
            "(empty)".to_string()
        } else {
            space.display(&x)
        };
        println!("{i:>5}  {shown:<8} {:>7.3}", rewards[i]);
    }
    let best: Vec<String> = argmax_set(&rewards)
        .into_iter()
        .map(|i| space.display(&space.sequence_at(i).unwrap()))
        .collect();
    println!("argmax: {best:?}");
    Ok(())
}
