//! Runs the three bundled dissociation configs (pure RL, KL-RL, GDC) on the
//! same instance and prints the outcome table; also writes it as CSV.
//!
//! cargo run --release --example dissociation [OUT_DIR]

use std::path::{Path, PathBuf};

use klvi::cli::{cmd_oracle, cmd_train, ExperimentConfig};

fn main() -> klvi::Result<()> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/dissociation");
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs/dissociation"));

    let klrl = ExperimentConfig::load(&configs.join("klrl.json"))?;
    let oracle = cmd_oracle(&klrl, &out.join("oracle"))?;
    println!("H(pi*) = {:.4}\n", oracle.entropy_of_posterior);

    let mut wtr = csv::Writer::from_path(out.join("dissociation.csv"))?;
    wtr.write_record([
        "objective",
        "steps",
        "entropy",
        "kl_to_target",
        "fwd_kl_from_target",
        "expected_reward",
    ])?;
    println!(
        "{:<8} {:>6} {:>8} {:>11} {:>11} {:>7}",
        "", "steps", "entropy", "KL(pi,pi*)", "KL(pi*,pi)", "E[r]"
    );
    for name in ["pure_rl", "klrl", "gdc"] {
        let cfg = ExperimentConfig::load(&configs.join(format!("{name}.json")))?;
        let traj = cmd_train(&cfg, &out.join(name))?;
        let r = traj.last();
        println!(
            "{name:<8} {:>6} {:>8.4} {:>11.3e} {:>11.3e} {:>7.4}",
            r.step, r.entropy, r.kl_to_target, r.fwd_kl_from_target, r.expected_reward
        );
        wtr.write_record([
            name.to_string(),
            r.step.to_string(),
            klvi::numeric::fmt_g17(r.entropy),
            klvi::numeric::fmt_g17(r.kl_to_target),
            klvi::numeric::fmt_g17(r.fwd_kl_from_target),
            klvi::numeric::fmt_g17(r.expected_reward),
        ])?;
    }
    wtr.flush().map_err(|e| klvi::Error::Csv(e.into()))?;
    println!("\nwrote {}", out.join("dissociation.csv").display());
    Ok(())
}
