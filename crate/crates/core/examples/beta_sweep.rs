//! Tempering: how expected reward, divergence from the prior and entropy of
//! the Gibbs posterior move with β. Writes sweep.csv and sweep.svg.
//!
//! cargo run --example beta_sweep [OUT_DIR]

use std::path::{Path, PathBuf};

use klvi::cli::{cmd_sweep, ExperimentConfig};

fn main() -> klvi::Result<()> {
    let cfg = ExperimentConfig::load(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.json"),
    )?;
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let betas: Vec<f64> = (-8..=8).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
    let rows = cmd_sweep(&cfg, Some(&betas), &out)?;
    println!(
        "{:>10} {:>10} {:>12} {:>8}",
        "beta", "E[r]", "KL(pi*,pi0)", "H"
    );
    for r in &rows {
        println!(
            "{:>10.4} {:>10.5} {:>12.3e} {:>8.4}",
            r.beta, r.expected_reward, r.kl_to_prior, r.entropy
        );
    }
    println!("wrote {} and sweep.svg", out.join("sweep.csv").display());
    Ok(())
}
