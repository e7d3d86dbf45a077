//! Helpers shared by the integration tests: running the binary, reading its
//! outputs, and brute-force reference computations that do not go through
//! the library's enumeration or oracle code.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs `klvi <cmd> --config <config> --out <out> [extra..]`.
pub fn klvi(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Run {
    let output = Command::new(env!("CARGO_BIN_EXE_klvi"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("spawn klvi");
    Run {
        code: output.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

pub fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Header and rows of a CSV file, as strings.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

pub fn f64_column(rows: &[Vec<String>], col: usize) -> Vec<f64> {
    rows.iter().map(|r| r[col].parse().unwrap()).collect()
}

pub fn f64_array(v: &Value) -> Vec<f64> {
    v.as_array()
        .expect("array")
        .iter()
        .map(|x| x.as_f64().expect("number"))
        .collect()
}

/// Sequences over `n` content ranks up to length `max_len`, shortest first
/// and lexicographic within a length.
pub fn brute_sequences(n: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    let mut level: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        level = level
            .iter()
            .flat_map(|p| {
                (0..n).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
        all.extend(level.iter().cloned());
    }
    all
}

/// A policy snapshot (`{vocab: {symbols, eos}, max_len, logits}`) turned into
/// a probability per sequence by multiplying softmax factors directly.
pub fn brute_distribution(snapshot: &Value) -> Vec<f64> {
    let symbols = snapshot["vocab"]["symbols"].as_array().unwrap();
    let eos_symbol = snapshot["vocab"]["eos"].as_str().unwrap();
    let m = symbols.len();
    let eos = symbols.iter().position(|s| s == eos_symbol).unwrap();
    let content: Vec<usize> = (0..m).filter(|&t| t != eos).collect();
    let max_len = snapshot["max_len"].as_u64().unwrap() as usize;
    let logits = f64_array(&snapshot["logits"]);
    let seqs = brute_sequences(content.len(), max_len);
    let index_of = |x: &[usize]| seqs.iter().position(|s| s == x).unwrap();
    let prob = |row: usize, token: usize| {
        let l = &logits[row * m..(row + 1) * m];
        let mx = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = l.iter().map(|v| (v - mx).exp()).sum();
        (l[token] - mx).exp() / z
    };
    seqs.iter()
        .map(|x| {
            let mut p = 1.0;
            for k in 0..x.len() {
                p *= prob(index_of(&x[..k]), content[x[k]]);
            }
            if x.len() < max_len {
                p *= prob(index_of(x), eos);
            }
            p
        })
        .collect()
}

/// π0·exp(r/β) normalised, and log Z, by direct summation.
pub fn brute_posterior(prior: &[f64], rewards: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let w: Vec<f64> = prior
        .iter()
        .zip(rewards)
        .map(|(p, r)| p * (r / beta).exp())
        .collect();
    let z: f64 = w.iter().sum();
    (w.iter().map(|v| v / z).collect(), z.ln())
}

pub fn brute_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub fn brute_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|a| **a > 0.0)
        .map(|a| a * a.ln())
        .sum::<f64>()
}
