//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::*;
use klvi::objectives::{estimate_gradient, exact_objective, Baseline, GdcWeighting, Problem};
use klvi::oracle::gibbs_posterior;
use klvi::{
    Dataset, Estimator, ObjectiveKind, ObjectiveSpec, PriorScheme, RewardFn, RewardSpec,
    SequenceSpace, TabularPolicy, Vocab,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Commands run by the criteria, replayed by the determinism check.
struct Ctx {
    root: PathBuf,
    runs: Vec<(String, PathBuf, Vec<String>, String)>,
}

impl Ctx {
    fn run(&mut self, cmd: &str, cfg: &str, name: &str, extra: &[&str]) -> (Run, PathBuf) {
        let out = self.root.join("first").join(name);
        let run = klvi(cmd, &config(cfg), &out, extra);
        self.runs.push((
            cmd.into(),
            config(cfg),
            extra.iter().map(|s| s.to_string()).collect(),
            name.into(),
        ));
        (run, out)
    }
}

// ---------------------------------------------------------------------------
// independent reference values for the default instance

fn default_space() -> SequenceSpace {
    SequenceSpace::new(
        Vocab::with_eos_symbol(vec!["a", "b", "<eos>"], "<eos>").unwrap(),
        3,
    )
    .unwrap()
}

fn default_prior_snapshot() -> Value {
    let prior = TabularPolicy::init_prior(
        &default_space(),
        &PriorScheme::GaussianLogits {
            sigma: 1.0,
            seed: 7,
        },
    )
    .unwrap();
    serde_json::to_value(prior.to_snapshot()).unwrap()
}

/// contains "ab" → +1, minus 0.1 per token, on the brute-force enumeration.
fn default_rewards_brute() -> Vec<f64> {
    brute_sequences(2, 3)
        .iter()
        .map(|x| {
            let s: String = x.iter().map(|&t| if t == 0 { 'a' } else { 'b' }).collect();
            (if s.contains("ab") { 1.0 } else { 0.0 }) - 0.1 * s.len() as f64
        })
        .collect()
}

fn summary_f64(summary: &Value, key: &str) -> f64 {
    summary[key]
        .as_f64()
        .unwrap_or_else(|| panic!("summary.{key} missing"))
}

// ---------------------------------------------------------------------------
// criteria

fn identity_suite(ctx: &mut Ctx) -> Outcome {
    let (run, out) = ctx.run("verify", "default.json", "verify", &[]);
    ensure!(run.code == 0, "verify exited {}: {}", run.code, run.stderr);
    let v = read_json(&out.join("verify.json"));
    ensure!(
        v["random_policies"].as_u64() == Some(100),
        "expected 100 random policies"
    );
    let betas: Vec<f64> = v["per_beta"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["beta"].as_f64().unwrap())
        .collect();
    ensure!(betas == [0.1, 1.0, 10.0], "betas checked: {betas:?}");
    let mut worst: f64 = 0.0;
    for key in [
        "max_residual_eq7",
        "max_residual_eq3_eq4",
        "max_residual_elbo_gap_kl",
        "max_residual_elbo_objective",
    ] {
        let r = v[key].as_f64().unwrap();
        ensure!(r < 1e-8, "{key} = {r:e}");
        worst = worst.max(r);
    }
    let violation = v["max_elbo_gap_violation"].as_f64().unwrap();
    ensure!(violation <= 1e-9, "ELBO exceeds log Z by {violation:e}");
    for b in v["per_beta"].as_array().unwrap() {
        let kl = b["at_target"]["kl_to_target"].as_f64().unwrap();
        ensure!(kl.abs() < 1e-10, "KL at the posterior itself is {kl:e}");
    }

    let (bad, _) = ctx.run(
        "verify",
        "default.json",
        "verify_tampered",
        &["--log-z-offset", "0.1"],
    );
    ensure!(
        bad.code == 5,
        "tampered log Z exited {} instead of 5",
        bad.code
    );
    Ok(format!(
        "max residual {worst:.1e}, tampered log Z -> exit 5"
    ))
}

fn gibbs_convergence(ctx: &mut Ctx) -> Outcome {
    let (run, out) = ctx.run("train", "klrl.json", "klrl", &[]);
    ensure!(run.code == 0, "train exited {}: {}", run.code, run.stderr);
    let s = read_json(&out.join("summary.json"));
    let steps = s["step"].as_u64().unwrap();
    ensure!(steps <= 5000, "ran {steps} steps");
    let kl = summary_f64(&s, "kl_to_target");
    ensure!(kl < 1e-6, "summary kl_to_target {kl:e}");

    // independent check from the saved policy
    let p = brute_distribution(&read_json(&out.join("policy.json")));
    let prior = brute_distribution(&default_prior_snapshot());
    let (target, log_z) = brute_posterior(&prior, &default_rewards_brute(), 1.0);
    let kl_brute = brute_kl(&p, &target);
    ensure!(kl_brute < 1e-6, "recomputed KL {kl_brute:e}");
    let j: f64 = p
        .iter()
        .zip(default_rewards_brute())
        .map(|(pi, r)| pi * r)
        .sum::<f64>()
        - brute_kl(&p, &prior);
    let gap = (j - log_z).abs();
    ensure!(gap < 1e-5, "|J - beta log Z| = {gap:e}");
    let reported = (summary_f64(&s, "objective") - summary_f64(&s, "target_log_Z")).abs();
    ensure!(reported < 1e-5, "reported |J - beta log Z| = {reported:e}");
    Ok(format!(
        "step {steps}: KL {kl_brute:.2e}, |J - log Z| {gap:.2e}"
    ))
}

fn collapse(ctx: &mut Ctx) -> Outcome {
    let (run, out) = ctx.run("train", "pure_rl.json", "pure_rl", &[]);
    ensure!(run.code == 0, "train exited {}: {}", run.code, run.stderr);
    let s = read_json(&out.join("summary.json"));
    let steps = s["step"].as_u64().unwrap();
    let p = brute_distribution(&read_json(&out.join("policy.json")));
    // table reward: "ab" is the unique maximiser
    let ab = brute_sequences(2, 3)
        .iter()
        .position(|x| x == &[0, 1])
        .unwrap();
    let h = brute_entropy(&p);
    ensure!(steps <= 5000, "ran {steps} steps");
    ensure!(h < 0.01, "entropy {h}");
    let mass = p[ab];
    ensure!(mass > 0.999, "argmax mass {mass}");
    ensure!(
        (summary_f64(&s, "argmax_mass") - mass).abs() < 1e-9,
        "summary argmax_mass disagrees"
    );

    let (run, out) = ctx.run("train", "pure_rl_tied.json", "pure_rl_tied", &[]);
    ensure!(
        run.code == 0,
        "tied train exited {}: {}",
        run.code,
        run.stderr
    );
    let p = brute_distribution(&read_json(&out.join("policy.json")));
    let seqs = brute_sequences(2, 3);
    let tied = [
        seqs.iter().position(|x| x == &[0, 1]).unwrap(),
        seqs.iter().position(|x| x == &[1, 0]).unwrap(),
    ];
    let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 1e-6).collect();
    ensure!(
        support.iter().all(|i| tied.contains(i)),
        "support {support:?} not inside argmax set {tied:?}"
    );
    Ok(format!(
        "unique: step {steps}, entropy {h:.2e}, argmax mass {mass:.6}; tied: support {support:?}"
    ))
}

fn dissociation(ctx: &mut Ctx) -> Outcome {
    let mut table = Vec::new();
    let mut finals = Vec::new();
    for name in ["pure_rl", "klrl", "gdc"] {
        let (run, out) = ctx.run(
            "train",
            &format!("dissociation/{name}.json"),
            &format!("dissociation_{name}"),
            &[],
        );
        ensure!(run.code == 0, "{name} exited {}: {}", run.code, run.stderr);
        let s = read_json(&out.join("summary.json"));
        finals.push(s);
    }
    let (run, oracle_out) = ctx.run(
        "oracle",
        "dissociation/klrl.json",
        "dissociation_oracle",
        &[],
    );
    ensure!(run.code == 0, "oracle exited {}", run.code);
    let h_star = read_json(&oracle_out.join("oracle.json"))["entropy_of_posterior"]
        .as_f64()
        .unwrap();
    let prior = brute_distribution(&default_prior_snapshot());
    let (target, _) = brute_posterior(&prior, &default_rewards_brute(), 1.0);
    ensure!(
        (h_star - brute_entropy(&target)).abs() < 1e-12,
        "H(pi*) disagrees with brute force"
    );

    let gdc = &finals[2];
    let gdc_cfg = &gdc["config"]["objective"];
    ensure!(
        gdc_cfg["estimator"]["type"] == "mc"
            && gdc_cfg["estimator"]["batch"] == 512
            && gdc_cfg["gdc_weighting"] == "exact-z",
        "GDC config is not exact-Z importance sampling with batch 512"
    );
    let gdc_steps = gdc["step"].as_u64().unwrap();
    let fwd = summary_f64(gdc, "fwd_kl_from_target");
    let h_pure = summary_f64(&finals[0], "entropy");
    let h_klrl = summary_f64(&finals[1], "entropy");
    for (name, s) in ["pure-rl", "klrl", "gdc"].iter().zip(&finals) {
        table.push(format!(
            "    {name:<8} entropy {:.4}  KL(pi,pi*) {:.3e}  KL(pi*,pi) {:.3e}  E[r] {:.4}",
            summary_f64(s, "entropy"),
            summary_f64(s, "kl_to_target"),
            summary_f64(s, "fwd_kl_from_target"),
            summary_f64(s, "expected_reward"),
        ));
    }
    println!("    H(pi*) = {h_star:.4}");
    for line in &table {
        println!("{line}");
    }
    ensure!(gdc_steps <= 20_000, "GDC ran {gdc_steps} steps");
    ensure!(fwd < 1e-3, "GDC KL(pi*, pi) = {fwd:e}");
    ensure!(h_pure < 0.05, "pure RL entropy {h_pure}");
    ensure!(
        (h_klrl - h_star).abs() < 0.05,
        "KL-RL entropy {h_klrl} vs H(pi*) {h_star}"
    );
    Ok(format!(
        "GDC fwd KL {fwd:.2e} at step {gdc_steps}; entropies pure {h_pure:.4}, KL-RL {h_klrl:.4}, H(pi*) {h_star:.4}"
    ))
}

fn default_problem_parts() -> (SequenceSpace, TabularPolicy, Vec<f64>) {
    let space = default_space();
    let prior = TabularPolicy::init_prior(
        &space,
        &PriorScheme::GaussianLogits {
            sigma: 1.0,
            seed: 7,
        },
    )
    .unwrap();
    let spec: RewardSpec =
        serde_json::from_value(read_json(&config("default.json"))["reward"].clone()).unwrap();
    let rewards = RewardFn::from_spec(&spec, &space)
        .unwrap()
        .tabulate(&space)
        .unwrap();
    (space, prior, rewards)
}

fn unbiasedness(_: &mut Ctx) -> Outcome {
    const BATCHES: usize = 200;
    const BATCH: usize = 512;
    let (space, prior, rewards) = default_problem_parts();
    let target = gibbs_posterior(&prior, &rewards, 1.0).unwrap();
    let policy = TabularPolicy::init_prior(
        &space,
        &PriorScheme::GaussianLogits {
            sigma: 1.0,
            seed: 11,
        },
    )
    .unwrap();
    let problem = Problem {
        prior: &prior,
        rewards: &rewards,
        target: &target,
        data: None,
    };
    let cases = [
        ("pure-rl", ObjectiveKind::PureRl, Baseline::None),
        (
            "pure-rl+baseline",
            ObjectiveKind::PureRl,
            Baseline::BatchMean,
        ),
        ("klrl", ObjectiveKind::Klrl, Baseline::None),
        ("klrl+baseline", ObjectiveKind::Klrl, Baseline::BatchMean),
        ("gdc-exact-z", ObjectiveKind::Gdc, Baseline::None),
    ];
    let mut summary = Vec::new();
    for (i, (name, kind, baseline)) in cases.into_iter().enumerate() {
        let exact_spec = ObjectiveSpec::exact(kind, Some(1.0));
        let exact = estimate_gradient(
            &policy,
            &exact_spec,
            &problem,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap()
        .grad;
        let spec = exact_spec
            .with_estimator(Estimator::MonteCarlo {
                batch: BATCH,
                baseline,
            })
            .with_weighting(GdcWeighting::ExactZ);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let n = exact.as_slice().len();
        let mut sum = vec![0.0; n];
        let mut sum_sq = vec![0.0; n];
        for _ in 0..BATCHES {
            let g = estimate_gradient(&policy, &spec, &problem, &mut rng)
                .unwrap()
                .grad;
            for (k, v) in g.as_slice().iter().enumerate() {
                sum[k] += v;
                sum_sq[k] += v * v;
            }
        }
        let b = BATCHES as f64;
        let within = (0..n)
            .filter(|&k| {
                let mean = sum[k] / b;
                let var = ((sum_sq[k] - b * mean * mean) / (b - 1.0)).max(0.0);
                let diff = mean - exact.as_slice()[k];
                if var == 0.0 {
                    diff.abs() < 1e-12
                } else {
                    (diff / (var / b).sqrt()).abs() <= 4.0
                }
            })
            .count();
        let frac = within as f64 / n as f64;
        ensure!(
            frac >= 0.95,
            "{name}: only {within}/{n} coordinates within 4 standard errors"
        );
        summary.push(format!("{name} {within}/{n}"));
    }
    Ok(summary.join(", "))
}

fn gradient_check(_: &mut Ctx) -> Outcome {
    const H: f64 = 1e-6;
    let (space, prior, rewards) = default_problem_parts();
    let data = Dataset::parse(
        &space,
        &["ab", "ab", "ba", "", "bab", "a"].map(String::from),
    )
    .unwrap();
    let mut worst = Vec::new();
    for (kind, beta) in [
        (ObjectiveKind::PureRl, None),
        (ObjectiveKind::Klrl, Some(0.7)),
        (ObjectiveKind::Gdc, Some(0.7)),
        (ObjectiveKind::Mle, None),
    ] {
        let spec = ObjectiveSpec::exact(kind, beta);
        let target = if kind == ObjectiveKind::Mle {
            data.empirical(&space).unwrap()
        } else {
            gibbs_posterior(&prior, &rewards, spec.target_beta()).unwrap()
        };
        let problem = Problem {
            prior: &prior,
            rewards: &rewards,
            target: &target,
            data: Some(&data),
        };
        let mut max_rel: f64 = 0.0;
        for seed in 0..100u64 {
            let mut policy = TabularPolicy::init_prior(
                &space,
                &PriorScheme::GaussianLogits {
                    sigma: 1.5,
                    seed: 500 + seed,
                },
            )
            .unwrap();
            let analytic =
                estimate_gradient(&policy, &spec, &problem, &mut ChaCha8Rng::seed_from_u64(0))
                    .unwrap()
                    .grad;
            let (rows, cols) = (policy.n_rows(), policy.n_cols());
            let mut fd = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    let orig = policy.logit(r, c);
                    policy.set_logit(r, c, orig + H);
                    let up = exact_objective(&policy, &spec, &problem).unwrap();
                    policy.set_logit(r, c, orig - H);
                    let down = exact_objective(&policy, &spec, &problem).unwrap();
                    policy.set_logit(r, c, orig);
                    fd.push((up - down) / (2.0 * H));
                }
            }
            let a = analytic.as_slice();
            let diff: f64 = a
                .iter()
                .zip(&fd)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = diff / norm(a).max(norm(&fd)).max(1e-300);
            ensure!(rel < 1e-4, "{kind:?} seed {seed}: relative error {rel:e}");
            max_rel = max_rel.max(rel);
        }
        worst.push(format!("{kind:?} {max_rel:.1e}"));
    }
    Ok(format!("max relative error: {}", worst.join(", ")))
}

fn tempering(ctx: &mut Ctx) -> Outcome {
    let (run, out) = ctx.run(
        "sweep",
        "default.json",
        "sweep",
        &["--betas", "0.1,0.3,1,3,10"],
    );
    ensure!(run.code == 0, "sweep exited {}: {}", run.code, run.stderr);
    let (header, rows) = read_csv(&out.join("sweep.csv"));
    ensure!(
        header == ["beta", "expected_reward", "kl_to_prior", "entropy"],
        "header {header:?}"
    );
    ensure!(rows.len() == 5, "{} rows", rows.len());
    let er = f64_column(&rows, 1);
    let kl = f64_column(&rows, 2);
    ensure!(
        er.windows(2).all(|w| w[1] <= w[0]),
        "expected_reward not non-increasing: {er:?}"
    );
    ensure!(
        kl.windows(2).all(|w| w[1] <= w[0]),
        "kl_to_prior not non-increasing: {kl:?}"
    );
    let svg = fs::read_to_string(out.join("sweep.svg")).unwrap();
    ensure!(
        svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"),
        "malformed SVG"
    );

    let (run, out) = ctx.run("sweep", "default.json", "sweep_cold", &["--betas", "1e6"]);
    ensure!(run.code == 0, "sweep exited {}", run.code);
    let (_, rows) = read_csv(&out.join("sweep.csv"));
    let cold = f64_column(&rows, 2)[0];
    ensure!(cold < 1e-9, "kl_to_prior at beta 1e6 is {cold:e}");
    Ok(format!(
        "E[r] {:.4} -> {:.4}, KL {:.4} -> {:.2e}; beta 1e6 KL {cold:.1e}",
        er[0], er[4], kl[0], kl[4]
    ))
}

fn micro_instance(ctx: &mut Ctx) -> Outcome {
    let (run, out) = ctx.run("oracle", "micro.json", "micro", &[]);
    ensure!(run.code == 0, "oracle exited {}: {}", run.code, run.stderr);
    let o = read_json(&out.join("oracle.json"));
    let z = o["log_Z"].as_f64().unwrap().exp();
    let post = f64_array(&o["posterior"]);
    ensure!((z - 2.0).abs() < 1e-12, "Z = {z}");
    ensure!(post.len() == 2, "posterior has {} entries", post.len());
    ensure!(
        (post[0] - 0.75).abs() < 1e-12 && (post[1] - 0.25).abs() < 1e-12,
        "posterior {post:?}"
    );
    Ok(format!("Z = {z}, posterior = {post:?}"))
}

fn determinism(ctx: &mut Ctx) -> Outcome {
    let (enum_run, _) = ctx.run("enumerate", "default.json", "enumerate", &[]);
    ensure!(enum_run.code == 0, "enumerate exited {}", enum_run.code);
    let mut files = 0;
    for (cmd, cfg, extra, name) in &ctx.runs {
        let first = ctx.root.join("first").join(name);
        let second = ctx.root.join("second").join(name);
        let extra: Vec<&str> = extra.iter().map(String::as_str).collect();
        klvi(cmd, cfg, &second, &extra);
        let mut names: Vec<_> = fs::read_dir(&first)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        ensure!(!names.is_empty(), "{name}: no output files");
        for f in names {
            let a = fs::read(first.join(&f)).unwrap();
            let b = fs::read(second.join(&f)).map_err(|e| format!("{name}/{f:?}: {e}"))?;
            ensure!(
                a == b,
                "{name}/{}: outputs differ between runs",
                f.to_string_lossy()
            );
            files += 1;
        }
    }
    Ok(format!(
        "{} commands, {files} files byte-identical",
        ctx.runs.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut ctx = Ctx {
        root: tmp.path().to_path_buf(),
        runs: Vec::new(),
    };
    type Criterion = fn(&mut Ctx) -> Outcome;
    let criteria: [(&str, Duration, Criterion); 9] = [
        ("identity suite", Duration::from_secs(5), identity_suite),
        (
            "Gibbs-posterior convergence",
            Duration::from_secs(10),
            gibbs_convergence,
        ),
        ("distribution collapse", Duration::from_secs(10), collapse),
        (
            "forward-KL dissociation",
            Duration::from_secs(60),
            dissociation,
        ),
        (
            "estimator unbiasedness",
            Duration::from_secs(30),
            unbiasedness,
        ),
        (
            "gradient correctness",
            Duration::from_secs(30),
            gradient_check,
        ),
        ("tempering monotonicity", Duration::from_secs(2), tempering),
        (
            "worked micro-instance",
            Duration::from_secs(1),
            micro_instance,
        ),
        ("determinism", Duration::from_secs(120), determinism),
    ];
    let mut failures = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut ctx)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{}] {name} ({elapsed:.2?}): {detail}", i + 1);
            }
        }
    }
    println!("{} of 9 acceptance criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
