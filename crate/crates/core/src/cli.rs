//! The `klvi` command line: one JSON config drives every command.
//!
//! ```text
//! klvi enumerate --config exp.json [--out DIR]
//! klvi oracle    --config exp.json [--out DIR]
//! klvi train     --config exp.json [--out DIR] [--seed N]
//! klvi verify    --config exp.json [--out DIR]
//! klvi sweep     --config exp.json [--out DIR] [--betas 0.1,1,10]
//! ```
//!
//! Exit codes: 0 success, 2 invalid config or I/O failure, 3 stop condition
//! unmet, 4 numerical abort, 5 identity verification failure.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::numeric::fmt_g17;
use crate::objectives::{Dataset, ObjectiveKind, ObjectiveSpec, Problem};
use crate::oracle::{gibbs_posterior, identity_report, IdentityReport, TargetDistribution};
use crate::policy::{PriorScheme, TabularPolicy};
use crate::reward::{argmax_set, RewardFn, RewardSpec};
use crate::seqspace::{SequenceSpace, Vocab, VocabSpec};
use crate::trainer::{beta_sweep, train, MetricsRow, SweepRow, TrainConfig, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STOP_UNMET: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IDENTITY: i32 = 5;

/// Equality residuals must stay below this for `verify` to pass.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;
/// Allowed amount by which the ELBO may exceed log Z.
pub const ELBO_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_SWEEP_BETAS: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 10.0];
pub const DEFAULT_VERIFY_BETAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub symbols: Vec<String>,
    pub eos: String,
    pub max_len: usize,
}

fn default_policies() -> usize {
    100
}

fn default_sigma() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Number of random policies checked per β.
    #[serde(default = "default_policies")]
    pub policies: usize,
    /// Standard deviation of their logits.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            policies: default_policies(),
            sigma: default_sigma(),
            seed: 0,
            betas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
}

/// The single JSON document behind every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceConfig,
    #[serde(default = "uniform_prior")]
    pub prior: PriorScheme,
    pub reward: RewardSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn uniform_prior() -> PriorScheme {
    PriorScheme::UniformLogits
}

/// A config resolved into the objects the commands work on.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub space: SequenceSpace,
    pub prior: TabularPolicy,
    pub reward: RewardFn,
    pub rewards: Vec<f64>,
}

impl ExperimentConfig {
    /// Reads a config; a relative prior file path is taken relative to the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: Self = serde_json::from_str(&text)?;
        if let PriorScheme::File { path: prior } = &mut config.prior {
            if prior.is_relative() {
                if let Some(dir) = path.parent() {
                    *prior = dir.join(&*prior);
                }
            }
        }
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Validates every section and builds space, prior and tabulated reward.
    pub fn build(&self) -> Result<Experiment> {
        let vocab = Vocab::try_from(VocabSpec {
            symbols: self.space.symbols.clone(),
            eos: self.space.eos.clone(),
        })?;
        let space = SequenceSpace::new(vocab, self.space.max_len)?;
        let prior = TabularPolicy::init_prior(&space, &self.prior)?;
        let reward = RewardFn::from_spec(&self.reward, &space)?;
        let rewards = reward.tabulate(&space)?;
        if let Some(objective) = &self.objective {
            objective.validate()?;
        }
        if let Some(train) = &self.train {
            train.validate()?;
        }
        Ok(Experiment {
            space,
            prior,
            reward,
            rewards,
        })
    }

    fn objective(&self) -> Result<&ObjectiveSpec> {
        self.objective
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config has no objective section".into()))
    }

    /// β used by `oracle`: the objective's β, or 1.
    pub fn beta(&self) -> f64 {
        self.objective
            .as_ref()
            .map_or(1.0, ObjectiveSpec::target_beta)
    }
}

// ---------------------------------------------------------------------------
// output helpers

/// Pretty JSON whose floats use 17 significant digits; non-finite values
/// become `null`.
struct G17Formatter(PrettyFormatter<'static>);

impl Formatter for G17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            w.write_all(fmt_g17(value).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialises `value` as pretty JSON with 17-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, G17Formatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn csv_float(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_default()
}

pub const SEQUENCES_HEADER: [&str; 3] = ["index", "sequence", "reward"];
pub const METRICS_HEADER: [&str; 11] = [
    "step",
    "objective",
    "expected_reward",
    "kl_to_prior",
    "kl_to_target",
    "fwd_kl_from_target",
    "entropy",
    "elbo_gap",
    "argmax_mass",
    "support_size",
    "max_prob",
];
pub const SWEEP_HEADER: [&str; 4] = ["beta", "expected_reward", "kl_to_prior", "entropy"];

fn csv_table<const N: usize>(
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv fields are UTF-8"))
}

pub fn sequences_csv(space: &SequenceSpace, rewards: &[f64]) -> Result<String> {
    csv_table(
        SEQUENCES_HEADER,
        space
            .enumerate()
            .enumerate()
            .map(|(i, x)| [i.to_string(), space.display(&x), fmt_g17(rewards[i])]),
    )
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    csv_table(
        METRICS_HEADER,
        rows.iter().map(|r| {
            [
                r.step.to_string(),
                fmt_g17(r.objective),
                fmt_g17(r.expected_reward),
                fmt_g17(r.kl_to_prior),
                fmt_g17(r.kl_to_target),
                fmt_g17(r.fwd_kl_from_target),
                fmt_g17(r.entropy),
                csv_float(r.elbo_gap),
                fmt_g17(r.argmax_mass),
                r.support_size.to_string(),
                fmt_g17(r.max_prob),
            ]
        }),
    )
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    csv_table(
        SWEEP_HEADER,
        rows.iter().map(|r| {
            [
                fmt_g17(r.beta),
                fmt_g17(r.expected_reward),
                fmt_g17(r.kl_to_prior),
                fmt_g17(r.entropy),
            ]
        }),
    )
}

/// Line chart of expected reward (left axis) and KL to the prior (right
/// axis) against log10 β.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 570.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 340.0;

    fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if !(lo.is_finite() && hi.is_finite()) {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    }

    let xs: Vec<f64> = rows.iter().map(|r| r.beta.log10()).collect();
    let (x0, x1) = range(xs.iter().copied());
    let (r0, r1) = range(rows.iter().map(|r| r.expected_reward));
    let (k0, k1) = range(rows.iter().map(|r| r.kl_to_prior));
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (RIGHT - LEFT);
    let py = |y: f64, lo: f64, hi: f64| BOTTOM - (y - lo) / (hi - lo) * (BOTTOM - TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Gibbs posterior vs temperature</text>"#,
        W / 2.0
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{BOTTOM} H{RIGHT} V{TOP}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let x = LEFT + t * (RIGHT - LEFT);
        let y = BOTTOM - t * (BOTTOM - TOP);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{BOTTOM}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{:.3}</text>"#,
            BOTTOM + 5.0,
            BOTTOM + 18.0,
            x0 + t * (x1 - x0)
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{:.2}" text-anchor="end" fill="#1f77b4">{:.4}</text><text x="{}" y="{:.2}" fill="#d62728">{:.4}</text>"##,
            LEFT - 6.0,
            y + 4.0,
            r0 + t * (r1 - r0),
            RIGHT + 6.0,
            y + 4.0,
            k0 + t * (k1 - k0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">log10 beta</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 40.0
    );
    let series = [
        ("expected_reward", "#1f77b4", r0, r1, 0),
        ("kl_to_prior", "#d62728", k0, k1, 1),
    ];
    for (name, colour, lo, hi, which) in series {
        let pts: Vec<String> = rows
            .iter()
            .zip(&xs)
            .map(|(r, &x)| {
                let y = if which == 0 {
                    r.expected_reward
                } else {
                    r.kl_to_prior
                };
                format!("{:.2},{:.2}", px(x), py(y, lo, hi))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("point has two coordinates");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{colour}"/>"#);
        }
        let ly = TOP + 14.0 + 16.0 * which as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            LEFT + 10.0,
            LEFT + 30.0,
            LEFT + 36.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// commands

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub beta: f64,
    pub posterior: Vec<f64>,
    pub argmax_set: Vec<usize>,
    pub entropy_of_posterior: f64,
}

/// Writes `sequences.csv`.
pub fn cmd_enumerate(config: &ExperimentConfig, out: &Path) -> Result<Experiment> {
    let exp = config.build()?;
    create_dir(out)?;
    write_file(
        &out.join("sequences.csv"),
        &sequences_csv(&exp.space, &exp.rewards)?,
    )?;
    Ok(exp)
}

/// Writes `oracle.json`.
pub fn cmd_oracle(config: &ExperimentConfig, out: &Path) -> Result<OracleReport> {
    let exp = config.build()?;
    let beta = config.beta();
    let post = gibbs_posterior(&exp.prior, &exp.rewards, beta)?;
    let report = OracleReport {
        log_z: post.log_z(),
        beta,
        posterior: post.probs().to_vec(),
        argmax_set: argmax_set(&exp.rewards),
        entropy_of_posterior: post.entropy(),
    };
    create_dir(out)?;
    write_file(&out.join("oracle.json"), &to_json_string(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct TrainSummary<'a> {
    #[serde(flatten)]
    last: &'a MetricsRow,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    abort: Option<String>,
    target_beta: f64,
    #[serde(rename = "target_log_Z")]
    target_log_z: f64,
    config: &'a ExperimentConfig,
}

/// The training target: the empirical distribution for MLE, the Gibbs
/// posterior at the objective's β otherwise.
pub fn training_target(
    exp: &Experiment,
    spec: &ObjectiveSpec,
) -> Result<(TargetDistribution, Option<Dataset>)> {
    if spec.kind == ObjectiveKind::Mle {
        let texts = spec.data.as_deref().unwrap_or_default();
        let data = Dataset::parse(&exp.space, texts)?;
        Ok((data.empirical(&exp.space)?, Some(data)))
    } else {
        let target = gibbs_posterior(&exp.prior, &exp.rewards, spec.target_beta())?;
        Ok((target, None))
    }
}

/// Trains from the prior and writes `metrics.csv`, `policy.json` and
/// `summary.json`. Aborted runs still write all three.
pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> Result<Trajectory> {
    let exp = config.build()?;
    let spec = config.objective()?;
    let train_cfg = config
        .train
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no train section".into()))?;
    let (target, data) = training_target(&exp, spec)?;
    let problem = Problem {
        prior: &exp.prior,
        rewards: &exp.rewards,
        target: &target,
        data: data.as_ref(),
    };
    let traj = train(exp.prior.clone(), problem, spec, train_cfg)?;

    let status = if traj.abort.is_some() {
        "aborted"
    } else if traj.stopped_at.is_some() {
        "stopped"
    } else if traj.stop_unmet() {
        "stop_unmet"
    } else {
        "completed"
    };
    let summary = TrainSummary {
        last: traj.last(),
        status,
        abort: traj.abort.as_ref().map(ToString::to_string),
        target_beta: target.beta(),
        target_log_z: target.log_z(),
        config,
    };
    create_dir(out)?;
    write_file(&out.join("metrics.csv"), &metrics_csv(&traj.rows)?)?;
    write_file(
        &out.join("policy.json"),
        &to_json_string(&traj.policy.to_snapshot())?,
    )?;
    write_file(&out.join("summary.json"), &to_json_string(&summary)?)?;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyBeta {
    pub beta: f64,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
    pub max_residual_eq7: f64,
    pub max_residual_eq3_eq4: f64,
    pub max_elbo_gap_violation: f64,
    pub max_residual_elbo_gap_kl: f64,
    pub max_residual_elbo_objective: f64,
    /// Report at πθ = π*.
    pub at_target: IdentityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub random_policies: usize,
    pub identity_tolerance: f64,
    pub elbo_tolerance: f64,
    pub max_residual_eq7: f64,
    pub max_residual_eq3_eq4: f64,
    pub max_elbo_gap_violation: f64,
    pub max_residual_elbo_gap_kl: f64,
    pub max_residual_elbo_objective: f64,
    pub per_beta: Vec<VerifyBeta>,
}

impl VerifyReport {
    fn from_betas(per_beta: Vec<VerifyBeta>, random_policies: usize) -> Self {
        let max = |f: fn(&VerifyBeta) -> f64| per_beta.iter().map(f).fold(0.0, f64::max);
        let max_residual_eq7 = max(|b| b.max_residual_eq7);
        let max_residual_eq3_eq4 = max(|b| b.max_residual_eq3_eq4);
        let max_elbo_gap_violation = max(|b| b.max_elbo_gap_violation);
        let max_residual_elbo_gap_kl = max(|b| b.max_residual_elbo_gap_kl);
        let max_residual_elbo_objective = max(|b| b.max_residual_elbo_objective);
        let passed = [
            max_residual_eq7,
            max_residual_eq3_eq4,
            max_residual_elbo_gap_kl,
            max_residual_elbo_objective,
        ]
        .iter()
        .all(|&r| r < IDENTITY_TOLERANCE)
            && max_elbo_gap_violation <= ELBO_TOLERANCE;
        Self {
            passed,
            random_policies,
            identity_tolerance: IDENTITY_TOLERANCE,
            elbo_tolerance: ELBO_TOLERANCE,
            max_residual_eq7,
            max_residual_eq3_eq4,
            max_elbo_gap_violation,
            max_residual_elbo_gap_kl,
            max_residual_elbo_objective,
            per_beta,
        }
    }
}

/// β values `verify` checks: the verify section's list, else the
/// objective's β, else 0.1, 1 and 10.
pub fn verify_betas(config: &ExperimentConfig) -> Vec<f64> {
    if let Some(betas) = config.verify.as_ref().and_then(|v| v.betas.clone()) {
        return betas;
    }
    match config.objective.as_ref().and_then(|o| o.beta) {
        Some(beta) => vec![beta],
        None => DEFAULT_VERIFY_BETAS.to_vec(),
    }
}

/// Checks every identity on random policies and at the posterior itself,
/// writing `verify.json`. `log_z_offset` perturbs the reference log Z so the
/// failure path can be exercised; it is 0 in normal use.
pub fn cmd_verify(
    config: &ExperimentConfig,
    out: &Path,
    log_z_offset: f64,
) -> Result<VerifyReport> {
    let exp = config.build()?;
    let settings = config.verify.clone().unwrap_or_default();
    let betas = verify_betas(config);
    if betas.is_empty() {
        return Err(Error::InvalidConfig("no betas to verify".into()));
    }
    let policies = (0..settings.policies as u64)
        .map(|k| {
            TabularPolicy::init_prior(
                &exp.space,
                &PriorScheme::GaussianLogits {
                    sigma: settings.sigma,
                    seed: settings.seed.wrapping_add(k),
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_beta = Vec::with_capacity(betas.len());
    for &beta in &betas {
        let exact = gibbs_posterior(&exp.prior, &exp.rewards, beta)?;
        let optimum = TabularPolicy::from_distribution(&exp.space, exact.probs())?;
        let log_z = exact.log_z();
        let target = exact.with_log_z(log_z + log_z_offset);
        let check = |p: &TabularPolicy| identity_report(p, &exp.prior, &exp.rewards, &target);
        let at_target = check(&optimum)?;
        let mut reports = policies.iter().map(check).collect::<Result<Vec<_>>>()?;
        reports.push(at_target.clone());
        let max = |f: fn(&IdentityReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
        per_beta.push(VerifyBeta {
            beta,
            log_z,
            max_residual_eq7: max(|r| r.residual_affine_kl),
            max_residual_eq3_eq4: max(|r| r.residual_reshaped_reward),
            max_elbo_gap_violation: max(|r| r.elbo_gap_violation),
            max_residual_elbo_gap_kl: max(|r| r.residual_elbo_gap_kl),
            max_residual_elbo_objective: max(|r| r.residual_elbo_objective),
            at_target,
        });
    }
    let report = VerifyReport::from_betas(per_beta, settings.policies);
    create_dir(out)?;
    write_file(&out.join("verify.json"), &to_json_string(&report)?)?;
    Ok(report)
}

/// Writes `sweep.csv` and `sweep.svg`. `betas` overrides the config's list.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    betas: Option<&[f64]>,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let exp = config.build()?;
    let betas = betas
        .map(<[f64]>::to_vec)
        .or_else(|| config.sweep.as_ref().map(|s| s.betas.clone()))
        .unwrap_or_else(|| DEFAULT_SWEEP_BETAS.to_vec());
    let rows = beta_sweep(&exp.prior, &exp.rewards, &betas)?;
    create_dir(out)?;
    write_file(&out.join("sweep.csv"), &sweep_csv(&rows)?)?;
    write_file(&out.join("sweep.svg"), &sweep_svg(&rows))?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Debug, Parser)]
#[command(
    name = "klvi",
    version,
    about = "Exact KL-regularised fine-tuning experiments on enumerable sequence spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List every sequence with its reward.
    Enumerate(Common),
    /// Exact Gibbs posterior and partition function.
    Oracle(Common),
    /// Train from the prior with the configured objective.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the objective, posterior and ELBO identities.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            hide = true,
            default_value_t = 0.0,
            allow_negative_numbers = true
        )]
        log_z_offset: f64,
    },
    /// Posterior statistics over a range of β.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated β values, ascending.
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let config = ExperimentConfig::load(&common.config)?;
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, out))
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Enumerate(common) => {
            let (config, out) = load(&common)?;
            let exp = cmd_enumerate(&config, &out)?;
            println!(
                "{}: wrote {}",
                exp.space,
                out.join("sequences.csv").display()
            );
            Ok(EXIT_OK)
        }
        Command::Oracle(common) => {
            let (config, out) = load(&common)?;
            let report = cmd_oracle(&config, &out)?;
            println!(
                "log Z = {} at beta {}: wrote {}",
                fmt_g17(report.log_z),
                fmt_g17(report.beta),
                out.join("oracle.json").display()
            );
            Ok(EXIT_OK)
        }
        Command::Train { common, seed } => {
            let (mut config, out) = load(&common)?;
            if let (Some(seed), Some(train)) = (seed, config.train.as_mut()) {
                train.seed = seed;
            }
            let traj = cmd_train(&config, &out)?;
            let last = traj.last();
            println!(
                "step {}: objective {} kl_to_target {} entropy {}",
                last.step,
                fmt_g17(last.objective),
                fmt_g17(last.kl_to_target),
                fmt_g17(last.entropy)
            );
            if let Some(abort) = &traj.abort {
                eprintln!("klvi: training aborted: {abort}");
                Ok(EXIT_NUMERICAL)
            } else if traj.stop_unmet() {
                eprintln!(
                    "klvi: stop condition not met within {} steps",
                    traj.config.steps
                );
                Ok(EXIT_STOP_UNMET)
            } else {
                Ok(EXIT_OK)
            }
        }
        Command::Verify {
            common,
            log_z_offset,
        } => {
            let (config, out) = load(&common)?;
            let report = cmd_verify(&config, &out, log_z_offset)?;
            println!(
                "{}: max residuals eq7 {} reshaped {} elbo gap {} elbo objective {}, elbo violation {}",
                if report.passed { "pass" } else { "FAIL" },
                fmt_g17(report.max_residual_eq7),
                fmt_g17(report.max_residual_eq3_eq4),
                fmt_g17(report.max_residual_elbo_gap_kl),
                fmt_g17(report.max_residual_elbo_objective),
                fmt_g17(report.max_elbo_gap_violation),
            );
            Ok(if report.passed {
                EXIT_OK
            } else {
                EXIT_IDENTITY
            })
        }
        Command::Sweep { common, betas } => {
            let (config, out) = load(&common)?;
            let rows = cmd_sweep(&config, betas.as_deref(), &out)?;
            println!(
                "{} betas: wrote {}",
                rows.len(),
                out.join("sweep.csv").display()
            );
            Ok(EXIT_OK)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("klvi: {e}");
            EXIT_CONFIG
        }
    }
}
