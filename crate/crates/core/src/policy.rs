//! Tabular autoregressive policies over a [`SequenceSpace`].
//!
//! A policy is a table of logits with one row per decision prefix and one
//! column per vocabulary token (EOS included). Each row's softmax is the
//! next-token distribution after that prefix; the product along a path gives
//! the sequence probability. The table can represent every distribution on
//! the space, which [`TabularPolicy::from_distribution`] makes explicit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numeric::{log_softmax_in_place, log_sum_exp};
use crate::seqspace::{Sequence, SequenceSpace, Vocab};

/// Logit assigned to tokens with zero conditional mass in
/// [`TabularPolicy::from_distribution`]. Logits must stay finite.
pub const MIN_LOGIT: f64 = -700.0;

/// Dense table of partial derivatives, same shape as a policy's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GradientTable {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, token: usize) -> f64 {
        self.values[row * self.cols + token]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientTable, scale: f64) {
        assert_eq!(
            self.values.len(),
            other.values.len(),
            "gradient shape mismatch"
        );
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// How to initialise a prior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorScheme {
    /// All logits zero.
    UniformLogits,
    /// I.i.d. normal logits with standard deviation `sigma`, seeded.
    GaussianLogits { sigma: f64, seed: u64 },
    /// A policy snapshot on disk.
    File { path: PathBuf },
}

/// On-disk policy format: vocabulary, maximum length and row-major logits
/// with rows in prefix order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySnapshot {
    pub vocab: Vocab,
    pub max_len: usize,
    pub logits: Vec<f64>,
}

/// A prefix-conditioned softmax policy over a finite sequence space.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    space: SequenceSpace,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(space: SequenceSpace, logits: Vec<f64>) -> Result<Self> {
        let expected = space.n_prefixes() * space.vocab().len();
        if logits.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: logits.len(),
            });
        }
        if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "non-finite logit {bad}"
            )));
        }
        Ok(Self { space, logits })
    }

    /// Policy with all logits zero (uniform next-token conditionals).
    pub fn uniform(space: SequenceSpace) -> Self {
        let n = space.n_prefixes() * space.vocab().len();
        Self {
            space,
            logits: vec![0.0; n],
        }
    }

    pub fn init_prior(space: &SequenceSpace, scheme: &PriorScheme) -> Result<Self> {
        match scheme {
            PriorScheme::UniformLogits => Ok(Self::uniform(space.clone())),
            PriorScheme::GaussianLogits { sigma, seed } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "gaussian-logits sigma must be finite and >= 0, got {sigma}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let n = space.n_prefixes() * space.vocab().len();
                let logits = (0..n)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        // + 0.0 turns -0.0 into 0.0 so sigma = 0 is bit-identical to uniform
                        sigma * z + 0.0
                    })
                    .collect();
                Self::new(space.clone(), logits)
            }
            PriorScheme::File { path } => {
                let policy = Self::load(path)?;
                if policy.space != *space {
                    return Err(Error::InvalidConfig(format!(
                        "prior file {} does not match the configured space",
                        path.display()
                    )));
                }
                Ok(policy)
            }
        }
    }

    pub fn space(&self) -> &SequenceSpace {
        &self.space
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn n_rows(&self) -> usize {
        self.space.n_prefixes()
    }

    pub fn n_cols(&self) -> usize {
        self.space.vocab().len()
    }

    pub fn zero_gradient(&self) -> GradientTable {
        GradientTable::zeros(self.n_rows(), self.n_cols())
    }

    /// Gradient-ascent step `logits += lr * grad`.
    pub fn ascend(&mut self, grad: &GradientTable, lr: f64) {
        assert_eq!(
            grad.values.len(),
            self.logits.len(),
            "gradient shape mismatch"
        );
        for (w, g) in self.logits.iter_mut().zip(&grad.values) {
            *w += lr * g;
        }
    }

    /// Sets one logit. Used by finite-difference checks.
    pub fn set_logit(&mut self, row: usize, token: usize, value: f64) {
        let cols = self.n_cols();
        self.logits[row * cols + token] = value;
    }

    pub fn logit(&self, row: usize, token: usize) -> f64 {
        self.logits[row * self.n_cols() + token]
    }

    /// Row-wise log-softmax of the whole logit table.
    pub fn log_softmax_table(&self) -> Vec<f64> {
        let mut table = self.logits.clone();
        let cols = self.n_cols();
        if cols > 0 {
            for row in table.chunks_mut(cols) {
                log_softmax_in_place(row);
            }
        }
        table
    }

    /// Row-wise softmax of the logit table.
    pub fn softmax_table(&self) -> Vec<f64> {
        let mut table = self.log_softmax_table();
        for v in &mut table {
            *v = v.exp();
        }
        table
    }

    pub fn log_prob(&self, x: &Sequence) -> Result<f64> {
        let index = self.space.index_of(x)?;
        Ok(self.log_prob_at(index))
    }

    pub fn log_prob_at(&self, index: usize) -> f64 {
        let cols = self.n_cols();
        let mut lp = 0.0;
        self.space.for_each_step(index, |row, token| {
            let r = &self.logits[row * cols..(row + 1) * cols];
            lp += r[token] - log_sum_exp(r);
        });
        lp
    }

    /// log π(x) for every sequence, in index order.
    pub fn log_probs(&self) -> Vec<f64> {
        let space = &self.space;
        let size = space.size();
        let cols = self.n_cols();
        let vocab = space.vocab();
        let m = vocab.n_content();
        let eos = vocab.eos();
        let lsm = self.log_softmax_table();

        // log-probability of emitting each prefix (before the EOS decision)
        let mut node = vec![0.0; size];
        for k in 1..=space.max_len() {
            let start = space.level_offset(k);
            let parent_start = space.level_offset(k - 1);
            for i in start..space.level_offset(k + 1) {
                let pos = i - start;
                let parent = parent_start + pos / m;
                let token = vocab.content_token(pos % m);
                node[i] = node[parent] + lsm[parent * cols + token];
            }
        }
        let n_prefixes = space.n_prefixes();
        for (i, lp) in node.iter_mut().enumerate().take(n_prefixes) {
            *lp += lsm[i * cols + eos];
        }
        node
    }

    /// π(x) for every sequence, in index order.
    pub fn distribution(&self) -> Vec<f64> {
        self.log_probs().into_iter().map(f64::exp).collect()
    }

    /// ∂ log π(x) / ∂ logits.
    pub fn grad_log_prob(&self, x: &Sequence) -> Result<GradientTable> {
        let index = self.space.index_of(x)?;
        Ok(self.score_sum([(index, 1.0)]))
    }

    /// `Σ_i w_i ∇ log π(x_i)` over `(sequence index, weight)` pairs.
    ///
    /// Accumulates per-row choice weights along each path and applies the
    /// softmax Jacobian once per row, so the cost is linear in the number of
    /// items times `max_len` plus the table size.
    pub fn score_sum(&self, items: impl IntoIterator<Item = (usize, f64)>) -> GradientTable {
        let cols = self.n_cols();
        let mut choice = vec![0.0; self.logits.len()];
        for (index, w) in items {
            self.space.for_each_step(index, |row, token| {
                choice[row * cols + token] += w;
            });
        }
        let probs = self.softmax_table();
        let mut grad = choice;
        for (g, p) in grad.chunks_mut(cols).zip(probs.chunks(cols)) {
            let visits: f64 = g.iter().sum();
            if visits != 0.0 {
                for (gv, pv) in g.iter_mut().zip(p) {
                    *gv -= visits * pv;
                }
            }
        }
        GradientTable {
            rows: self.n_rows(),
            cols,
            values: grad,
        }
    }

    /// Ancestral sampler with precomputed cumulative row probabilities.
    pub fn sampler(&self) -> Sampler<'_> {
        let cols = self.n_cols();
        let mut cumulative = self.softmax_table();
        if cols > 0 {
            for row in cumulative.chunks_mut(cols) {
                let mut acc = 0.0;
                for v in row.iter_mut() {
                    acc += *v;
                    *v = acc;
                }
            }
        }
        Sampler {
            space: &self.space,
            cumulative,
            cols,
        }
    }

    /// Draws one sequence by ancestral sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        let index = self.sampler().sample_index(rng);
        self.space
            .sequence_at(index)
            .expect("sampled index in range")
    }

    /// Builds a policy whose induced distribution equals `p` (index order).
    ///
    /// Prefixes with zero marginal mass get uniform conditionals; tokens with
    /// zero conditional mass get [`MIN_LOGIT`].
    pub fn from_distribution(space: &SequenceSpace, p: &[f64]) -> Result<Self> {
        let size = space.size();
        if p.len() != size {
            return Err(Error::ShapeMismatch {
                expected: size,
                got: p.len(),
            });
        }
        if let Some(bad) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "entries must be finite and non-negative, found {bad}"
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, not 1"
            )));
        }

        // marginal mass of every prefix: its own EOS mass plus all extensions
        let mut mass = p.to_vec();
        for i in (1..size).rev() {
            let (parent, _) = space.parent(i).expect("non-root has a parent");
            mass[parent] += mass[i];
        }

        let vocab = space.vocab();
        let cols = vocab.len();
        let mut logits = vec![0.0; space.n_prefixes() * cols];
        for (row, chunk) in logits.chunks_mut(cols).enumerate() {
            let m = mass[row];
            if m <= 0.0 {
                continue;
            }
            for (t, logit) in chunk.iter_mut().enumerate() {
                let mt = if t == vocab.eos() {
                    p[row]
                } else {
                    mass[space.child(row, t)]
                };
                *logit = if mt > 0.0 {
                    (mt / m).ln().max(MIN_LOGIT)
                } else {
                    MIN_LOGIT
                };
            }
        }
        Self::new(space.clone(), logits)
    }

    pub fn to_snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            vocab: self.space.vocab().clone(),
            max_len: self.space.max_len(),
            logits: self.logits.clone(),
        }
    }

    pub fn from_snapshot(snapshot: PolicySnapshot) -> Result<Self> {
        let space = SequenceSpace::new(snapshot.vocab, snapshot.max_len)?;
        Self::new(space, snapshot.logits)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_snapshot(serde_json::from_str(&text)?)
    }
}

/// Draws sequence indices from a fixed policy.
#[derive(Debug)]
pub struct Sampler<'a> {
    space: &'a SequenceSpace,
    cumulative: Vec<f64>,
    cols: usize,
}

impl Sampler<'_> {
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let space = self.space;
        let eos = space.vocab().eos();
        let mut node = 0;
        let mut depth = 0;
        while depth < space.max_len() {
            let row = &self.cumulative[node * self.cols..(node + 1) * self.cols];
            let u: f64 = rng.random::<f64>() * row[self.cols - 1];
            let token = row.iter().position(|&c| u < c).unwrap_or(self.cols - 1);
            if token == eos {
                break;
            }
            node = space.child(node, token);
            depth += 1;
        }
        node
    }
}
