//! Sequence rewards and their optimality-variable reading.
//!
//! Rewards are described by a [`RewardSpec`] (the JSON form, with symbols as
//! strings), resolved against a space into a [`RewardFn`], and usually
//! tabulated once into a per-index vector that the oracle and objectives
//! consume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqspace::{Sequence, SequenceSpace};

/// Granularity used to group floating-point ties in [`argmax_set`].
pub const TIE_RESOLUTION: f64 = 1e-12;

/// JSON description of a reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RewardSpec {
    /// `weight` per occurrence of `token`.
    TokenCount { token: String, weight: f64 },
    /// `bonus` if the sequence contains `substring` contiguously.
    #[serde(alias = "contains")]
    ContainsSubstring { substring: String, bonus: f64 },
    /// `-c * len(x)`.
    LengthPenalty { c: f64 },
    /// Explicit values, either a full per-index array or sparse entries with
    /// a default.
    Table {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        entries: Option<Vec<TableEntry>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<f64>,
    },
    /// Weighted sum of other rewards.
    Composite { terms: Vec<CompositeTerm> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub seq: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeTerm {
    #[serde(default = "one")]
    pub weight: f64,
    pub reward: RewardSpec,
}

fn one() -> f64 {
    1.0
}

/// A reward resolved against a concrete sequence space.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardFn {
    TokenCount {
        token: usize,
        weight: f64,
    },
    ContainsSubstring {
        pattern: Vec<usize>,
        bonus: f64,
    },
    LengthPenalty {
        c: f64,
    },
    /// Per-index values; `None` marks an index the table does not define.
    Table {
        values: Vec<Option<f64>>,
    },
    Composite(Vec<(f64, RewardFn)>),
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidReward(format!(
            "{name} must be finite, got {v}"
        )))
    }
}

impl RewardFn {
    pub fn from_spec(spec: &RewardSpec, space: &SequenceSpace) -> Result<Self> {
        let vocab = space.vocab();
        Ok(match spec {
            RewardSpec::TokenCount { token, weight } => {
                let t = vocab
                    .token(token)
                    .filter(|&t| t != vocab.eos())
                    .ok_or_else(|| {
                        Error::InvalidReward(format!("{token:?} is not a content token"))
                    })?;
                RewardFn::TokenCount {
                    token: t,
                    weight: finite("weight", *weight)?,
                }
            }
            RewardSpec::ContainsSubstring { substring, bonus } => {
                // patterns are not limited by max_len
                let pattern = space.tokenize(substring)?;
                RewardFn::ContainsSubstring {
                    pattern,
                    bonus: finite("bonus", *bonus)?,
                }
            }
            RewardSpec::LengthPenalty { c } => RewardFn::LengthPenalty {
                c: finite("c", *c)?,
            },
            RewardSpec::Table {
                values,
                entries,
                default,
            } => {
                let size = space.size();
                let table = match (values, entries) {
                    (Some(_), Some(_)) => {
                        return Err(Error::InvalidReward(
                            "table takes either values or entries, not both".into(),
                        ))
                    }
                    (Some(values), None) => {
                        if default.is_some() {
                            return Err(Error::InvalidReward(
                                "table default only applies to entries".into(),
                            ));
                        }
                        if values.len() != size {
                            return Err(Error::InvalidReward(format!(
                                "table has {} values for a space of {size} sequences",
                                values.len()
                            )));
                        }
                        values
                            .iter()
                            .map(|&v| finite("table value", v).map(Some))
                            .collect::<Result<Vec<_>>>()?
                    }
                    (None, Some(entries)) => {
                        let fill = default.map(|d| finite("default", d)).transpose()?;
                        let mut table = vec![fill; size];
                        let mut seen = vec![false; size];
                        for e in entries {
                            let x = space.parse(&e.seq)?;
                            let i = space.index_of(&x)?;
                            if std::mem::replace(&mut seen[i], true) {
                                return Err(Error::InvalidReward(format!(
                                    "duplicate table entry {:?}",
                                    e.seq
                                )));
                            }
                            table[i] = Some(finite("entry value", e.r)?);
                        }
                        table
                    }
                    (None, None) => {
                        return Err(Error::InvalidReward("table needs values or entries".into()))
                    }
                };
                RewardFn::Table { values: table }
            }
            RewardSpec::Composite { terms } => RewardFn::Composite(
                terms
                    .iter()
                    .map(|t| {
                        Ok((
                            finite("weight", t.weight)?,
                            RewardFn::from_spec(&t.reward, space)?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    /// r(x).
    pub fn evaluate(&self, space: &SequenceSpace, x: &Sequence) -> Result<f64> {
        Ok(match self {
            RewardFn::TokenCount { token, weight } => {
                // + 0.0 keeps empty counts at +0.0 for negative weights
                weight * x.tokens().iter().filter(|&&t| t == *token).count() as f64 + 0.0
            }
            RewardFn::ContainsSubstring { pattern, bonus } => {
                let hit = pattern.is_empty()
                    || x.tokens().windows(pattern.len()).any(|w| w == &pattern[..]);
                if hit {
                    *bonus
                } else {
                    0.0
                }
            }
            RewardFn::LengthPenalty { c } => -c * x.len() as f64 + 0.0,
            RewardFn::Table { values } => {
                let i = space.index_of(x)?;
                values.get(i).copied().flatten().ok_or_else(|| {
                    Error::InvalidReward(format!(
                        "table has no value for {:?} (index {i})",
                        space.display(x)
                    ))
                })?
            }
            RewardFn::Composite(terms) => {
                let mut total = 0.0;
                for (w, r) in terms {
                    total += w * r.evaluate(space, x)?;
                }
                total
            }
        })
    }

    /// r(x) for every sequence, in index order.
    pub fn tabulate(&self, space: &SequenceSpace) -> Result<Vec<f64>> {
        space
            .enumerate()
            .map(|x| self.evaluate(space, &x))
            .collect()
    }
}

/// Indices of all sequences attaining the maximum reward, after rounding to
/// [`TIE_RESOLUTION`]. Never empty for a non-empty input.
pub fn argmax_set(rewards: &[f64]) -> Vec<usize> {
    let key = |r: f64| (r / TIE_RESOLUTION).round();
    let best = rewards
        .iter()
        .map(|&r| key(r))
        .fold(f64::NEG_INFINITY, f64::max);
    rewards
        .iter()
        .enumerate()
        .filter(|(_, &r)| key(r) == best)
        .map(|(i, _)| i)
        .collect()
}

/// The reward shifted so its maximum is zero, read as
/// `p(O = 1 | x) = exp(r(x) - max r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityModel {
    base: Vec<f64>,
    shift: f64,
}

impl OptimalityModel {
    /// Builds the model from a tabulated reward (index order).
    pub fn from_rewards(rewards: &[f64]) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::InvalidReward("empty reward table".into()));
        }
        if let Some(bad) = rewards.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidReward(format!("non-finite reward {bad}")));
        }
        let shift = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            base: rewards.to_vec(),
            shift,
        })
    }

    pub fn new(reward: &RewardFn, space: &SequenceSpace) -> Result<Self> {
        Self::from_rewards(&reward.tabulate(space)?)
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// r̃(x) = r(x) - max r, always `<= 0`.
    pub fn shifted(&self, index: usize) -> f64 {
        self.base[index] - self.shift
    }

    pub fn shifted_rewards(&self) -> Vec<f64> {
        self.base.iter().map(|r| r - self.shift).collect()
    }

    /// p(O = 1 | x) ∈ (0, 1].
    pub fn to_optimality_prob(&self, index: usize) -> f64 {
        self.shifted(index).exp()
    }
}
