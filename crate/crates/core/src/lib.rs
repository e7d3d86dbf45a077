//! Exact, enumeration-based study of reward-driven fine-tuning objectives on
//! tabular autoregressive sequence models.
//!
//! The crate enumerates a small sequence space ([`seqspace`]), represents
//! every distribution on it with a prefix-conditioned logit table
//! ([`policy`]), and computes the Gibbs posterior `π*(x) ∝ π0(x)·exp(r(x)/β)`
//! together with its partition function, divergences and ELBO exactly
//! ([`oracle`]). On top of that sit gradient estimators for pure reward
//! maximisation, KL-regularised reward maximisation, forward-KL
//! distributional control and maximum likelihood ([`objectives`]), a plain
//! gradient-ascent trainer with exact diagnostics ([`trainer`]), and the
//! `klvi` command line ([`cli`]).

pub mod cli;
pub mod error;
pub mod numeric;
pub mod objectives;
pub mod oracle;
pub mod policy;
pub mod reward;
pub mod seqspace;
pub mod trainer;

pub use error::{Error, Result};
pub use objectives::{Dataset, Estimator, GradientEstimate, ObjectiveKind, ObjectiveSpec};
pub use oracle::{IdentityReport, TargetDistribution};
pub use policy::{GradientTable, PriorScheme, TabularPolicy};
pub use reward::{OptimalityModel, RewardFn, RewardSpec};
pub use seqspace::{Sequence, SequenceSpace, Vocab};
pub use trainer::{MetricsRow, TrainConfig, Trajectory};
