//! Latent reasoning-trace training with intrinsic answer-likelihood rewards.
//!
//! A policy emits a trace `z` between `START_THINK` and `END_THINK`, then the
//! reference answer is scored token by token under the same policy. Traces
//! are rewarded by how much they raise the policy's own confidence in that
//! answer. This crate holds the numerical machinery: vocabularies and
//! synthetic tasks, exact tabular and tiny neural policies, reward
//! aggregation schemes, group advantages, the two-term gradient estimator,
//! the training loop, an enumeration oracle and training diagnostics.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the companion `nrt` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod advantage;
pub mod corpus;
pub mod error;
pub mod estimator;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use corpus::{Dataset, QAPair, TaskKind, TaskSpec, Token, Vocabulary};
pub use policy::{Architecture, GradientAccumulator, PolicyParameters, TokenDistribution, TraceSample};
pub use rewards::{BaselineProbs, ConditionalProbs, RewardBreakdown, Scheme};
