//! Two-stage training of a coarse-to-fine structured sentiment policy:
//! supervised cold start on filtered chain-of-thought targets, then
//! group-relative policy optimization with polarity hints on hard samples.
//!
//! Everything runs on a synthetic multimodal sentiment environment and a
//! small recurrent policy, so every reward, gradient and sampling rule can be
//! checked exactly.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod grammar;
pub mod grpo;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod profile;
pub mod rewards;
pub mod sft;
pub mod vocab;

pub use env::{CoTRecord, EnvConfig, Sample};
pub use error::{Error, Result};
pub use grammar::{parse, FormatError, Polarity, StructuredOutput};
pub use grpo::{Arm, GrpoConfig, RolloutGroup, StepLog};
pub use metrics::MetricsReport;
pub use pipeline::ExperimentConfig;
pub use policy::{PolicyModel, PolicyParams, Rollout};
pub use profile::{score_to_polarity, DatasetProfile};
pub use rewards::{RewardBreakdown, RewardWeights};
pub use sft::SftConfig;
pub use vocab::{DecodeMode, TokenId, Vocabulary};
