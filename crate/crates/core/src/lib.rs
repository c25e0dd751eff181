//! Tooling for block-structured chain-of-thought.
//!
//! A response declares how many reasoning blocks it will use, writes them
//! separated by continuation markers, then answers. This crate covers the
//! pieces around that format:
//!
//! - [`format`]: strict and lenient parsing, canonical serialization and
//!   consistency checks of block traces.
//! - [`dast`]: length-budget reward calibration and preference pairs for DPO.
//! - [`rl`]: advantage, clipped surrogate and accuracy-aware multiplier
//!   scaling for constrained RL.
//! - [`decoder`]: block-count masking and capped decoding over any
//!   [`decoder::BlockPolicy`].
//! - [`sim`]: a synthetic policy and cap sweeps.
//! - [`segment`]: validation of segmentations against separator bounds.
//! - [`metrics`]: evaluation metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dast;
pub mod decoder;
pub mod format;
pub mod metrics;
pub mod record;
pub mod rl;
pub mod segment;
pub mod sim;

pub use decoder::{BlockCountDistribution, BlockPolicy, CapMode, CapSpec, Decoder};
pub use format::{parse_trace, serialize_trace, ReasoningTrace};
pub use record::{ProblemRecord, SampledResponse};
pub use rl::{Multipliers, RewardConfig};
