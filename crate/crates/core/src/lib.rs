//! Region-grounded chain-of-thought preference data generation and
//! margin-aware preference optimization, at desk scale.
//!
//! The pipeline runs per input image/question pair:
//!
//! 1. [`region`]: each clinical hypothesis's activation map is thresholded
//!    and its largest 4-connected component masks the image.
//! 2. [`chain`]: for `T` timesteps the generator answers once per region,
//!    conditioned on the preserved chain.
//! 3. [`scoring`]: two evaluators score every candidate with a sampled
//!    lookahead term and are merged by consensus weighting.
//! 4. [`pairs`]: `k` best-vs-worst preference pairs per timestep; only the
//!    best candidate extends the chain.
//! 5. [`dpo`]: a tabular softmax policy is trained with the margin-aware
//!    DPO loss.
//! 6. [`orchestrator`]: `m` rounds over disjoint input subsets, each
//!    generated with the policy produced by the previous round.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod commands;
pub mod config;
pub mod contracts;
pub mod digest;
pub mod dpo;
pub mod error;
pub mod grid;
pub mod inputs;
pub mod orchestrator;
pub mod pairs;
pub mod region;
pub mod scoring;
pub mod storage;

pub use error::{Error, Result};
