//! Preference-optimization laboratory.
//!
//! Sequence-level preference losses (DPO and its relatives, the BCO quality
//! loss, the SFT generation loss and their weighted blend) with exact partial
//! derivatives, toy categorical policies with exact parameter gradients,
//! AdamW with a warmup/cosine schedule, and a deterministic mini-batch
//! trainer that ties them together.

pub mod error;
pub mod gradcheck;
pub mod jsonl;
pub mod losses;
pub mod optim;
pub mod policy;
pub mod text;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use losses::{LossKind, LossResult, RewardShiftState, ShiftMode};
pub use types::{
    DomainTag, InstructionSample, LossConfig, LossWeights, PairLogps, PairSource, PreferencePair, TokenSequence,
};
