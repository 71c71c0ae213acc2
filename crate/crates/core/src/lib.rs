//! Trajectory-packing and training-signal toolkit for multi-turn agent sessions.
//!
//! Agent sessions branch: one task produces several trajectories that share
//! long token prefixes. Training each trajectory separately recomputes every
//! shared prefix. This crate turns raw session trees into packed training
//! batches where each shared prefix is materialized once, while a
//! tree-structured weight on every loss target keeps the packed loss (and its
//! gradients) exactly equal to the per-trajectory computation.
//!
//! The pipeline, module by module:
//!
//! - [`trajectory`]: session/message data model and JSONL ingestion.
//! - [`masking`]: error-masked loss masks that zero the loss on erroneous
//!   tool calls while keeping them visible as context.
//! - [`decompose`]: split sessions at compression boundaries and mode
//!   switches into independently trained subtrees.
//! - [`trie`]: radix-compressed prefix tree over trajectories.
//! - [`planner`]: partition trajectories into packs under a token budget,
//!   plus a brute-force oracle for validation.
//! - [`encoder`]: flatten a pack into tokens, parent links, depth-based
//!   positions, the shared-prefix attention mask, and weighted loss targets.
//! - [`verifier`]: a micro differentiable sequence model that checks packed
//!   computation against unpacked per-trajectory computation, loss and
//!   gradients both.
//! - [`advantage`]: group-normalized advantages with difficulty- and
//!   entropy-aware rescaling, plus deviation-based resampling decisions.

pub mod advantage;
pub mod decompose;
pub mod encoder;
pub mod masking;
pub mod planner;
pub mod rng;
pub mod synth;
pub mod trajectory;
pub mod trie;
pub mod verifier;

pub use advantage::{AdvantageGroup, ShapedAdvantages};
pub use decompose::Subtree;
pub use encoder::{EncodedPack, LossTarget, Normalization};
pub use masking::MaskPolicy;
pub use planner::PackPlan;
pub use trajectory::{Message, Role, SessionTree, Trajectory};
pub use trie::Trie;
pub use verifier::{GradReport, MicroModel};
