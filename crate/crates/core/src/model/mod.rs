//! Decoder-only transformer over semantic-token sequences.
//!
//! Two regimes share one parameter set layout:
//!
//! - baseline: `[history | c1 .. c(l-1)]` under a causal mask, stage `t` read
//!   at the position before `c_t`;
//! - care: learned reasoning queries precede every code,
//!   `[history | Q1 c1 Q2 c2 .. Ql]`, stage `t` read at the last query of
//!   `Q_t`, under the progressive attention mask.
//!
//! [`forward`] is the differentiable single pass; [`engine`] evaluates
//! incrementally with key/value caches; [`staged`] re-encodes per stage and
//! serves as the exactness reference for the progressive mask.

pub mod complexity;
pub mod config;
pub mod engine;
pub mod forward;
pub mod layout;
pub mod mask;
pub mod params;
pub mod staged;
pub(crate) mod tape;

pub use complexity::{count_attention_pairs, count_mask_pairs, dense_leading_order_ratio, EncodingScheme};
pub use config::{HistoryRule, MaskKind, Mode, ModelConfig, Precision, QueryCounts};
pub use engine::{Engine, KvCache};
pub use forward::{forward, readout_logits, softmax_rows, PositionInput, SequenceInputs};
pub use layout::{build_layout, Role, SequenceLayout};
pub use mask::{build_progressive_mask, AttentionMask};
pub use params::{Checkpoint, LayerParams, ModelParams};
pub use staged::{staged_reference_forward, staged_sequence_lengths};
