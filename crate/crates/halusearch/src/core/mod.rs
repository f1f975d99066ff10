//! Domain types and the search-tree data structure shared by every other
//! module.

mod segment;
mod serialize;
mod tree;
mod types;

pub use segment::{segment_sentences, segment_with_marker};
pub use serialize::{deserialize_tree, fmt_sig9, serialize_tree, TreeDocument};
pub use tree::{NodeId, SearchNode, SearchTree};
pub use types::{
    map_likert_to_value, GenerationContext, HallucinationScore, SearchConfig, Sentence,
    TerminationKind, TerminationReason, ThinkingDecision, ThinkingLevel, ThinkingMode,
};

use thiserror::Error;

/// Errors raised by the domain types and the tree document codec.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("likert score {0} outside 1..=5")]
    LikertOutOfRange(i64),
    #[error("sentence is empty after trimming")]
    EmptySentence,
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("tree parse error at node {node}: {reason}")]
    TreeParse { node: String, reason: String },
    #[error("tree document is not valid JSON: {0}")]
    TreeJson(String),
}
