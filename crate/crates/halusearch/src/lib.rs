//! Sentence-level Monte Carlo Tree Search over text generation with a
//! fast/slow thinking switch, aimed at reducing hallucinated content.
//!
//! Generation is framed as step-by-step reasoning where each sentence is one
//! step. A search tree is grown by the classic four MCTS phases (selection,
//! expansion, evaluation, backpropagation), guided by a reward model that
//! rates the hallucination likelihood of completed responses on a 1-5 Likert
//! scale. A switch model decides per question and per step whether to spend
//! search budget (slow thinking) or generate directly (fast thinking).
//!
//! Crate layout:
//! - [`core`]: domain types, sentence segmentation, the search tree and its
//!   canonical serialization format.
//! - [`engine`]: the search loop itself.
//! - [`models`]: the policy/reward/switch interfaces and prompt templates.
//! - [`backends`]: a deterministic simulated fact world (oracle-verifiable)
//!   and an HTTP client for OpenAI-compatible chat-completions services.
//! - [`synth`]: training-data synthesis for reward and switch models.
//! - [`harness`]: dataset loading, baseline methods, and evaluation reports.

pub mod backends;
pub mod core;
pub mod engine;
pub mod harness;
pub mod models;
pub mod synth;

pub use crate::core::{
    GenerationContext, HallucinationScore, SearchConfig, SearchNode, SearchTree, Sentence,
    TerminationKind, TerminationReason, ThinkingDecision, ThinkingLevel, ThinkingMode,
};
pub use engine::{run_search, SearchOptions, SearchResult};
