//! The three pluggable model interfaces (policy, reward, switch) and the
//! prompt templates they exchange. Implementations live in [`crate::backends`].

mod prompt;
mod score;
mod switch;

pub use prompt::{build_reward_prompt, REWARD_PROMPT_CRITIQUE, REWARD_PROMPT_GENERATIVE};
pub use score::parse_likert_reply;
pub use switch::{AlwaysFast, AlwaysSlow, RiskEstimator, ThresholdSwitch};

use thiserror::Error;

use crate::core::{
    segment_with_marker, GenerationContext, HallucinationScore, Sentence, ThinkingDecision,
};

/// Model-call failures, typed so callers can decide what is retryable.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration rejected: {0}")]
    Config(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimit(String),
    #[error("malformed backend reply: {0}")]
    Protocol(String),
    #[error("no score in 1..=5 found in reply: {raw:?}")]
    Score { raw: String },
    #[error("unknown question: {0:?}")]
    UnknownQuestion(String),
}

impl ModelError {
    /// Transient failures a caller may retry.
    pub fn retryable(&self) -> bool {
        matches!(self, ModelError::Transport(_) | ModelError::RateLimit(_))
    }
}

/// What the policy is asked to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// Exactly one next sentence per sample.
    NextSentence,
    /// A complete response per sample, ending at the end marker.
    FullCompletion,
}

#[derive(Debug, Clone)]
pub struct PolicyRequest {
    pub context: GenerationContext,
    pub mode: PolicyMode,
    pub samples: usize,
    pub temperature: f64,
}

/// A completed response: the context prefix plus the sampled continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutput {
    Sentence(Sentence),
    Completion(Completion),
}

/// The policy backend contract: raw continuation texts for a request. The
/// wrapper [`policy_generate`] handles validation, segmentation, and end
/// markers, so backends only produce text.
pub trait PolicyModel: Send + Sync {
    fn raw_generate(&self, request: &PolicyRequest) -> Result<Vec<String>, ModelError>;

    /// End-of-response marker this backend appends to finished output.
    fn end_marker(&self) -> &str {
        "<END>"
    }
}

/// Runs the policy and normalizes its output: in next-sentence mode each
/// sample is segmented and truncated to its first sentence; in full-completion
/// mode the continuation is composed with the context prefix into a complete
/// response.
pub fn policy_generate(
    policy: &dyn PolicyModel,
    request: &PolicyRequest,
) -> Result<Vec<PolicyOutput>, ModelError> {
    if request.samples == 0 {
        return Err(ModelError::InvalidRequest("samples must be >= 1".into()));
    }
    let raw = policy.raw_generate(request)?;
    if raw.len() != request.samples {
        return Err(ModelError::Protocol(format!(
            "backend returned {} samples, expected {}",
            raw.len(),
            request.samples
        )));
    }
    let marker = policy.end_marker();
    let mut outputs = Vec::with_capacity(raw.len());
    for text in raw {
        let continuation = segment_with_marker(&text, marker);
        match request.mode {
            PolicyMode::NextSentence => {
                // Truncation drops later sentences; the terminal flag only
                // survives when the marker followed this very sentence.
                let first = continuation.into_iter().next().ok_or_else(|| {
                    ModelError::Protocol("empty continuation in next-sentence mode".into())
                })?;
                outputs.push(PolicyOutput::Sentence(first));
            }
            PolicyMode::FullCompletion => {
                let mut sentences = request.context.prefix.clone();
                sentences.extend(continuation);
                let text = sentences
                    .iter()
                    .map(|s| s.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                outputs.push(PolicyOutput::Completion(Completion { text, sentences }));
            }
        }
    }
    Ok(outputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// Score only.
    Generative,
    /// Critique first, score last.
    Critique,
}

#[derive(Debug, Clone)]
pub struct RewardRequest {
    pub question: String,
    pub answer_fragment: String,
    /// Only provided when generating reward data.
    pub reference_answer: Option<String>,
    pub mode: RewardMode,
}

/// Scores the hallucination likelihood of a response fragment.
pub trait RewardModel: Send + Sync {
    fn score(&self, request: &RewardRequest) -> Result<HallucinationScore, ModelError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchLevel {
    Instance,
    Step,
}

#[derive(Debug, Clone)]
pub struct SwitchRequest {
    pub level: SwitchLevel,
    pub question: String,
    /// Empty at instance level.
    pub prefix: Vec<Sentence>,
}

/// Decides fast versus slow thinking for a question or a reasoning step.
pub trait SwitchModel: Send + Sync {
    fn decide(&self, request: &SwitchRequest) -> Result<ThinkingDecision, ModelError>;
}

/// Correctness verdict on a final answer against the ground truth.
pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, answer: &str) -> Result<bool, ModelError>;
}
