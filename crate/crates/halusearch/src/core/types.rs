use serde::{Deserialize, Serialize};

use super::CoreError;

/// One generation step. `terminal` marks the end of a response, detected via
/// the backend's end marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub terminal: bool,
}

impl Sentence {
    pub fn new(text: impl Into<String>, terminal: bool) -> Self {
        Sentence { text: text.into(), terminal }
    }
}

/// The conditioning state of the policy model: the question plus the ordered
/// prefix of accepted sentences. Prefix order is append-only within a search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub question: String,
    pub prefix: Vec<Sentence>,
    /// Informational only; not consumed by the search itself.
    pub language_tag: String,
}

impl GenerationContext {
    pub fn new(question: impl Into<String>, language_tag: impl Into<String>) -> Self {
        GenerationContext {
            question: question.into(),
            prefix: Vec::new(),
            language_tag: language_tag.into(),
        }
    }

    /// Appends a sentence to the prefix. Empty-after-trim sentences are
    /// rejected to keep the prefix invariant.
    pub fn push(&mut self, sentence: Sentence) -> Result<(), CoreError> {
        if sentence.text.trim().is_empty() {
            return Err(CoreError::EmptySentence);
        }
        self.prefix.push(sentence);
        Ok(())
    }

    /// A new context extended by one sentence.
    pub fn child(&self, sentence: Sentence) -> Result<Self, CoreError> {
        let mut next = self.clone();
        next.push(sentence)?;
        Ok(next)
    }

    /// The prefix sentences joined with single spaces.
    pub fn prefix_text(&self) -> String {
        self.prefix
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Affine polarity inversion from the Likert hallucination scale onto the
/// search value scale: likert 1 (no hallucination) maps to 1.0, likert 5 to
/// 0.0, so that a higher value uniformly means less hallucination.
pub fn map_likert_to_value(likert: u8) -> Result<f64, CoreError> {
    if !(1..=5).contains(&likert) {
        return Err(CoreError::LikertOutOfRange(likert as i64));
    }
    Ok((5 - likert) as f64 / 4.0)
}

/// A Likert 1-5 hallucination judgment with its mapped search value and, in
/// critique mode, the critique text preceding the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationScore {
    pub likert: u8,
    pub critique: Option<String>,
    pub mapped_value: f64,
}

impl HallucinationScore {
    pub fn new(likert: u8, critique: Option<String>) -> Result<Self, CoreError> {
        let mapped_value = map_likert_to_value(likert)?;
        Ok(HallucinationScore { likert, critique, mapped_value })
    }
}

/// Fast (System 1, direct generation) versus slow (System 2, tree search).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingMode {
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinkingLevel {
    Instance,
    Step,
}

/// A fast/slow verdict at instance or step level. `raw_label` keeps the 0/1
/// encoding used by switch-model training data: 1 means slow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkingDecision {
    pub level: ThinkingLevel,
    pub mode: ThinkingMode,
    pub raw_label: u8,
}

impl ThinkingDecision {
    pub fn new(level: ThinkingLevel, mode: ThinkingMode) -> Self {
        let raw_label = match mode {
            ThinkingMode::Slow => 1,
            ThinkingMode::Fast => 0,
        };
        ThinkingDecision { level, mode, raw_label }
    }
}

/// Why a search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationKind {
    MaxIterations,
    RewardThresholdMet,
}

impl TerminationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationKind::MaxIterations => "max_iterations",
            TerminationKind::RewardThresholdMet => "reward_threshold_met",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationReason {
    pub kind: TerminationKind,
    pub iterations_used: u64,
}

/// Search hyperparameters. Defaults follow the reference setup: K=10 nodes
/// expanded per step, m=5 rollouts per node, at most M=20 simulations, UCT
/// weight 0.4, decoding temperature 0.9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub expansions_k: usize,
    pub rollouts_m: usize,
    pub max_iterations_m: usize,
    pub uct_weight_w: f64,
    /// Termination threshold on the mapped value scale. 0.75 corresponds to a
    /// mean Likert of 2 ("low hallucination risk").
    pub reward_threshold: f64,
    /// Switch threshold on the raw Likert scale; states estimated above it
    /// are routed to slow thinking.
    pub gamma: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            expansions_k: 10,
            rollouts_m: 5,
            max_iterations_m: 20,
            uct_weight_w: 0.4,
            reward_threshold: 0.75,
            gamma: 0.0,
            temperature: 0.9,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.expansions_k == 0 {
            return Err(CoreError::InvalidConfig("expansions_k must be >= 1".into()));
        }
        if self.rollouts_m == 0 {
            return Err(CoreError::InvalidConfig("rollouts_m must be >= 1".into()));
        }
        if self.max_iterations_m == 0 {
            return Err(CoreError::InvalidConfig("max_iterations_m must be >= 1".into()));
        }
        if !self.uct_weight_w.is_finite() || self.uct_weight_w < 0.0 {
            return Err(CoreError::InvalidConfig("uct_weight_w must be non-negative".into()));
        }
        // Values above 1.0 are legal and simply never met (threshold disabled).
        if !self.reward_threshold.is_finite() || self.reward_threshold < 0.0 {
            return Err(CoreError::InvalidConfig(
                "reward_threshold must be a non-negative real".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(CoreError::InvalidConfig("temperature must be non-negative".into()));
        }
        Ok(())
    }
}
