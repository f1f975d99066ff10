//! Reward prompt templates, shipped as text assets. The exact bytes are part
//! of the golden-test surface; edit the asset files, not inline strings.

use super::{RewardMode, RewardRequest};

pub const REWARD_PROMPT_GENERATIVE: &str =
    include_str!("../../assets/reward_prompt_generative.txt");
pub const REWARD_PROMPT_CRITIQUE: &str = include_str!("../../assets/reward_prompt_critique.txt");

/// Renders the reward prompt for a request. Deterministic: identical requests
/// produce byte-identical prompts. The generative and critique variants
/// differ only in the output instruction; the reference-answer line appears
/// only when a reference is supplied.
pub fn build_reward_prompt(request: &RewardRequest) -> String {
    let template = match request.mode {
        RewardMode::Generative => REWARD_PROMPT_GENERATIVE,
        RewardMode::Critique => REWARD_PROMPT_CRITIQUE,
    };
    let (notice, line) = match &request.reference_answer {
        Some(reference) => (
            " We provide the correct answer as a reference.".to_string(),
            format!("Correct Answer: {}\n", reference),
        ),
        None => (String::new(), String::new()),
    };
    template
        .replace("{reference_notice}", &notice)
        .replace("{question}", &request.question)
        .replace("{reference_line}", &line)
        .replace("{answer}", &request.answer_fragment)
}
