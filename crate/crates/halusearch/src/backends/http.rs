//! Blocking client for an OpenAI-compatible chat-completions endpoint, plus
//! policy/reward/switch/judge implementations layered on it.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::core::HallucinationScore;
use crate::models::{
    build_reward_prompt, parse_likert_reply, Judge, ModelError, PolicyModel, PolicyRequest,
    RewardModel, RewardRequest, RiskEstimator, SwitchRequest,
};

/// Environment variable overrides for credentials and endpoint.
pub const ENV_API_KEY: &str = "HALUSEARCH_API_KEY";
pub const ENV_BASE_URL: &str = "HALUSEARCH_BASE_URL";

#[derive(Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub api_key: String,
    pub model_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_base: Duration,
}

// The API key must never leak into logs or dumps.
impl std::fmt::Debug for HttpBackendConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackendConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"<redacted>")
            .field("model_name", &self.model_name)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("backoff_base", &self.backoff_base)
            .finish()
    }
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackendConfig {
            base_url: base_url.into(),
            api_key: api_key.into(),
            model_name: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return Err(ModelError::Config(format!(
                "base_url must be absolute, got {:?}",
                self.base_url
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChatParams {
    pub temperature: f64,
    pub n: usize,
}

/// One chat-completions call with retry. Returns the content of each choice.
///
/// Error classes: 4xx (except 429) are configuration errors and never
/// retried; 5xx, 429, timeouts, and connection failures are transport errors
/// retried with exponential backoff up to `max_retries`; a 2xx body missing
/// the expected content field is a protocol error with the raw body attached.
pub fn http_chat(
    messages: &[ChatMessage],
    params: &ChatParams,
    config: &HttpBackendConfig,
) -> Result<Vec<String>, ModelError> {
    config.validate()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(config.timeout)
        .build()
        .map_err(|e| ModelError::Config(e.to_string()))?;
    let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": config.model_name,
        "messages": messages,
        "temperature": params.temperature,
        "n": params.n,
    });

    let mut attempt = 0u32;
    loop {
        match send_once(&client, &url, &body, config) {
            Ok(contents) => return Ok(contents),
            Err(err) if err.retryable() && attempt < config.max_retries => {
                let delay = config.backoff_base * 2u32.saturating_pow(attempt);
                log::warn!("chat request failed ({err}); retrying in {delay:?}");
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

fn send_once(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Value,
    config: &HttpBackendConfig,
) -> Result<Vec<String>, ModelError> {
    let response = client
        .post(url)
        .bearer_auth(&config.api_key)
        .json(body)
        .send()
        .map_err(|e| {
            if e.is_timeout() {
                ModelError::Transport(format!("timeout: {e}"))
            } else {
                ModelError::Transport(format!("connection: {e}"))
            }
        })?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| ModelError::Transport(format!("body read: {e}")))?;
    if status.as_u16() == 429 {
        return Err(ModelError::RateLimit(format!("429: {text}")));
    }
    if status.is_client_error() {
        return Err(ModelError::Config(format!("{status}: {text}")));
    }
    if status.is_server_error() {
        return Err(ModelError::Transport(format!("{status}: {text}")));
    }
    let parsed: Value = serde_json::from_str(&text)
        .map_err(|_| ModelError::Protocol(format!("non-JSON body: {text}")))?;
    let choices = parsed["choices"]
        .as_array()
        .ok_or_else(|| ModelError::Protocol(format!("missing choices: {text}")))?;
    let mut contents = Vec::with_capacity(choices.len());
    for choice in choices {
        let content = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| ModelError::Protocol(format!("missing content field: {text}")))?;
        contents.push(content.to_string());
    }
    Ok(contents)
}

const POLICY_SYSTEM_PROMPT: &str = "You answer questions one sentence at a time. \
Given the question and the answer so far, continue the answer. \
When the answer is complete, end your output with <END>.";

/// Policy backed by a hosted chat model.
pub struct HttpPolicy {
    pub config: HttpBackendConfig,
}

impl PolicyModel for HttpPolicy {
    fn raw_generate(&self, request: &PolicyRequest) -> Result<Vec<String>, ModelError> {
        let prefix = request.context.prefix_text();
        let user = if prefix.is_empty() {
            format!("Question: {}\nAnswer:", request.context.question)
        } else {
            format!(
                "Question: {}\nAnswer so far: {}\nContinue the answer:",
                request.context.question, prefix
            )
        };
        let messages = [ChatMessage::system(POLICY_SYSTEM_PROMPT), ChatMessage::user(user)];
        http_chat(
            &messages,
            &ChatParams { temperature: request.temperature, n: request.samples },
            &self.config,
        )
    }
}

/// Reward model backed by a hosted chat model, using the shipped prompt
/// templates and the standalone-score parsing rule.
pub struct HttpReward {
    pub config: HttpBackendConfig,
    pub temperature: f64,
}

impl RewardModel for HttpReward {
    fn score(&self, request: &RewardRequest) -> Result<HallucinationScore, ModelError> {
        let prompt = build_reward_prompt(request);
        let messages = [ChatMessage::user(prompt)];
        let replies = http_chat(
            &messages,
            &ChatParams { temperature: self.temperature, n: 1 },
            &self.config,
        )?;
        parse_likert_reply(&replies[0], request.mode)
    }
}

const SWITCH_PROMPT: &str = "Estimate the risk that continuing this answer will introduce \
hallucinations, on a scale from 1 (no risk) to 5 (very high risk). \
Output only the number.";

/// Risk estimator backed by a hosted chat model; pair with
/// [`crate::models::ThresholdSwitch`] for a remote switch.
pub struct HttpRiskEstimator {
    pub config: HttpBackendConfig,
    pub temperature: f64,
}

impl RiskEstimator for HttpRiskEstimator {
    fn estimate(&self, request: &SwitchRequest) -> Result<f64, ModelError> {
        let prefix = request
            .prefix
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let user = format!(
            "{SWITCH_PROMPT}\n\nQuestion: {}\nAnswer so far: {}",
            request.question, prefix
        );
        let replies = http_chat(
            &[ChatMessage::user(user)],
            &ChatParams { temperature: self.temperature, n: 1 },
            &self.config,
        )?;
        let reply = replies[0].trim();
        reply
            .parse::<f64>()
            .ok()
            .filter(|v| (1.0..=5.0).contains(v))
            .ok_or_else(|| ModelError::Protocol(format!("not a risk estimate: {reply}")))
    }
}

const JUDGE_PROMPT: &str = "You grade answers. Given a question, the ground-truth answer, and a \
model response, reply with exactly one word: correct or incorrect.";

/// LLM judge comparing a response against ground truth.
pub struct HttpJudge {
    pub config: HttpBackendConfig,
    /// Ground-truth lookup supplied by the harness: question -> reference.
    pub references: std::collections::HashMap<String, String>,
}

impl Judge for HttpJudge {
    fn judge(&self, question: &str, answer: &str) -> Result<bool, ModelError> {
        let reference = self
            .references
            .get(question)
            .ok_or_else(|| ModelError::UnknownQuestion(question.to_string()))?;
        let user = format!(
            "Question: {question}\nGround truth: {reference}\nResponse: {answer}\nVerdict:"
        );
        let replies = http_chat(
            &[ChatMessage::system(JUDGE_PROMPT), ChatMessage::user(user)],
            &ChatParams { temperature: 0.0, n: 1 },
            &self.config,
        )?;
        let verdict = replies[0].trim().to_lowercase();
        if verdict.starts_with("correct") {
            Ok(true)
        } else if verdict.starts_with("incorrect") {
            Ok(false)
        } else {
            Err(ModelError::Protocol(format!("unparsable verdict: {verdict}")))
        }
    }
}
