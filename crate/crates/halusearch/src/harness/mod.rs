//! Evaluation harness: dataset loading, baseline decoding methods
//! (direct, chain-of-thought, self-consistency, best-of-N), the full search,
//! and accuracy/latency reports.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{normalize_answer, COT_SUFFIX};
use crate::core::{GenerationContext, SearchConfig};
use crate::engine::{run_search, EngineError, SearchOptions};
use crate::models::{
    policy_generate, Judge, ModelError, PolicyMode, PolicyModel, PolicyOutput, PolicyRequest,
    RewardMode, RewardModel, RewardRequest, SwitchModel,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub reference_answer: String,
    #[serde(rename = "lang", default = "default_lang")]
    pub language_tag: String,
}

fn default_lang() -> String {
    "en".into()
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Loads a line-delimited dataset of {id, question, answer, lang} records.
pub fn load_dataset(text: &str) -> Result<Vec<QaItem>, HarnessError> {
    let mut items = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem = serde_json::from_str(line)
            .map_err(|e| HarnessError::Dataset(format!("line {}: {e}", i + 1)))?;
        if let Some(prev) = seen.insert(item.id.clone(), i + 1) {
            return Err(HarnessError::Dataset(format!(
                "duplicate id {:?} on lines {prev} and {}",
                item.id,
                i + 1
            )));
        }
        items.push(item);
    }
    Ok(items)
}

/// Builds a dataset from the simulated world's questions.
pub fn items_from_world(world: &crate::backends::FactWorld) -> Vec<QaItem> {
    world
        .questions
        .iter()
        .map(|q| QaItem {
            id: q.id.clone(),
            question: q.question.clone(),
            reference_answer: q.answer.clone(),
            language_tag: "en".into(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Direct,
    Cot,
    SelfConsistency(usize),
    BestOfN(usize),
    Mcts,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Cot => "cot",
            Method::SelfConsistency(_) => "self_consistency",
            Method::BestOfN(_) => "best_of_n",
            Method::Mcts => "mcts",
        }
    }
}

fn complete(
    question: &str,
    language_tag: &str,
    policy: &dyn PolicyModel,
    samples: usize,
    temperature: f64,
) -> Result<Vec<String>, ModelError> {
    let request = PolicyRequest {
        context: GenerationContext::new(question, language_tag),
        mode: PolicyMode::FullCompletion,
        samples,
        temperature,
    };
    Ok(policy_generate(policy, &request)?
        .into_iter()
        .map(|o| match o {
            PolicyOutput::Completion(c) => c.text,
            PolicyOutput::Sentence(s) => s.text,
        })
        .collect())
}

/// One full completion from the policy.
pub fn run_direct(
    item: &QaItem,
    policy: &dyn PolicyModel,
    temperature: f64,
) -> Result<String, ModelError> {
    Ok(complete(&item.question, &item.language_tag, policy, 1, temperature)?.remove(0))
}

/// Direct generation with the zero-shot chain-of-thought suffix appended to
/// the prompt; the final answer is the completion's last sentence.
pub fn run_cot(
    item: &QaItem,
    policy: &dyn PolicyModel,
    temperature: f64,
) -> Result<String, ModelError> {
    let question = format!("{}{}", item.question, COT_SUFFIX);
    let request = PolicyRequest {
        context: GenerationContext::new(question, item.language_tag.clone()),
        mode: PolicyMode::FullCompletion,
        samples: 1,
        temperature,
    };
    let output = policy_generate(policy, &request)?.remove(0);
    match output {
        PolicyOutput::Completion(c) => c
            .sentences
            .last()
            .map(|s| s.text.clone())
            .ok_or_else(|| ModelError::Protocol("empty completion".into())),
        PolicyOutput::Sentence(s) => Ok(s.text),
    }
}

/// n sampled completions, pooled by the judge's normalization; the modal
/// answer wins, ties going to the earliest sampled.
pub fn run_self_consistency(
    item: &QaItem,
    policy: &dyn PolicyModel,
    n: usize,
    temperature: f64,
) -> Result<String, ModelError> {
    if n == 0 {
        return Err(ModelError::InvalidRequest("n must be >= 1".into()));
    }
    let completions = complete(&item.question, &item.language_tag, policy, n, temperature)?;
    let mut votes: Vec<(String, String, usize)> = Vec::new(); // (key, answer, count)
    for completion in &completions {
        let key = normalize_answer(completion);
        match votes.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, _, count)) => *count += 1,
            None => votes.push((key, completion.clone(), 1)),
        }
    }
    // max_by_key keeps the last maximum; iterate in reverse so the earliest
    // sampled answer wins ties.
    Ok(votes
        .into_iter()
        .rev()
        .max_by_key(|(_, _, count)| *count)
        .map(|(_, answer, _)| answer)
        .expect("n >= 1 completions"))
}

/// n completions scored by the reward model; the highest mapped value wins,
/// ties going to the earliest sampled. Samples whose scoring fails are
/// dropped; all samples failing is an error.
pub fn run_best_of_n(
    item: &QaItem,
    policy: &dyn PolicyModel,
    reward: &dyn RewardModel,
    n: usize,
    temperature: f64,
) -> Result<String, ModelError> {
    if n == 0 {
        return Err(ModelError::InvalidRequest("n must be >= 1".into()));
    }
    let completions = complete(&item.question, &item.language_tag, policy, n, temperature)?;
    let mut best: Option<(f64, String)> = None;
    let mut last_err = None;
    for completion in completions {
        let request = RewardRequest {
            question: item.question.clone(),
            answer_fragment: completion.clone(),
            reference_answer: None,
            mode: RewardMode::Generative,
        };
        match reward.score(&request) {
            Ok(score) => {
                if best.as_ref().map_or(true, |(v, _)| score.mapped_value > *v) {
                    best = Some((score.mapped_value, completion));
                }
            }
            Err(err) => {
                log::warn!("best-of-n sample dropped: {err}");
                last_err = Some(err);
            }
        }
    }
    best.map(|(_, answer)| answer)
        .ok_or_else(|| last_err.unwrap_or_else(|| ModelError::Protocol("no samples".into())))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemResult {
    pub id: String,
    pub correct: bool,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slow_step_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub per_item: Vec<ItemResult>,
    /// None marks an empty dataset (accuracy undefined).
    pub accuracy: Option<f64>,
    pub mean_time: f64,
    pub error_count: usize,
}

impl EvalReport {
    fn aggregate(method: &str, per_item: Vec<ItemResult>) -> EvalReport {
        let n = per_item.len();
        let accuracy = (n > 0)
            .then(|| per_item.iter().filter(|r| r.correct).count() as f64 / n as f64);
        let mean_time = if n > 0 {
            per_item.iter().map(|r| r.wall_time).sum::<f64>() / n as f64
        } else {
            0.0
        };
        let error_count = per_item.iter().filter(|r| r.error.is_some()).count();
        EvalReport { method: method.into(), per_item, accuracy, mean_time, error_count }
    }

    pub fn mean_slow_step_ratio(&self) -> Option<f64> {
        let ratios: Vec<f64> =
            self.per_item.iter().filter_map(|r| r.slow_step_ratio).collect();
        if ratios.is_empty() {
            None
        } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        }
    }
}

/// Everything a method needs to run: models, search settings, worker count.
pub struct EvalContext<'a> {
    pub policy: &'a dyn PolicyModel,
    pub reward: &'a dyn RewardModel,
    pub switch: &'a dyn SwitchModel,
    pub judge: &'a dyn Judge,
    pub config: &'a SearchConfig,
    pub jobs: usize,
}

fn run_item(item: &QaItem, method: Method, ctx: &EvalContext<'_>) -> ItemResult {
    let start = Instant::now();
    let mut slow_step_ratio = None;
    let answer: Result<String, String> = match method {
        Method::Direct => {
            run_direct(item, ctx.policy, ctx.config.temperature).map_err(|e| e.to_string())
        }
        Method::Cot => {
            run_cot(item, ctx.policy, ctx.config.temperature).map_err(|e| e.to_string())
        }
        Method::SelfConsistency(n) => {
            run_self_consistency(item, ctx.policy, n, ctx.config.temperature)
                .map_err(|e| e.to_string())
        }
        Method::BestOfN(n) => {
            run_best_of_n(item, ctx.policy, ctx.reward, n, ctx.config.temperature)
                .map_err(|e| e.to_string())
        }
        Method::Mcts => {
            let mut options = SearchOptions::new(item.id.clone());
            options.language_tag = item.language_tag.clone();
            run_search(&item.question, ctx.config, ctx.policy, ctx.reward, ctx.switch, &options)
                .map(|result| {
                    slow_step_ratio = Some(result.slow_step_ratio);
                    result.answer
                })
                .map_err(|e| e.to_string())
        }
    };
    let wall_time = start.elapsed().as_secs_f64();
    match answer {
        Ok(answer) => {
            let correct = ctx.judge.judge(&item.question, &answer).unwrap_or(false);
            ItemResult { id: item.id.clone(), correct, wall_time, slow_step_ratio, error: None }
        }
        Err(error) => ItemResult {
            id: item.id.clone(),
            correct: false,
            wall_time,
            slow_step_ratio,
            error: Some(error),
        },
    }
}

/// Evaluates one method over the dataset, judging every answer. Items run in
/// up to `jobs` parallel workers; the report is assembled in dataset order and
/// per-item errors are recorded, not fatal.
pub fn evaluate_method(dataset: &[QaItem], method: Method, ctx: &EvalContext<'_>) -> EvalReport {
    let per_item: Vec<ItemResult> = if ctx.jobs <= 1 {
        dataset.iter().map(|item| run_item(item, method, ctx)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.jobs)
            .build()
            .expect("worker pool");
        pool.install(|| {
            use rayon::prelude::*;
            dataset.par_iter().map(|item| run_item(item, method, ctx)).collect()
        })
    };
    EvalReport::aggregate(method.name(), per_item)
}

/// Plain-text comparison table over several reports.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "method            accuracy  mean_time_s  slow_ratio  errors\n",
    );
    for report in reports {
        let accuracy = report
            .accuracy
            .map(|a| format!("{a:.3}"))
            .unwrap_or_else(|| "n/a".into());
        let ratio = report
            .mean_slow_step_ratio()
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<17} {:>8} {:>12.4} {:>11} {:>7}\n",
            report.method, accuracy, report.mean_time, ratio, report.error_count
        ));
    }
    out
}
