//! Training-data synthesis: reward-model response/score pairs harvested from
//! search traces, and fast/slow switch labels derived from evaluated trees
//! and direct generations.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{GenerationContext, SearchTree, ThinkingLevel};
use crate::engine::SearchTrace;
use crate::models::{
    policy_generate, Judge, ModelError, PolicyMode, PolicyModel, PolicyOutput, PolicyRequest,
    RewardMode, RewardModel, RewardRequest,
};

/// One response-score training pair for the reward model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RewardRecord {
    pub question: String,
    pub answer_prefix: String,
    pub completed_response: String,
    pub likert: u8,
    /// Present exactly on the critique-based record set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critique: Option<String>,
    pub source_run: String,
}

/// One fast/slow training label for the switch model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SwitchRecord {
    pub level: ThinkingLevel,
    pub question: String,
    /// Empty at instance level.
    pub prefix: String,
    /// 1 = slow thinking.
    pub label: u8,
    /// Step level only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_used: Option<f64>,
}

/// A scoring failure: the rollout was skipped, not imputed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreReject {
    pub source_run: String,
    pub response: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct RewardCollection {
    pub records: Vec<RewardRecord>,
    pub rejects: Vec<ScoreReject>,
}

/// Harvests every rollout response from the traces and rescores it with the
/// given scorer. With `with_reference`, the trace's ground-truth answer is
/// passed into the scoring prompt as a reference.
pub fn collect_reward_data(
    traces: &[SearchTrace],
    scorer: &dyn RewardModel,
    mode: RewardMode,
    with_reference: bool,
) -> RewardCollection {
    let mut out = RewardCollection::default();
    for trace in traces {
        for event in &trace.events {
            for child in &event.children {
                for rollout in &child.rollouts {
                    let request = RewardRequest {
                        question: trace.question.clone(),
                        answer_fragment: rollout.response.clone(),
                        reference_answer: if with_reference {
                            trace.reference_answer.clone()
                        } else {
                            None
                        },
                        mode,
                    };
                    match scorer.score(&request) {
                        Ok(score) => out.records.push(RewardRecord {
                            question: trace.question.clone(),
                            answer_prefix: child.prefix.clone(),
                            completed_response: rollout.response.clone(),
                            likert: score.likert,
                            critique: score.critique,
                            source_run: trace.run_id.clone(),
                        }),
                        Err(err) => out.rejects.push(ScoreReject {
                            source_run: trace.run_id.clone(),
                            response: rollout.response.clone(),
                            reason: err.to_string(),
                        }),
                    }
                }
            }
        }
    }
    out
}

/// Token-set Jaccard similarity over whitespace tokens.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: HashSet<&str> = a.split_whitespace().collect();
    let sb: HashSet<&str> = b.split_whitespace().collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct BalanceStats {
    pub records_in: usize,
    pub dedup_removed: usize,
    pub records_out: usize,
    /// Per-Likert-class counts after balancing.
    pub class_counts: BTreeMap<u8, usize>,
}

/// Near-duplicate removal followed by class balancing. A record is dropped
/// when its response has Jaccard similarity >= 0.9 with an earlier kept
/// record of the same question; every Likert class is then downsampled
/// (seeded, order-preserving) to the size of the smallest non-empty class.
/// Idempotent: kept records are pairwise below the similarity threshold and
/// classes already at the target size are passed through untouched.
pub fn dedup_and_balance(
    records: Vec<RewardRecord>,
    seed: u64,
) -> (Vec<RewardRecord>, BalanceStats) {
    let mut stats = BalanceStats { records_in: records.len(), ..BalanceStats::default() };

    let mut kept: Vec<RewardRecord> = Vec::with_capacity(records.len());
    for record in records {
        let duplicate = kept.iter().any(|k| {
            k.question == record.question
                && jaccard(&k.completed_response, &record.completed_response) >= 0.9
        });
        if duplicate {
            stats.dedup_removed += 1;
        } else {
            kept.push(record);
        }
    }

    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, record) in kept.iter().enumerate() {
        by_class.entry(record.likert).or_default().push(i);
    }
    let target = by_class.values().map(Vec::len).min().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = Vec::new();
    for indices in by_class.values() {
        if indices.len() == target {
            selected.extend(indices);
        } else {
            let mut sample: Vec<usize> =
                indices.choose_multiple(&mut rng, target).copied().collect();
            sample.sort_unstable();
            selected.extend(sample);
        }
    }
    selected.sort_unstable();

    let mut keep_flags = vec![false; kept.len()];
    for i in selected {
        keep_flags[i] = true;
    }
    let balanced: Vec<RewardRecord> = kept
        .into_iter()
        .zip(keep_flags)
        .filter_map(|(r, keep)| keep.then_some(r))
        .collect();

    for record in &balanced {
        *stats.class_counts.entry(record.likert).or_insert(0) += 1;
    }
    stats.records_out = balanced.len();
    (balanced, stats)
}

/// One step-level switch record per evaluated non-root node: label 1 iff the
/// node's raw Likert-scale hallucination estimate (5 - 4*value) strictly
/// exceeds gamma.
pub fn label_step_switch(
    tree: &SearchTree,
    question: &str,
    gamma: f64,
) -> Vec<SwitchRecord> {
    let mut records = Vec::new();
    for node in tree.nodes() {
        if node.parent.is_none() || !node.evaluated() {
            continue;
        }
        let estimate = 5.0 - 4.0 * node.value;
        let context = tree.context_for(node.id, question, "en");
        records.push(SwitchRecord {
            level: ThinkingLevel::Step,
            question: question.to_string(),
            prefix: context.prefix_text(),
            label: u8::from(estimate > gamma),
            gamma_used: Some(gamma),
        });
    }
    records
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceSkip {
    pub question: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct InstanceLabels {
    pub records: Vec<SwitchRecord>,
    pub skipped: Vec<InstanceSkip>,
}

/// One instance-level switch record per question: a single direct generation,
/// judged against ground truth; correct answers get label 0 (fast suffices).
/// Policy or judge failures skip the question and are reported.
pub fn label_instance_switch(
    questions: &[String],
    policy: &dyn PolicyModel,
    judge: &dyn Judge,
    temperature: f64,
) -> InstanceLabels {
    let mut out = InstanceLabels::default();
    for question in questions {
        match direct_answer(question, policy, temperature)
            .and_then(|answer| judge.judge(question, &answer))
        {
            Ok(correct) => out.records.push(SwitchRecord {
                level: ThinkingLevel::Instance,
                question: question.clone(),
                prefix: String::new(),
                label: u8::from(!correct),
                gamma_used: None,
            }),
            Err(err) => out.skipped.push(InstanceSkip {
                question: question.clone(),
                reason: err.to_string(),
            }),
        }
    }
    out
}

fn direct_answer(
    question: &str,
    policy: &dyn PolicyModel,
    temperature: f64,
) -> Result<String, ModelError> {
    let request = PolicyRequest {
        context: GenerationContext::new(question, "en"),
        mode: PolicyMode::FullCompletion,
        samples: 1,
        temperature,
    };
    let outputs = policy_generate(policy, &request)?;
    Ok(match outputs.into_iter().next().expect("one sample") {
        PolicyOutput::Completion(c) => c.text,
        PolicyOutput::Sentence(s) => s.text,
    })
}

/// Serializes records to line-delimited JSON, one object per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}
