//! A deterministic simulated fact world: per question, a DAG of statements
//! labeled truthful or hallucinated, with at least one fully truthful
//! root-to-terminal path. Provides oracle realizations of the policy, reward,
//! switch, and judge interfaces, all pure functions of the world seed.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{segment_with_marker, HallucinationScore, Sentence};
use crate::models::{
    Judge, ModelError, PolicyMode, PolicyModel, PolicyRequest, RewardMode, RewardModel,
    RewardRequest, RiskEstimator, SwitchLevel, SwitchRequest, ThresholdSwitch,
};

pub const WORLD_END_MARKER: &str = "<END>";

/// Zero-shot chain-of-thought suffix; the world resolves questions carrying
/// it back to their base form so CoT runs against the same fact graph.
pub const COT_SUFFIX: &str = " Let's think step by step.";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Statement {
    pub id: usize,
    pub text: String,
    pub truthful: bool,
    pub terminal: bool,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorldQuestion {
    pub id: String,
    pub question: String,
    /// The truthful terminal statement.
    pub answer: String,
    /// Effective hallucination rate drawn for this question.
    pub rate: f64,
    /// Statement ids one level below the (implicit) question root.
    pub roots: Vec<usize>,
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, Copy)]
pub struct WorldParams {
    pub questions: usize,
    pub branch_factor: usize,
    pub depth: usize,
    pub hallucination_rate: f64,
    /// Sampling weight of truthful statements relative to hallucinated ones
    /// (1.0 = uniform; below 1 biases the policy toward hallucinations).
    pub truthful_bias: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            questions: 10,
            branch_factor: 3,
            depth: 3,
            hallucination_rate: 0.5,
            truthful_bias: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FactWorld {
    pub version: u32,
    pub seed: u64,
    pub branch_factor: usize,
    pub depth: usize,
    pub hallucination_rate: f64,
    pub truthful_bias: f64,
    pub questions: Vec<WorldQuestion>,
}

impl FactWorld {
    /// Builds a world from parameters and a seed. Byte-reproducible: the same
    /// inputs always serialize to the same document.
    pub fn generate(params: &WorldParams, seed: u64) -> FactWorld {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut questions = Vec::with_capacity(params.questions);
        for qi in 0..params.questions {
            // Per-question rate drawn around the world rate so instance
            // difficulties spread across the Likert scale; the endpoints 0
            // and 1 stay exact.
            let r = params.hallucination_rate;
            let lo = (2.0 * r - 1.0).max(0.0);
            let hi = (2.0 * r).min(1.0);
            let rate = if lo >= hi { r } else { rng.gen_range(lo..hi) };
            questions.push(Self::generate_question(qi, rate, params, &mut rng));
        }
        FactWorld {
            version: 1,
            seed,
            branch_factor: params.branch_factor,
            depth: params.depth,
            hallucination_rate: params.hallucination_rate,
            truthful_bias: params.truthful_bias,
            questions,
        }
    }

    fn generate_question(
        qi: usize,
        rate: f64,
        params: &WorldParams,
        rng: &mut ChaCha8Rng,
    ) -> WorldQuestion {
        let answer = format!("The answer to topic {qi} is option A{qi}.");
        let mut statements: Vec<Statement> = Vec::new();
        // frontier holds (statement id, on the designated truthful path).
        let mut frontier: Vec<(Option<usize>, bool)> = vec![(None, true)];
        let mut roots = Vec::new();
        for level in 1..=params.depth {
            let terminal = level == params.depth;
            let mut next = Vec::new();
            for &(parent, designated) in &frontier {
                for b in 0..params.branch_factor {
                    let on_path = designated && b == 0;
                    let truthful = on_path || rng.gen::<f64>() >= rate;
                    let id = statements.len();
                    let text = if terminal {
                        if truthful {
                            answer.clone()
                        } else {
                            format!("The answer to topic {qi} is option Z{qi}-{id}.")
                        }
                    } else if truthful {
                        format!("Step {qi}.{id} confirms a documented property of topic {qi}.")
                    } else {
                        format!("Step {qi}.{id} cites an unverifiable source about topic {qi}.")
                    };
                    statements.push(Statement {
                        id,
                        text,
                        truthful,
                        terminal,
                        children: Vec::new(),
                    });
                    match parent {
                        Some(p) => statements[p].children.push(id),
                        None => roots.push(id),
                    }
                    next.push((Some(id), on_path));
                }
            }
            frontier = next;
        }
        WorldQuestion {
            id: format!("q{qi}"),
            question: format!("What is the correct conclusion about topic {qi}?"),
            answer,
            rate,
            roots,
            statements,
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let body = serde_json::to_string_pretty(self).expect("world serializes");
        std::fs::write(path, body)
    }

    pub fn load(path: &Path) -> Result<FactWorld, ModelError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("cannot read world file: {e}")))?;
        serde_json::from_str(&body)
            .map_err(|e| ModelError::Config(format!("cannot parse world file: {e}")))
    }

    /// Resolves a question by exact text, by text with the CoT suffix
    /// stripped, or by id.
    pub fn resolve(&self, question: &str) -> Result<&WorldQuestion, ModelError> {
        let base = question.strip_suffix(COT_SUFFIX).unwrap_or(question);
        self.questions
            .iter()
            .find(|q| q.question == base || q.id == base)
            .ok_or_else(|| ModelError::UnknownQuestion(question.to_string()))
    }

    fn labels<'a>(&self, q: &'a WorldQuestion) -> HashMap<&'a str, bool> {
        q.statements.iter().map(|s| (s.text.as_str(), s.truthful)).collect()
    }

    /// Fraction of hallucinated sentences in an answer. Sentences not found
    /// in the fact graph count as hallucinated.
    pub fn hallucinated_fraction(&self, question: &str, answer: &str) -> Result<f64, ModelError> {
        let q = self.resolve(question)?;
        let labels = self.labels(q);
        let sentences = segment_with_marker(answer, WORLD_END_MARKER);
        if sentences.is_empty() {
            return Err(ModelError::InvalidRequest("answer has no sentences".into()));
        }
        let hallucinated = sentences
            .iter()
            .filter(|s| !labels.get(s.text.as_str()).copied().unwrap_or(false))
            .count();
        Ok(hallucinated as f64 / sentences.len() as f64)
    }

    /// Oracle reward: likert = 1 + round(4 * hallucinated fraction), with
    /// half-away-from-zero rounding.
    pub fn reward_likert(&self, question: &str, answer: &str) -> Result<u8, ModelError> {
        let fraction = self.hallucinated_fraction(question, answer)?;
        Ok(1 + (4.0 * fraction).round() as u8)
    }

    /// Oracle judge: true iff the answer's final sentence matches the
    /// truthful terminal statement under normalization.
    pub fn judge_answer(&self, question: &str, answer: &str) -> Result<bool, ModelError> {
        let q = self.resolve(question)?;
        let sentences = segment_with_marker(answer, WORLD_END_MARKER);
        let last = match sentences.last() {
            Some(s) => s,
            None => return Ok(false),
        };
        Ok(normalize_answer(&last.text) == normalize_answer(&q.answer))
    }

    /// Walks the statement graph along a sentence prefix. `Ok(None)` is the
    /// question root (empty prefix).
    fn locate(
        &self,
        q: &WorldQuestion,
        prefix: &[Sentence],
    ) -> Result<Option<usize>, ModelError> {
        let mut cur: Option<usize> = None;
        for sentence in prefix {
            let candidates = match cur {
                None => &q.roots,
                Some(id) => &q.statements[id].children,
            };
            let found = candidates
                .iter()
                .find(|&&c| q.statements[c].text == sentence.text)
                .copied();
            match found {
                Some(id) => cur = Some(id),
                None => {
                    return Err(ModelError::Protocol(format!(
                        "prefix sentence {:?} not found in fact graph of {}",
                        sentence.text, q.id
                    )));
                }
            }
        }
        Ok(cur)
    }

    fn children_of<'a>(&self, q: &'a WorldQuestion, node: Option<usize>) -> &'a [usize] {
        match node {
            None => &q.roots,
            Some(id) => &q.statements[id].children,
        }
    }

    /// Hallucinated fraction over all statements of a question (instance
    /// difficulty proxy).
    pub fn question_fraction(&self, q: &WorldQuestion) -> f64 {
        if q.statements.is_empty() {
            return 0.0;
        }
        let h = q.statements.iter().filter(|s| !s.truthful).count();
        h as f64 / q.statements.len() as f64
    }

    /// Hallucinated fraction among strict descendants of a node (future risk
    /// proxy for the step switch).
    pub fn descendant_fraction(&self, q: &WorldQuestion, node: Option<usize>) -> f64 {
        let mut total = 0usize;
        let mut hallucinated = 0usize;
        let mut stack: Vec<usize> = self.children_of(q, node).to_vec();
        while let Some(id) = stack.pop() {
            total += 1;
            if !q.statements[id].truthful {
                hallucinated += 1;
            }
            stack.extend(q.statements[id].children.iter().copied());
        }
        if total == 0 {
            0.0
        } else {
            hallucinated as f64 / total as f64
        }
    }
}

/// Case-folds, strips punctuation and articles. Used by the judge and by
/// self-consistency vote pooling.
pub fn normalize_answer(text: &str) -> String {
    let stripped = text.replace(WORLD_END_MARKER, " ");
    let cleaned: String = stripped
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn sample_rng(seed: u64, question_id: &str, prefix: &str, sample: u64) -> ChaCha8Rng {
    let derived = fnv1a64(&[
        &seed.to_le_bytes(),
        question_id.as_bytes(),
        prefix.as_bytes(),
        &sample.to_le_bytes(),
    ]);
    ChaCha8Rng::seed_from_u64(derived)
}

/// Policy over the fact world. Sampling is a pure function of
/// (world seed, question, prefix, sample index).
pub struct WorldPolicy {
    pub world: Arc<FactWorld>,
}

impl WorldPolicy {
    fn choose_child(&self, q: &WorldQuestion, children: &[usize], rng: &mut ChaCha8Rng) -> usize {
        let bias = self.world.truthful_bias;
        let weight = |id: usize| if q.statements[id].truthful { bias } else { 1.0 };
        let total: f64 = children.iter().map(|&c| weight(c)).sum();
        if total <= 0.0 {
            return children[rng.gen_range(0..children.len())];
        }
        let mut x = rng.gen::<f64>() * total;
        for &c in children {
            x -= weight(c);
            if x <= 0.0 {
                return c;
            }
        }
        *children.last().expect("non-empty children")
    }

    fn complete_from(
        &self,
        q: &WorldQuestion,
        start: Option<usize>,
        mut prefix_text: String,
        sample: u64,
    ) -> String {
        let mut parts: Vec<String> = Vec::new();
        let mut cur = start;
        loop {
            if let Some(id) = cur {
                if q.statements[id].terminal {
                    break;
                }
            }
            let children = self.world.children_of(q, cur);
            if children.is_empty() {
                break;
            }
            let mut rng = sample_rng(self.world.seed, &q.id, &prefix_text, sample);
            let next = self.choose_child(q, children, &mut rng);
            let text = q.statements[next].text.clone();
            if prefix_text.is_empty() {
                prefix_text = text.clone();
            } else {
                prefix_text.push(' ');
                prefix_text.push_str(&text);
            }
            parts.push(text);
            cur = Some(next);
        }
        parts.push(WORLD_END_MARKER.to_string());
        parts.join(" ")
    }
}

impl PolicyModel for WorldPolicy {
    fn raw_generate(&self, request: &PolicyRequest) -> Result<Vec<String>, ModelError> {
        let q = self.world.resolve(&request.context.question)?;
        let node = self.world.locate(q, &request.context.prefix)?;
        let prefix_text = request.context.prefix_text();
        let mut out = Vec::with_capacity(request.samples);
        for i in 0..request.samples as u64 {
            match request.mode {
                PolicyMode::NextSentence => {
                    let children = self.world.children_of(q, node);
                    if children.is_empty() {
                        out.push(WORLD_END_MARKER.to_string());
                        continue;
                    }
                    let mut rng = sample_rng(self.world.seed, &q.id, &prefix_text, i);
                    let next = self.choose_child(q, children, &mut rng);
                    let stmt = &q.statements[next];
                    if stmt.terminal {
                        out.push(format!("{} {}", stmt.text, WORLD_END_MARKER));
                    } else {
                        out.push(stmt.text.clone());
                    }
                }
                PolicyMode::FullCompletion => {
                    out.push(self.complete_from(q, node, prefix_text.clone(), i));
                }
            }
        }
        Ok(out)
    }

    fn end_marker(&self) -> &str {
        WORLD_END_MARKER
    }
}

/// Oracle reward over the fact world.
pub struct WorldReward {
    pub world: Arc<FactWorld>,
}

impl RewardModel for WorldReward {
    fn score(&self, request: &RewardRequest) -> Result<HallucinationScore, ModelError> {
        let likert = self.world.reward_likert(&request.question, &request.answer_fragment)?;
        let critique = match request.mode {
            RewardMode::Generative => None,
            RewardMode::Critique => {
                let fraction = self
                    .world
                    .hallucinated_fraction(&request.question, &request.answer_fragment)?;
                Some(format!(
                    "{:.0}% of the statements in this answer are unsupported by the fact graph.",
                    fraction * 100.0
                ))
            }
        };
        HallucinationScore::new(likert, critique)
            .map_err(|e| ModelError::Protocol(e.to_string()))
    }
}

/// Oracle judge over the fact world.
pub struct WorldJudge {
    pub world: Arc<FactWorld>,
}

impl Judge for WorldJudge {
    fn judge(&self, question: &str, answer: &str) -> Result<bool, ModelError> {
        self.world.judge_answer(question, answer)
    }
}

/// Likert-scale risk estimate from the fact graph: question-wide hallucinated
/// fraction at instance level, strict-descendant fraction at step level.
pub struct WorldRiskEstimator {
    pub world: Arc<FactWorld>,
}

impl RiskEstimator for WorldRiskEstimator {
    fn estimate(&self, request: &SwitchRequest) -> Result<f64, ModelError> {
        let q = self.world.resolve(&request.question)?;
        let fraction = match request.level {
            SwitchLevel::Instance => self.world.question_fraction(q),
            SwitchLevel::Step => {
                let node = self.world.locate(q, &request.prefix)?;
                self.world.descendant_fraction(q, node)
            }
        };
        Ok(1.0 + 4.0 * fraction)
    }
}

/// Threshold switch backed by the world risk estimator.
pub fn world_switch(world: Arc<FactWorld>, gamma: f64) -> ThresholdSwitch<WorldRiskEstimator> {
    ThresholdSwitch { estimator: WorldRiskEstimator { world }, gamma }
}
