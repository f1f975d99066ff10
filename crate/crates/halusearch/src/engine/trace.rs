//! Search trace: one meta record plus one record per iteration, written as
//! line-delimited JSON. Traces feed the training-data synthesis pipeline.

use serde::{Deserialize, Serialize};

use crate::core::ThinkingMode;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RolloutEvent {
    pub response: String,
    pub likert: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChildEvent {
    pub node: usize,
    /// Answer fragment up to and including this child's sentence.
    pub prefix: String,
    pub text: String,
    pub terminal: bool,
    pub value: f64,
    pub rollouts: Vec<RolloutEvent>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IterationEvent {
    pub iteration: u64,
    pub selected: usize,
    /// True when the selected leaf was terminal and only its value was
    /// re-backpropagated (no expansion happened).
    pub terminal_leaf: bool,
    /// Absent on terminal-leaf iterations.
    pub step_mode: Option<ThinkingMode>,
    pub children: Vec<ChildEvent>,
    pub backprop_reward: f64,
    /// The reward threshold was met by a terminal child this iteration; the
    /// child loop stopped immediately after the triggering child.
    pub threshold_hit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SearchTrace {
    pub run_id: String,
    pub question: String,
    pub reference_answer: Option<String>,
    pub instance_mode: ThinkingMode,
    pub events: Vec<IterationEvent>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine<'a> {
    r#type: &'a str,
    run_id: String,
    question: String,
    reference_answer: Option<String>,
    instance_mode: ThinkingMode,
}

#[derive(Serialize, Deserialize)]
struct IterationLine<'a> {
    r#type: &'a str,
    #[serde(flatten)]
    event: IterationEvent,
}

impl SearchTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = MetaLine {
            r#type: "meta",
            run_id: self.run_id.clone(),
            question: self.question.clone(),
            reference_answer: self.reference_answer.clone(),
            instance_mode: self.instance_mode,
        };
        out.push_str(&serde_json::to_string(&meta).expect("meta serializes"));
        out.push('\n');
        for event in &self.events {
            let line = IterationLine { r#type: "iteration", event: event.clone() };
            out.push_str(&serde_json::to_string(&line).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<SearchTrace, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or("empty trace file")?;
        let meta: MetaLine =
            serde_json::from_str(first).map_err(|e| format!("bad meta line: {e}"))?;
        if meta.r#type != "meta" {
            return Err(format!("first line must be meta, got {:?}", meta.r#type));
        }
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let parsed: IterationLine =
                serde_json::from_str(line).map_err(|e| format!("bad line {}: {e}", i + 2))?;
            events.push(parsed.event);
        }
        Ok(SearchTrace {
            run_id: meta.run_id,
            question: meta.question,
            reference_answer: meta.reference_answer,
            instance_mode: meta.instance_mode,
            events,
        })
    }
}
