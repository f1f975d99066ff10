//! The MCTS loop: selection, expansion, evaluation, backpropagation,
//! termination, best-path extraction, and the full fast/slow control flow.

mod trace;

#[cfg(test)]
mod tests;

pub use trace::{ChildEvent, IterationEvent, RolloutEvent, SearchTrace};

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

use crate::core::{
    serialize_tree, CoreError, GenerationContext, NodeId, SearchConfig, SearchTree,
    TerminationKind, TerminationReason, ThinkingMode, TreeDocument,
};
use crate::models::{
    policy_generate, ModelError, PolicyMode, PolicyOutput, PolicyRequest, RewardMode,
    RewardModel, RewardRequest, PolicyModel, SwitchLevel, SwitchModel, SwitchRequest,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid config: {0}")]
    Config(#[from] CoreError),
    #[error("{stage} backend failure: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: ModelError,
        /// Where the partial tree was serialized, when a recovery path was
        /// configured.
        recovery: Option<PathBuf>,
    },
}

/// Eq. 1: V + w * sqrt(ln(parent_visits) / node_visits). Unvisited nodes are
/// never UCT-scored; calling this with zero visits is a contract violation.
pub fn uct_score(node_value: f64, node_visits: u64, parent_visits: u64, w: f64) -> f64 {
    assert!(node_visits >= 1, "uct_score: node_visits must be >= 1");
    assert!(parent_visits >= 1, "uct_score: parent_visits must be >= 1");
    node_value + w * ((parent_visits as f64).ln() / node_visits as f64).sqrt()
}

/// Walks from the root, at each level following the evaluated child with the
/// highest UCT score (ties broken by lowest node id), until a node with no
/// evaluated children is reached.
pub fn select_leaf(tree: &SearchTree, w: f64) -> NodeId {
    let mut cur = tree.root_id();
    loop {
        let node = tree.node(cur);
        let parent_visits = node.visit_count.max(1);
        let mut best: Option<(NodeId, f64)> = None;
        for &c in &node.children {
            let child = tree.node(c);
            if !child.evaluated() {
                continue;
            }
            let score = uct_score(child.value, child.visit_count, parent_visits, w);
            // Strict comparison in ascending id order keeps the lowest id on
            // ties.
            if best.is_none() || score > best.unwrap().1 {
                best = Some((c, score));
            }
        }
        match best {
            Some((c, _)) => cur = c,
            None => return cur,
        }
    }
}

/// Expands a leaf with up to `k` policy samples. Duplicate sampled sentences
/// (exact text match after trimming) are merged, so between 1 and k children
/// are created. On backend failure the node remains a leaf.
pub fn expand(
    tree: &mut SearchTree,
    node: NodeId,
    context: &GenerationContext,
    policy: &dyn PolicyModel,
    k: usize,
    temperature: f64,
) -> Result<Vec<NodeId>, EngineError> {
    let target = tree.node(node);
    if target.terminal {
        return Err(EngineError::ContractViolation(format!(
            "expand called on terminal node {node}"
        )));
    }
    if !target.children.is_empty() {
        return Err(EngineError::ContractViolation(format!(
            "expand called on non-leaf node {node}"
        )));
    }
    let request = PolicyRequest {
        context: context.clone(),
        mode: PolicyMode::NextSentence,
        samples: k,
        temperature,
    };
    let outputs = policy_generate(policy, &request)
        .map_err(|source| EngineError::Backend { stage: "policy", source, recovery: None })?;
    let mut seen = HashSet::new();
    let mut created = Vec::new();
    for output in outputs {
        if let PolicyOutput::Sentence(sentence) = output {
            if seen.insert(sentence.text.trim().to_string()) {
                let terminal = sentence.terminal;
                created.push(tree.add_child(node, sentence, terminal));
            }
        }
    }
    Ok(created)
}

/// Evaluates one freshly expanded child: m rollouts are completed by the
/// policy from the child's context and scored by the reward model (each
/// rollout retried once on scoring failure). The mean mapped value becomes
/// the child's initial value and its visit count is set to 1.
pub fn evaluate_child(
    tree: &mut SearchTree,
    child: NodeId,
    question: &str,
    language_tag: &str,
    policy: &dyn PolicyModel,
    reward: &dyn RewardModel,
    m: usize,
    temperature: f64,
) -> Result<ChildEvent, EngineError> {
    if tree.node(child).evaluated() {
        return Err(EngineError::ContractViolation(format!(
            "evaluate called on already-evaluated node {child}"
        )));
    }
    let context = tree.context_for(child, question, language_tag);
    let request = PolicyRequest {
        context: context.clone(),
        mode: PolicyMode::FullCompletion,
        samples: m,
        temperature,
    };
    let outputs = policy_generate(policy, &request)
        .map_err(|source| EngineError::Backend { stage: "policy", source, recovery: None })?;
    let mut rollouts = Vec::with_capacity(m);
    let mut sum = 0.0;
    for output in &outputs {
        let completion = match output {
            PolicyOutput::Completion(c) => c,
            PolicyOutput::Sentence(_) => unreachable!("full completion mode"),
        };
        let reward_request = RewardRequest {
            question: question.to_string(),
            answer_fragment: completion.text.clone(),
            reference_answer: None,
            mode: RewardMode::Generative,
        };
        // One retry per rollout, then fail loudly: scores are never imputed.
        let score = match reward.score(&reward_request) {
            Ok(s) => s,
            Err(first) => {
                log::warn!("reward scoring failed ({first}); retrying once");
                reward.score(&reward_request).map_err(|source| EngineError::Backend {
                    stage: "reward",
                    source,
                    recovery: None,
                })?
            }
        };
        sum += score.mapped_value;
        rollouts.push(RolloutEvent { response: completion.text.clone(), likert: score.likert });
    }
    let value = sum / outputs.len() as f64;
    let node = tree.node_mut(child);
    node.value = value;
    node.visit_count = 1;
    Ok(ChildEvent {
        node: child.0,
        prefix: context.prefix_text(),
        text: tree.node(child).sentence.text.clone(),
        terminal: tree.node(child).terminal,
        value,
        rollouts,
    })
}

/// Eqs. 3-4: for every node on the root-to-leaf path (root included),
/// N += 1 and V becomes the running mean extended by r.
pub fn backpropagate(tree: &mut SearchTree, leaf: NodeId, r: f64) {
    for id in tree.path_to(leaf) {
        let node = tree.node_mut(id);
        let n_old = node.visit_count as f64;
        node.visit_count += 1;
        node.value = (node.value * n_old + r) / (n_old + 1.0);
    }
}

/// Greedy descent from the root by maximal value (ties broken by lowest id),
/// stopping at a terminal node or a leaf.
pub fn extract_best_path(tree: &SearchTree) -> Vec<NodeId> {
    let mut path = vec![tree.root_id()];
    let mut cur = tree.root_id();
    loop {
        let node = tree.node(cur);
        if node.terminal {
            break;
        }
        let mut best: Option<(NodeId, f64)> = None;
        for &c in &node.children {
            let child = tree.node(c);
            if !child.evaluated() {
                continue;
            }
            if best.is_none() || child.value > best.unwrap().1 {
                best = Some((c, child.value));
            }
        }
        match best {
            Some((c, _)) => {
                path.push(c);
                cur = c;
            }
            None => break,
        }
    }
    path
}

/// An in-progress slow-thinking search. [`run_search`] drives it to
/// completion; tests may drive individual iterations via [`Search::step`].
pub struct Search<'a> {
    pub tree: SearchTree,
    config: &'a SearchConfig,
    policy: &'a dyn PolicyModel,
    reward: &'a dyn RewardModel,
    switch: &'a dyn SwitchModel,
    question: String,
    language_tag: String,
    iterations: u64,
    slow_steps: u64,
    total_steps: u64,
    backprop_events: u64,
    threshold_hit: bool,
    pub events: Vec<IterationEvent>,
}

impl<'a> Search<'a> {
    pub fn new(
        question: impl Into<String>,
        config: &'a SearchConfig,
        policy: &'a dyn PolicyModel,
        reward: &'a dyn RewardModel,
        switch: &'a dyn SwitchModel,
        language_tag: impl Into<String>,
    ) -> Self {
        Search {
            tree: SearchTree::new(),
            config,
            policy,
            reward,
            switch,
            question: question.into(),
            language_tag: language_tag.into(),
            iterations: 0,
            slow_steps: 0,
            total_steps: 0,
            backprop_events: 0,
            threshold_hit: false,
            events: Vec::new(),
        }
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Total number of backpropagation events so far; equals the root's
    /// visit count by construction.
    pub fn backprop_events(&self) -> u64 {
        self.backprop_events
    }

    pub fn slow_step_ratio(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.slow_steps as f64 / self.total_steps as f64
        }
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        if self.threshold_hit {
            Some(TerminationReason {
                kind: TerminationKind::RewardThresholdMet,
                iterations_used: self.iterations,
            })
        } else if self.iterations >= self.config.max_iterations_m as u64 {
            Some(TerminationReason {
                kind: TerminationKind::MaxIterations,
                iterations_used: self.iterations,
            })
        } else {
            None
        }
    }

    /// Runs one select / step-switch / expand / evaluate / backpropagate
    /// iteration. Returns false (and does nothing) once terminated.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        if self.termination().is_some() {
            return Ok(false);
        }
        let leaf = select_leaf(&self.tree, self.config.uct_weight_w);

        // A terminal leaf cannot be expanded; its value is re-backpropagated
        // and the iteration still counts toward M.
        if self.tree.node(leaf).terminal {
            let r = self.tree.node(leaf).value;
            backpropagate(&mut self.tree, leaf, r);
            self.backprop_events += 1;
            self.iterations += 1;
            self.events.push(IterationEvent {
                iteration: self.iterations - 1,
                selected: leaf.0,
                terminal_leaf: true,
                step_mode: None,
                children: Vec::new(),
                backprop_reward: r,
                threshold_hit: false,
            });
            return Ok(true);
        }

        let context = self.tree.context_for(leaf, &self.question, &self.language_tag);
        let step_request = SwitchRequest {
            level: SwitchLevel::Step,
            question: self.question.clone(),
            prefix: context.prefix.clone(),
        };
        // Switch failures degrade toward quality: fall back to slow.
        let mode = match self.switch.decide(&step_request) {
            Ok(decision) => decision.mode,
            Err(err) => {
                log::warn!("step switch failed ({err}); falling back to slow thinking");
                ThinkingMode::Slow
            }
        };
        self.total_steps += 1;
        let k = match mode {
            ThinkingMode::Slow => {
                self.slow_steps += 1;
                self.config.expansions_k
            }
            ThinkingMode::Fast => 1,
        };

        let children = expand(
            &mut self.tree,
            leaf,
            &context,
            self.policy,
            k,
            self.config.temperature,
        )?;
        if children.is_empty() {
            return Err(EngineError::ContractViolation(format!(
                "expansion of node {leaf} produced no children"
            )));
        }

        let mut child_events = Vec::with_capacity(children.len());
        let mut threshold_hit = false;
        for &child in &children {
            let event = evaluate_child(
                &mut self.tree,
                child,
                &self.question,
                &self.language_tag,
                self.policy,
                self.reward,
                self.config.rollouts_m,
                self.config.temperature,
            )?;
            let terminal = event.terminal;
            let value = event.value;
            child_events.push(event);
            // Termination compares the initial (evaluation-time) value; the
            // iteration stops right after the triggering child, leaving any
            // remaining siblings unevaluated.
            if terminal && value >= self.config.reward_threshold {
                threshold_hit = true;
                break;
            }
        }

        // One backpropagation event per iteration: the mean of the initial
        // values evaluated this iteration.
        let r = child_events.iter().map(|e| e.value).sum::<f64>() / child_events.len() as f64;
        backpropagate(&mut self.tree, leaf, r);
        self.backprop_events += 1;
        self.iterations += 1;
        self.threshold_hit = threshold_hit;
        self.events.push(IterationEvent {
            iteration: self.iterations - 1,
            selected: leaf.0,
            terminal_leaf: false,
            step_mode: Some(mode),
            children: child_events,
            backprop_reward: r,
            threshold_hit,
        });
        Ok(true)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    pub language_tag: String,
    pub collect_trace: bool,
    /// Partial trees are serialized here when a backend dies mid-search.
    pub recovery_path: Option<PathBuf>,
    /// Ground truth, recorded in the trace for reward-data synthesis.
    pub reference_answer: Option<String>,
    pub run_id: String,
}

impl SearchOptions {
    pub fn new(run_id: impl Into<String>) -> Self {
        SearchOptions {
            language_tag: "en".into(),
            collect_trace: false,
            recovery_path: None,
            reference_answer: None,
            run_id: run_id.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub answer: String,
    pub path: Vec<NodeId>,
    pub tree: SearchTree,
    pub reason: TerminationReason,
    pub wall_time: f64,
    pub slow_step_ratio: f64,
    pub instance_mode: ThinkingMode,
    pub trace: Option<SearchTrace>,
}

impl SearchResult {
    pub fn document(&self, config: &SearchConfig) -> TreeDocument {
        TreeDocument {
            config: config.clone(),
            tree: self.tree.clone(),
            termination_reason: self.reason,
        }
    }
}

/// The full fast/slow control flow: the instance switch routes the question
/// either to a single direct completion (fast) or to the MCTS loop (slow);
/// slow mode iterates until M iterations or a terminal child whose initial
/// value meets the reward threshold, then extracts the greedy best path.
pub fn run_search(
    question: &str,
    config: &SearchConfig,
    policy: &dyn PolicyModel,
    reward: &dyn RewardModel,
    switch: &dyn SwitchModel,
    options: &SearchOptions,
) -> Result<SearchResult, EngineError> {
    config.validate()?;
    let start = Instant::now();

    let instance_request = SwitchRequest {
        level: SwitchLevel::Instance,
        question: question.to_string(),
        prefix: Vec::new(),
    };
    let instance_mode = match switch.decide(&instance_request) {
        Ok(decision) => decision.mode,
        Err(err) => {
            log::warn!("instance switch failed ({err}); falling back to slow thinking");
            ThinkingMode::Slow
        }
    };

    if instance_mode == ThinkingMode::Fast {
        let request = PolicyRequest {
            context: GenerationContext::new(question, options.language_tag.clone()),
            mode: PolicyMode::FullCompletion,
            samples: 1,
            temperature: config.temperature,
        };
        let outputs = policy_generate(policy, &request)
            .map_err(|source| EngineError::Backend { stage: "policy", source, recovery: None })?;
        let answer = match &outputs[0] {
            PolicyOutput::Completion(c) => c.text.clone(),
            PolicyOutput::Sentence(s) => s.text.clone(),
        };
        let tree = SearchTree::new();
        let trace = options.collect_trace.then(|| SearchTrace {
            run_id: options.run_id.clone(),
            question: question.to_string(),
            reference_answer: options.reference_answer.clone(),
            instance_mode,
            events: Vec::new(),
        });
        return Ok(SearchResult {
            answer,
            path: vec![tree.root_id()],
            tree,
            reason: TerminationReason { kind: TerminationKind::MaxIterations, iterations_used: 0 },
            wall_time: start.elapsed().as_secs_f64(),
            slow_step_ratio: 0.0,
            instance_mode,
            trace,
        });
    }

    let mut search = Search::new(
        question,
        config,
        policy,
        reward,
        switch,
        options.language_tag.clone(),
    );
    while search.termination().is_none() {
        if let Err(err) = search.step() {
            return Err(attach_recovery(err, &search, config, options));
        }
    }
    let reason = search.termination().expect("loop exits only on termination");
    let path = extract_best_path(&search.tree);
    let answer = path
        .iter()
        .filter(|&&id| search.tree.node(id).parent.is_some())
        .map(|&id| search.tree.node(id).sentence.text.clone())
        .collect::<Vec<_>>()
        .join(" ");
    let trace = options.collect_trace.then(|| SearchTrace {
        run_id: options.run_id.clone(),
        question: question.to_string(),
        reference_answer: options.reference_answer.clone(),
        instance_mode,
        events: search.events.clone(),
    });
    Ok(SearchResult {
        answer,
        path,
        slow_step_ratio: search.slow_step_ratio(),
        tree: search.tree,
        reason,
        wall_time: start.elapsed().as_secs_f64(),
        instance_mode,
        trace,
    })
}

/// On backend outage the partial tree is serialized to the recovery file (if
/// configured) before the error propagates.
fn attach_recovery(
    err: EngineError,
    search: &Search<'_>,
    config: &SearchConfig,
    options: &SearchOptions,
) -> EngineError {
    let EngineError::Backend { stage, source, .. } = err else {
        return err;
    };
    let mut recovery = None;
    if let Some(path) = &options.recovery_path {
        let doc = TreeDocument {
            config: config.clone(),
            tree: search.tree.clone(),
            termination_reason: TerminationReason {
                kind: TerminationKind::MaxIterations,
                iterations_used: search.iterations(),
            },
        };
        match std::fs::write(path, serialize_tree(&doc)) {
            Ok(()) => recovery = Some(path.clone()),
            Err(io) => log::error!("failed to write recovery file {path:?}: {io}"),
        }
    }
    EngineError::Backend { stage, source, recovery }
}
