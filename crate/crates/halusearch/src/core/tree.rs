use serde::{Deserialize, Serialize};

use super::types::{GenerationContext, Sentence};

/// Index of a node inside its [`SearchTree`]. Ids are dense and assigned in
/// creation order, which also serves as the deterministic tie-break order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One sentence-level generation step: the sentence, its visit count N and
/// value V. A value is meaningful only once `visit_count >= 1`; freshly
/// expanded children sit at N=0 until evaluation assigns their initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub sentence: Sentence,
    pub visit_count: u64,
    pub value: f64,
    pub children: Vec<NodeId>,
    pub terminal: bool,
}

impl SearchNode {
    pub fn evaluated(&self) -> bool {
        self.visit_count >= 1
    }
}

/// A single-writer search tree. The root holds only the prompt: its sentence
/// is empty and it has no parent.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new() -> Self {
        let root = SearchNode {
            id: NodeId(0),
            parent: None,
            sentence: Sentence::new("", false),
            visit_count: 0,
            value: 0.0,
            children: Vec::new(),
            terminal: false,
        };
        SearchTree { nodes: vec![root] }
    }

    pub fn root_id(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter()
    }

    pub fn add_child(&mut self, parent: NodeId, sentence: Sentence, terminal: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            sentence,
            visit_count: 0,
            value: 0.0,
            children: Vec::new(),
            terminal,
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    /// Root-to-node path, both endpoints included.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Generation context at a node: the question plus the sentences along
    /// the root-to-node path (the root's empty sentence is skipped).
    pub fn context_for(
        &self,
        id: NodeId,
        question: &str,
        language_tag: &str,
    ) -> GenerationContext {
        let mut ctx = GenerationContext::new(question, language_tag);
        for nid in self.path_to(id) {
            let node = self.node(nid);
            if node.parent.is_some() {
                ctx.prefix.push(node.sentence.clone());
            }
        }
        ctx
    }

    /// Depth of the deepest node (root is depth 0).
    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| self.path_to(n.id).len() - 1)
            .max()
            .unwrap_or(0)
    }

    /// Structural well-formedness: parent/child links are mutually consistent,
    /// every node is reachable from the root exactly once (acyclicity), and
    /// values of evaluated nodes lie in [0, 1].
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no root".into());
        }
        if self.nodes[0].parent.is_some() {
            return Err("root must have no parent".into());
        }
        for node in &self.nodes {
            for &c in &node.children {
                if c.0 >= self.nodes.len() {
                    return Err(format!("node {} lists missing child {}", node.id, c));
                }
                if self.node(c).parent != Some(node.id) {
                    return Err(format!("child {} does not point back to {}", c, node.id));
                }
            }
            if let Some(p) = node.parent {
                let count = self.node(p).children.iter().filter(|&&c| c == node.id).count();
                if count != 1 {
                    return Err(format!(
                        "parent {} lists node {} {} times",
                        p, node.id, count
                    ));
                }
            }
            if node.evaluated() && !(0.0..=1.0).contains(&node.value) {
                return Err(format!("node {} value {} outside [0, 1]", node.id, node.value));
            }
        }
        // Reachability from the root covers every node exactly once.
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root_id()];
        while let Some(id) = stack.pop() {
            if seen[id.0] {
                return Err(format!("node {} reached twice (cycle)", id));
            }
            seen[id.0] = true;
            stack.extend(self.node(id).children.iter().copied());
        }
        if let Some(unreached) = seen.iter().position(|&s| !s) {
            return Err(format!("node {} unreachable from root", unreached));
        }
        Ok(())
    }

    /// Rebuilds a tree from raw node data (used by deserialization). Child
    /// lists are reconstructed from the parent pointers in id order.
    pub(crate) fn from_parts(mut nodes: Vec<SearchNode>) -> Self {
        for node in nodes.iter_mut() {
            node.children.clear();
        }
        let parents: Vec<Option<NodeId>> = nodes.iter().map(|n| n.parent).collect();
        for (i, parent) in parents.iter().enumerate() {
            if let Some(p) = parent {
                nodes[p.0].children.push(NodeId(i));
            }
        }
        SearchTree { nodes }
    }
}

impl Default for SearchTree {
    fn default() -> Self {
        Self::new()
    }
}
