//! Canonical tree document codec.
//!
//! One document per search: `{config, nodes, root_id, termination_reason}`
//! with node fields `{id, parent, text, n, v, terminal, children}`. The
//! writer is hand-rolled so output is byte-deterministic: keys sorted, no
//! whitespace, floats at 9 significant digits.

use serde::Deserialize;

use super::tree::{NodeId, SearchNode, SearchTree};
use super::types::{SearchConfig, Sentence, TerminationKind, TerminationReason};
use super::CoreError;

/// A serializable search snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeDocument {
    pub config: SearchConfig,
    pub tree: SearchTree,
    pub termination_reason: TerminationReason,
}

/// Formats a float with 9 significant digits in scientific notation. Pure
/// function of the value, so equal trees serialize to equal bytes.
pub fn fmt_sig9(v: f64) -> String {
    format!("{:.8e}", v)
}

fn escape_into(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Serializes a tree document to canonical JSON.
pub fn serialize_tree(doc: &TreeDocument) -> String {
    let mut out = String::new();
    out.push_str("{\"config\":{");
    let c = &doc.config;
    out.push_str(&format!("\"expansions_k\":{},", c.expansions_k));
    out.push_str(&format!("\"gamma\":{},", fmt_sig9(c.gamma)));
    out.push_str(&format!("\"max_iterations_m\":{},", c.max_iterations_m));
    out.push_str(&format!("\"reward_threshold\":{},", fmt_sig9(c.reward_threshold)));
    out.push_str(&format!("\"rollouts_m\":{},", c.rollouts_m));
    out.push_str(&format!("\"seed\":{},", c.seed));
    out.push_str(&format!("\"temperature\":{},", fmt_sig9(c.temperature)));
    out.push_str(&format!("\"uct_weight_w\":{}", fmt_sig9(c.uct_weight_w)));
    out.push_str("},\"nodes\":[");
    for (i, node) in doc.tree.nodes().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"children\":[");
        for (j, child) in node.children.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&child.0.to_string());
        }
        out.push_str("],");
        out.push_str(&format!("\"id\":{},", node.id.0));
        out.push_str(&format!("\"n\":{},", node.visit_count));
        match node.parent {
            Some(p) => out.push_str(&format!("\"parent\":{},", p.0)),
            None => out.push_str("\"parent\":null,"),
        }
        out.push_str(&format!("\"terminal\":{},", node.terminal));
        out.push_str("\"text\":");
        escape_into(&node.sentence.text, &mut out);
        out.push(',');
        out.push_str(&format!("\"v\":{}", fmt_sig9(node.value)));
        out.push('}');
    }
    out.push_str(&format!("],\"root_id\":{},", doc.tree.root_id().0));
    out.push_str("\"termination_reason\":{");
    out.push_str(&format!(
        "\"iterations_used\":{},\"kind\":\"{}\"",
        doc.termination_reason.iterations_used,
        doc.termination_reason.kind.as_str()
    ));
    out.push_str("}}");
    out
}

#[derive(Deserialize)]
struct RawDocument {
    config: SearchConfig,
    nodes: Vec<RawNode>,
    root_id: usize,
    termination_reason: RawTermination,
}

#[derive(Deserialize)]
struct RawNode {
    id: usize,
    parent: Option<usize>,
    text: String,
    n: u64,
    v: f64,
    terminal: bool,
    children: Vec<usize>,
}

#[derive(Deserialize)]
struct RawTermination {
    kind: String,
    iterations_used: u64,
}

/// Parses a tree document, validating structure. Malformed references are
/// reported with the offending node id.
pub fn deserialize_tree(text: &str) -> Result<TreeDocument, CoreError> {
    let raw: RawDocument =
        serde_json::from_str(text).map_err(|e| CoreError::TreeJson(e.to_string()))?;
    let n = raw.nodes.len();
    if raw.root_id != 0 || n == 0 {
        return Err(CoreError::TreeParse {
            node: raw.root_id.to_string(),
            reason: "root_id must be 0 and present".into(),
        });
    }
    let mut nodes = Vec::with_capacity(n);
    for (i, rn) in raw.nodes.iter().enumerate() {
        if rn.id != i {
            return Err(CoreError::TreeParse {
                node: rn.id.to_string(),
                reason: format!("node id {} out of order at position {}", rn.id, i),
            });
        }
        match rn.parent {
            None if i != 0 => {
                return Err(CoreError::TreeParse {
                    node: rn.id.to_string(),
                    reason: "only the root may lack a parent".into(),
                });
            }
            Some(p) if p >= n => {
                return Err(CoreError::TreeParse {
                    node: rn.id.to_string(),
                    reason: format!("references missing parent {}", p),
                });
            }
            Some(p) if i == 0 => {
                return Err(CoreError::TreeParse {
                    node: rn.id.to_string(),
                    reason: format!("root must not have parent {}", p),
                });
            }
            Some(p) if p >= i => {
                return Err(CoreError::TreeParse {
                    node: rn.id.to_string(),
                    reason: format!("parent {} does not precede node", p),
                });
            }
            _ => {}
        }
        for &c in &rn.children {
            if c >= n {
                return Err(CoreError::TreeParse {
                    node: rn.id.to_string(),
                    reason: format!("lists missing child {}", c),
                });
            }
        }
        nodes.push(SearchNode {
            id: NodeId(i),
            parent: rn.parent.map(NodeId),
            sentence: Sentence::new(rn.text.clone(), rn.terminal),
            visit_count: rn.n,
            value: rn.v,
            children: Vec::new(),
            terminal: rn.terminal,
        });
    }
    let tree = SearchTree::from_parts(nodes);
    // Declared child lists must agree with the rebuilt ones.
    for (rn, node) in raw.nodes.iter().zip(tree.nodes()) {
        let rebuilt: Vec<usize> = node.children.iter().map(|c| c.0).collect();
        if rn.children != rebuilt {
            return Err(CoreError::TreeParse {
                node: rn.id.to_string(),
                reason: "children list inconsistent with parent pointers".into(),
            });
        }
    }
    tree.check_invariants().map_err(|reason| CoreError::TreeParse {
        node: "?".into(),
        reason,
    })?;
    let kind = match raw.termination_reason.kind.as_str() {
        "max_iterations" => TerminationKind::MaxIterations,
        "reward_threshold_met" => TerminationKind::RewardThresholdMet,
        other => {
            return Err(CoreError::TreeParse {
                node: "termination_reason".into(),
                reason: format!("unknown kind {:?}", other),
            });
        }
    };
    Ok(TreeDocument {
        config: raw.config,
        tree,
        termination_reason: TerminationReason {
            kind,
            iterations_used: raw.termination_reason.iterations_used,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_with_tree(tree: SearchTree) -> TreeDocument {
        TreeDocument {
            config: SearchConfig::default(),
            tree,
            termination_reason: TerminationReason {
                kind: TerminationKind::MaxIterations,
                iterations_used: 0,
            },
        }
    }

    #[test]
    fn root_only_round_trip() {
        let doc = doc_with_tree(SearchTree::new());
        let bytes = serialize_tree(&doc);
        let back = deserialize_tree(&bytes).unwrap();
        assert_eq!(back, doc);
        // Re-serialization is byte-identical.
        assert_eq!(serialize_tree(&back), bytes);
    }

    #[test]
    fn missing_parent_reference_is_a_parse_error() {
        let doc = r#"{"config":{"expansions_k":1,"gamma":0.0,"max_iterations_m":1,
            "reward_threshold":0.75,"rollouts_m":1,"seed":0,"temperature":0.9,
            "uct_weight_w":0.4},
            "nodes":[
              {"children":[1],"id":0,"n":0,"parent":null,"terminal":false,"text":"","v":0.0},
              {"children":[],"id":1,"n":1,"parent":7,"terminal":false,"text":"A.","v":0.5}
            ],"root_id":0,
            "termination_reason":{"iterations_used":1,"kind":"max_iterations"}}"#;
        let err = deserialize_tree(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("node 1"), "error should name node 1: {msg}");
        assert!(msg.contains("missing parent 7"), "{msg}");
    }

    #[test]
    fn float_formatting_is_nine_significant_digits() {
        assert_eq!(fmt_sig9(0.75), "7.50000000e-1");
        assert_eq!(fmt_sig9(0.0), "0.00000000e0");
        assert_eq!(fmt_sig9(1.0 / 3.0), "3.33333333e-1");
    }
}
