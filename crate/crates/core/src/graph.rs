//! Declarative module graphs.
//!
//! A graph names its modules, the latent variables they share (one edge per
//! variable, tagged with the connection pattern the variable forms), and the
//! order in which the scheduler visits nodes. Tail-to-tail edges cannot be
//! wired directly, so [`build_graph`] inserts a relay node `ttot_<variable>`
//! between the two endpoints.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::message::ModuleId;

/// Elemental connection pattern formed by a shared variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectionKind {
    HeadToTail,
    TailToTail,
    HeadToHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleDecl {
    pub id: String,
    pub kind: String,
    #[serde(default = "yes")]
    pub learnable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDecl {
    pub a: String,
    pub b: String,
    pub variable: String,
    pub kind: ConnectionKind,
    /// A disabled edge still carries observations but neutralizes beliefs.
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

/// The graph section of a pipeline description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    /// Number of shared classes `K`.
    pub classes: usize,
    /// Length `L` of sample lists exchanged between modules.
    pub lbest: usize,
    pub seed: u64,
    #[serde(default, rename = "module")]
    pub modules: Vec<ModuleDecl>,
    #[serde(default, rename = "edge")]
    pub edges: Vec<EdgeDecl>,
    #[serde(default)]
    pub update_order: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Module { kind: String, learnable: bool },
    Relay { variable: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: ModuleId,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: ModuleId,
    pub b: ModuleId,
    pub variable: String,
    pub kind: ConnectionKind,
    pub enabled: bool,
    /// Relay mediating a tail-to-tail edge.
    pub relay: Option<ModuleId>,
}

/// Where a message published by a node on a variable goes next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Route {
    pub to: ModuleId,
    pub enabled: bool,
}

/// A validated graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ModuleGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub update_order: Vec<ModuleId>,
    pub classes: usize,
    pub lbest: usize,
    pub seed: u64,
}

pub fn relay_id(variable: &str) -> String {
    format!("ttot_{variable}")
}

/// Validates a graph description and inserts tail-to-tail relays.
pub fn build_graph(spec: &GraphSpec) -> Result<ModuleGraph> {
    if spec.modules.is_empty() {
        return Err(CoreError::config("module", "no modules declared"));
    }
    if spec.classes == 0 {
        return Err(CoreError::config("classes", "class count must be at least 1"));
    }
    if spec.lbest == 0 {
        return Err(CoreError::config("lbest", "sample list length must be at least 1"));
    }

    let mut nodes = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, m) in spec.modules.iter().enumerate() {
        if m.id.is_empty() {
            return Err(CoreError::config(format!("module[{i}]"), "empty module id"));
        }
        if !ids.insert(m.id.clone()) {
            return Err(CoreError::config(
                format!("module[{i}]"),
                format!("duplicate module id `{}`", m.id),
            ));
        }
        nodes.push(Node {
            id: m.id.as_str().into(),
            kind: NodeKind::Module {
                kind: m.kind.clone(),
                learnable: m.learnable,
            },
        });
    }

    let mut edges = Vec::new();
    let mut variables = BTreeMap::new();
    for (i, e) in spec.edges.iter().enumerate() {
        let loc = format!("edge[{i}]");
        for end in [&e.a, &e.b] {
            if !ids.contains(end) {
                return Err(CoreError::config(&loc, format!("unknown module id `{end}`")));
            }
        }
        if e.a == e.b {
            return Err(CoreError::config(
                &loc,
                format!("module `{}` shares `{}` with itself", e.a, e.variable),
            ));
        }
        if let Some(prev) = variables.insert(e.variable.clone(), i) {
            return Err(CoreError::config(
                &loc,
                format!(
                    "shared variable `{}` already claimed by edge[{prev}]; a variable joins exactly two modules",
                    e.variable
                ),
            ));
        }
        let relay = if e.kind == ConnectionKind::TailToTail {
            let id = relay_id(&e.variable);
            if ids.contains(&id) {
                return Err(CoreError::config(&loc, format!("relay id `{id}` collides with a module")));
            }
            nodes.push(Node {
                id: id.as_str().into(),
                kind: NodeKind::Relay {
                    variable: e.variable.clone(),
                },
            });
            Some(ModuleId(id))
        } else {
            None
        };
        edges.push(Edge {
            a: e.a.as_str().into(),
            b: e.b.as_str().into(),
            variable: e.variable.clone(),
            kind: e.kind,
            enabled: e.enabled,
            relay,
        });
    }
    check_head_to_tail_acyclic(&edges)?;

    let known: BTreeSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    let mut update_order = Vec::new();
    for (i, id) in spec.update_order.iter().enumerate() {
        if !known.contains(id.as_str()) {
            return Err(CoreError::config(
                format!("update_order[{i}]"),
                format!("unknown module id `{id}`"),
            ));
        }
        update_order.push(ModuleId(id.clone()));
    }
    for m in spec.modules.iter().filter(|m| m.learnable) {
        if !spec.update_order.contains(&m.id) {
            return Err(CoreError::config(
                "update_order",
                format!("learnable module `{}` is never updated", m.id),
            ));
        }
    }

    Ok(ModuleGraph {
        nodes,
        edges,
        update_order,
        classes: spec.classes,
        lbest: spec.lbest,
        seed: spec.seed,
    })
}

/// Reports the first edge, in declaration order, whose addition closes a
/// directed cycle among head_to_tail edges.
fn check_head_to_tail_acyclic(edges: &[Edge]) -> Result<()> {
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        if e.kind != ConnectionKind::HeadToTail {
            continue;
        }
        // the new edge a -> b closes a cycle iff a is reachable from b
        if reachable(&adjacency, e.b.as_str(), e.a.as_str()) {
            return Err(CoreError::config(
                format!("edge[{i}]"),
                "head_to_tail edges form a cycle",
            ));
        }
        adjacency.entry(e.a.as_str()).or_default().push(e.b.as_str());
    }
    Ok(())
}

fn reachable(adjacency: &BTreeMap<&str, Vec<&str>>, from: &str, to: &str) -> bool {
    let mut stack = vec![from];
    let mut seen = std::collections::BTreeSet::new();
    while let Some(n) = stack.pop() {
        if n == to {
            return true;
        }
        if seen.insert(n) {
            stack.extend(adjacency.get(n).into_iter().flatten().copied());
        }
    }
    false
}

impl ModuleGraph {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == *id)
    }

    pub fn relays(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Relay { .. }))
    }

    pub fn edge_for(&self, variable: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.variable == variable)
    }

    /// Next hop for a message `sender` publishes on `variable`.
    pub fn route(&self, sender: &ModuleId, variable: &str) -> Result<Route> {
        let edge = self
            .edge_for(variable)
            .ok_or_else(|| CoreError::Routing(format!("no edge carries `{variable}`")))?;
        let peer = if edge.a == *sender {
            &edge.b
        } else if edge.b == *sender {
            &edge.a
        } else if edge.relay.as_ref() == Some(sender) {
            return Err(CoreError::Routing(format!(
                "relay `{sender}` forwards through the scheduler, not by publishing"
            )));
        } else {
            return Err(CoreError::Routing(format!(
                "`{sender}` is not an endpoint of `{variable}`"
            )));
        };
        Ok(Route {
            to: edge.relay.clone().unwrap_or_else(|| peer.clone()),
            enabled: edge.enabled,
        })
    }
}
