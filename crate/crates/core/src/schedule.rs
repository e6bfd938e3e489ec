//! Sequential, bulk-synchronous update scheduler.
//!
//! Nodes are visited in the graph's update order, once per cycle. During a
//! visit a module reads the latest messages addressed to it, re-estimates its
//! parameters and publishes new messages; publications are routed only after
//! the visit returns, so no module ever sees a message from its own future.

use std::any::Any;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{ModuleGraph, NodeKind};
use crate::message::{Message, ModuleId, Payload, Role};
use crate::relay::ttot_relay;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// A trainable component attached to a graph node.
pub trait Module {
    /// One visit: consume inbound messages, reset and re-estimate, publish.
    fn update(&mut self, visit: &mut Visit<'_>) -> std::result::Result<(), BoxError>;

    fn as_any(&self) -> &dyn Any;
}

/// The modules of a graph, keyed by node id.
#[derive(Default)]
pub struct Modules {
    map: BTreeMap<ModuleId, Box<dyn Module>>,
}

impl Modules {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<ModuleId>, module: Box<dyn Module>) {
        self.map.insert(id.into(), module);
    }

    pub fn get<T: 'static>(&self, id: &str) -> Option<&T> {
        self.map
            .get(&ModuleId::from(id))
            .and_then(|m| m.as_any().downcast_ref::<T>())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(&ModuleId::from(id))
    }

    fn get_mut(&mut self, id: &ModuleId) -> Option<&mut Box<dyn Module>> {
        self.map.get_mut(id)
    }
}

/// Latest delivered message per (recipient, variable, original sender).
#[derive(Default, Debug)]
struct Mailbox {
    slots: BTreeMap<(ModuleId, String, ModuleId), Message>,
}

impl Mailbox {
    fn deliver(&mut self, to: ModuleId, message: Message) {
        self.slots
            .insert((to, message.variable.clone(), message.sender.clone()), message);
    }

    fn latest(&self, to: &ModuleId, variable: &str, before: u64) -> Option<&Message> {
        self.slots
            .iter()
            .filter(|((r, v, _), m)| r == to && v == variable && m.epoch < before)
            .map(|(_, m)| m)
            .max_by_key(|m| m.epoch)
    }

    fn from_sender(&self, to: &ModuleId, variable: &str, sender: &ModuleId) -> Option<&Message> {
        self.slots
            .get(&(to.clone(), variable.to_owned(), sender.clone()))
    }
}

/// What a module sees during one visit.
pub struct Visit<'a> {
    module: &'a ModuleId,
    step: u64,
    update: usize,
    mailbox: &'a Mailbox,
    outbox: Vec<(String, Role, Payload)>,
    degenerate: usize,
}

impl<'a> Visit<'a> {
    pub fn module(&self) -> &ModuleId {
        self.module
    }

    /// Zero-based index of the current cycle through the update order.
    pub fn update_index(&self) -> usize {
        self.update
    }

    /// Global visit counter; messages carry the step they were published at.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Most recent message on `variable` addressed to this module.
    pub fn receive(&self, variable: &str) -> Option<&Message> {
        self.mailbox.latest(self.module, variable, self.step)
    }

    pub fn publish(&mut self, variable: impl Into<String>, role: Role, payload: Payload) {
        self.outbox.push((variable.into(), role, payload));
    }

    /// Records that a combination kernel fell back to uniform.
    pub fn flag_degenerate(&mut self, count: usize) {
        self.degenerate += count;
    }
}

/// Receives control after the initial state and after each full cycle.
pub trait Observer {
    fn observe(
        &mut self,
        update: usize,
        modules: &Modules,
    ) -> std::result::Result<Vec<(String, f64)>, BoxError>;
}

impl<F> Observer for F
where
    F: FnMut(usize, &Modules) -> std::result::Result<Vec<(String, f64)>, BoxError>,
{
    fn observe(
        &mut self,
        update: usize,
        modules: &Modules,
    ) -> std::result::Result<Vec<(String, f64)>, BoxError> {
        self(update, modules)
    }
}

/// One routed message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub step: u64,
    pub from: ModuleId,
    pub to: ModuleId,
    pub variable: String,
    pub kind: String,
    pub neutralized: bool,
}

/// Metrics reported by the observer at one point of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub update: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    /// `n_updates + 1` rows; row 0 is the initial state.
    pub rows: Vec<MetricRow>,
    /// Visited node ids in order.
    pub visits: Vec<ModuleId>,
    pub traffic: Vec<Delivery>,
    pub degenerate_combinations: usize,
}

/// Runs the update order `n_updates` times.
pub fn run_schedule(
    graph: &ModuleGraph,
    modules: &mut Modules,
    n_updates: usize,
    observer: &mut dyn Observer,
) -> Result<ScheduleTrace> {
    for node in &graph.nodes {
        if let NodeKind::Module { .. } = node.kind {
            if !modules.contains(node.id.as_str()) {
                return Err(CoreError::config(
                    "module",
                    format!("no implementation attached to `{}`", node.id),
                ));
            }
        }
    }

    let mut trace = ScheduleTrace::default();
    let mut mailbox = Mailbox::default();
    let mut step: u64 = 0;

    let observe = |update: usize, modules: &Modules, observer: &mut dyn Observer| {
        observer
            .observe(update, modules)
            .map(|values| MetricRow {
                update,
                values: values.into_iter().collect(),
            })
            .map_err(|source| CoreError::ModuleFailed {
                module: "observer".into(),
                update,
                source,
            })
    };
    trace.rows.push(observe(0, modules, observer)?);

    for update in 0..n_updates {
        for id in &graph.update_order {
            let node = graph
                .node(id.as_str())
                .ok_or_else(|| CoreError::Routing(format!("unknown node `{id}`")))?;
            trace.visits.push(id.clone());
            match &node.kind {
                NodeKind::Relay { variable } => {
                    relay_visit(graph, id, variable, step, &mut mailbox, &mut trace)?;
                }
                NodeKind::Module { .. } => {
                    let module = modules
                        .get_mut(id)
                        .ok_or_else(|| CoreError::Routing(format!("no module `{id}`")))?;
                    let mut visit = Visit {
                        module: id,
                        step,
                        update,
                        mailbox: &mailbox,
                        outbox: Vec::new(),
                        degenerate: 0,
                    };
                    module
                        .update(&mut visit)
                        .map_err(|source| CoreError::ModuleFailed {
                            module: id.to_string(),
                            update,
                            source,
                        })?;
                    let Visit {
                        outbox, degenerate, ..
                    } = visit;
                    trace.degenerate_combinations += degenerate;
                    for (variable, role, payload) in outbox {
                        payload.validate().map_err(|e| CoreError::ModuleFailed {
                            module: id.to_string(),
                            update,
                            source: Box::new(e),
                        })?;
                        let route = graph.route(id, &variable)?;
                        let neutralized = !route.enabled && role == Role::Belief;
                        let payload = if neutralized { payload.neutral() } else { payload };
                        trace.traffic.push(Delivery {
                            step,
                            from: id.clone(),
                            to: route.to.clone(),
                            variable: variable.clone(),
                            kind: payload.kind().to_owned(),
                            neutralized,
                        });
                        mailbox.deliver(
                            route.to,
                            Message {
                                variable,
                                sender: id.clone(),
                                epoch: step,
                                role,
                                payload,
                            },
                        );
                    }
                }
            }
            step += 1;
        }
        trace.rows.push(observe(update + 1, modules, observer)?);
    }
    Ok(trace)
}

fn relay_visit(
    graph: &ModuleGraph,
    relay: &ModuleId,
    variable: &str,
    step: u64,
    mailbox: &mut Mailbox,
    trace: &mut ScheduleTrace,
) -> Result<()> {
    let edge = graph
        .edge_for(variable)
        .ok_or_else(|| CoreError::Routing(format!("relay `{relay}` has no edge")))?;
    let from_a = mailbox.from_sender(relay, variable, &edge.a).cloned();
    let from_b = mailbox.from_sender(relay, variable, &edge.b).cloned();
    let forwards = match (from_a, from_b) {
        (Some(a), Some(b)) => {
            let (to_a, to_b) = ttot_relay(a, b)?;
            vec![(edge.a.clone(), to_a), (edge.b.clone(), to_b)]
        }
        (Some(a), None) => vec![(edge.b.clone(), a)],
        (None, Some(b)) => vec![(edge.a.clone(), b)],
        (None, None) => Vec::new(),
    };
    for (to, message) in forwards {
        trace.traffic.push(Delivery {
            step,
            from: relay.clone(),
            to: to.clone(),
            variable: variable.to_owned(),
            kind: message.payload.kind().to_owned(),
            neutralized: false,
        });
        mailbox.deliver(to, message);
    }
    Ok(())
}
