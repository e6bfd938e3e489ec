//! Runtime for composing independently trained generative modules.
//!
//! Modules share latent variables along the edges of a [`ModuleGraph`] and
//! exchange [`Message`]s carrying posteriors over them. This crate holds the
//! message contract, the kernels that fuse or resample those posteriors
//! ([`poe_combine`], [`sir_select`], [`ttot_relay`]) and the sequential
//! scheduler ([`run_schedule`]) that drives a composed model.

pub mod categorical;
pub mod combine;
pub mod error;
pub mod graph;
pub mod message;
pub mod relay;
pub mod rng;
pub mod schedule;
pub mod sir;

pub use categorical::Categorical;
pub use combine::{poe_combine, unigram_rescale, CombineRule, Combined};
pub use error::{CoreError, Result};
pub use graph::{build_graph, relay_id, ConnectionKind, EdgeDecl, GraphSpec, ModuleDecl, ModuleGraph};
pub use message::{Message, ModuleId, Payload, Role, WeightedItem};
pub use relay::ttot_relay;
pub use schedule::{
    run_schedule, BoxError, Delivery, MetricRow, Module, Modules, Observer, ScheduleTrace, Visit,
};
pub use sir::{sir_masses, sir_select, Selection};
