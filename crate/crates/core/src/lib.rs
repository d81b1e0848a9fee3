//! Discrete-time simulator for ultra-reliable low-latency mobile edge computing.
//!
//! UEs split Poisson task arrivals between a local-computation queue and a
//! task-offloading queue. Offloaded bits are transmitted over a shared,
//! interference-limited uplink to a multi-core edge server. Decisions are made
//! on two timescales:
//!
//! * once per frame, UEs are associated with servers by a many-to-one matching
//!   game with externalities ([`matching`]);
//! * every slot, each UE picks its CPU frequency and transmit power from a
//!   KKT characterisation, splits its arrivals, and every server schedules its
//!   cores greedily ([`allocation`]).
//!
//! Reliability is expressed as probabilistic and tail-statistic constraints on
//! queue lengths, enforced through virtual queues ([`queues`]) and checked after
//! the fact with generalized Pareto fits ([`evt`]).
//!
//! The [`engine`] drives the per-slot loop and the baselines; [`par`] provides
//! the data-parallel sweep runner with a sequential fallback when the
//! `parallel` feature is disabled.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod channel;
pub mod config;
pub mod engine;
pub mod evt;
pub mod matching;
pub mod model;
pub mod par;
pub mod queues;
pub mod report;

pub use config::Scenario;
pub use engine::{run_simulation, MetricsRecord, PolicyKind, SimulationOptions};
pub use model::{build_network, NetworkConfig, NetworkState, ServerProfile, UeProfile};
