//! Two-timescale placement and offloading for edge-hosted virtual twins.
//!
//! The crate simulates mobile physical twins (PTs) that keep virtual twins on
//! edge servers (ESs) and drives the TACO Lyapunov controller: per frame it
//! picks access and knowledge granularity, per slot it picks the personalized
//! update fraction, bandwidth and CPU shares, and the offloading choice.

pub mod baselines;
pub mod bcd;
pub mod controller;
pub mod cost;
pub mod metrics;
pub mod mobility;
pub mod oracle;
pub mod pme;
pub mod queues;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod slot;
pub mod traces;
pub mod validate;

pub use cost::{CostBreakdown, LargeDecision, PlacementCosts, SmallDecision};
pub use queues::{QueuePair, SlotBudgets};
pub use scenario::{build_scenario, Scenario, ScenarioError};
pub use slot::{draw_slot, SlotGenerator, SlotState};
