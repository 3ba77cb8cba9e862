//! Continual-reinforcement-learning benchmarking over a built-in
//! procedurally generated gridworld: task schedules with cycles, five
//! baseline agents, a pausing evaluation harness, and forgetting/transfer
//! diagnostics with standard errors.

pub mod agents;
pub mod config;
pub mod env;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod schedule;
