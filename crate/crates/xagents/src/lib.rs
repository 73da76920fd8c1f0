//! Interpretable rule-based multi-agent orchestration.
//!
//! A task is planned into a directed acyclic execution graph, each sub-task
//! is routed through dynamically generated IF-THEN domain rules whose
//! IF-parts grade the sub-task's membership in knowledge domains, the
//! resulting expert answers are fused by voting and membership-weighted
//! trust, outputs are scored against three benchmark task families, and run
//! outcomes are attributed back to per-domain memberships with Shapley
//! values.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`graph`] — tasks, execution graphs, membership grades, domain rules
//! - [`backend`] — model-completion interface: live HTTP client and a
//!   deterministic scripted backend for replayable tests
//! - [`agents`] — the five agent roles as prompt templates plus strict
//!   parsers from model text to typed results
//! - [`engine`] — vote clustering, membership-weighted trust, conflict
//!   resolution, and the per-node pipeline
//! - [`bench`] — dataset loaders, scorers, and baseline-relative aggregation
//! - [`explain`] — Shapley attribution of outcomes to domain memberships
//! - [`orchestrator`] — end-to-end run driver, tracing, and replay
//! - [`config`] / [`cli`] — configuration and the command-line surface

pub mod agents;
pub mod backend;
pub mod bench;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod explain;
pub mod graph;
pub mod orchestrator;
pub mod trace;

pub use error::GraphError;
pub use graph::{
    topological_levels, validate_teg, DomainRule, ExpertConfig, MembershipTerm, Node, NodeContext,
    NodeId, NodeKind, Task, TaskExecutionGraph, ValidationReport, Violation,
};

#[cfg(doctest)]
mod book {
    //! Runs every code snippet in the guide under `cargo test --doc`.
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(execution_graphs, "../../../book/src/execution-graphs.md");
    chapter!(domain_rules, "../../../book/src/domain-rules.md");
    chapter!(conflict_resolution, "../../../book/src/conflict-resolution.md");
    chapter!(backends, "../../../book/src/backends-and-replay.md");
    chapter!(benchmarks, "../../../book/src/benchmarks.md");
    chapter!(attribution, "../../../book/src/attribution.md");
    chapter!(cli, "../../../book/src/cli.md");
}
