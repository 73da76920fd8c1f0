//! End-to-end run driver: plans the task, executes the validated graph level
//! by level, and records the complete decision trail.
//!
//! Node contexts are assembled from in-edge sources in edge declaration
//! order. Nodes within a level may execute concurrently; their events are
//! buffered and committed in node-id order so traces are canonical. Failed
//! nodes are re-invoked once (configurable) before the run is declared
//! failed; the partial trace survives every failure path.

use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

use crate::agents::{self, AgentError, AgentRoster};
use crate::backend::Backend;
use crate::engine::{self, EngineError, EngineSettings, SubTaskResult};
use crate::error::GraphError;
use crate::graph::{
    topological_levels, Node, NodeContext, NodeId, NodeKind, Task, TaskExecutionGraph,
};
use crate::trace::{EventKind, NodeEventBuffer, RunTrace, TraceError, TraceWriter};

#[derive(Debug, Error)]
pub enum RunErrorKind {
    #[error("planning failed: {0}")]
    Plan(#[source] AgentError),
    #[error("node {node_id} failed: {source}")]
    Node {
        node_id: NodeId,
        #[source]
        source: EngineError,
    },
    #[error("fusion failed at {node_id}: {source}")]
    Fusion {
        node_id: NodeId,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// A failed run still carries everything recorded up to the failure.
#[derive(Debug, Error)]
#[error("{kind}")]
pub struct RunError {
    pub kind: RunErrorKind,
    pub trace: RunTrace,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace has no plan event")]
    MissingPlan,
    #[error("plan event payload is malformed: {0}")]
    MalformedPlan(String),
    #[error("trace is missing the recorded result of node {node_id}")]
    MissingNodeResult { node_id: NodeId },
    #[error("unknown replay start node {node_id}")]
    UnknownStartNode { node_id: NodeId },
    #[error(transparent)]
    Run(#[from] Box<RunError>),
}

/// The completed run: final text, per-node outputs, and the full trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub run_id: String,
    pub text: String,
    pub per_node: BTreeMap<NodeId, String>,
    pub trace: RunTrace,
}

/// Which nodes to recompute and what to take from the record.
enum ExecutionMode {
    /// Fresh run: every node executes.
    Fresh,
    /// Replay: nodes in `recompute` (all nodes when `None`) execute; the
    /// rest echo their recorded results.
    Replay {
        recorded: BTreeMap<NodeId, String>,
        recompute: Option<BTreeSet<NodeId>>,
    },
}

impl ExecutionMode {
    fn recomputes(&self, node_id: &str) -> bool {
        match self {
            ExecutionMode::Fresh => true,
            ExecutionMode::Replay { recompute, .. } => match recompute {
                None => true,
                Some(set) => set.contains(node_id),
            },
        }
    }

    fn recorded_text(&self, node_id: &str) -> Option<String> {
        match self {
            ExecutionMode::Fresh => None,
            ExecutionMode::Replay { recorded, .. } => recorded.get(node_id).cloned(),
        }
    }
}

enum NodeOutput {
    Text(String),
    SubTask(Box<SubTaskResult>),
}

impl NodeOutput {
    fn text(&self) -> &str {
        match self {
            NodeOutput::Text(t) => t,
            NodeOutput::SubTask(r) => &r.fused_text,
        }
    }
}

/// Incremental trace persistence: commits the yet-unwritten suffix, syncing
/// at node completion.
struct Persister {
    writer: Option<TraceWriter>,
    committed: usize,
}

impl Persister {
    fn sync(&mut self, trace: &RunTrace) {
        if let Some(writer) = &self.writer {
            if writer.commit(&trace.events[self.committed..]).is_ok() {
                self.committed = trace.events.len();
            }
        }
    }
}

/// Run driver configuration plus handles shared by every node.
pub struct Orchestrator<'a> {
    pub catalog: Vec<String>,
    pub settings: EngineSettings,
    pub roster: AgentRoster,
    /// Re-invocations of a failed node before the run is declared failed.
    pub node_retries: u32,
    /// Execute same-level nodes on worker threads.
    pub parallel_nodes: bool,
    pub backend: &'a dyn Backend,
}

impl<'a> Orchestrator<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Orchestrator {
            catalog: Vec::new(),
            settings: EngineSettings::default(),
            roster: AgentRoster::default(),
            node_retries: 1,
            parallel_nodes: true,
            backend,
        }
    }

    /// Plans and executes `task`, persisting the trace to `trace_path` (if
    /// given) as nodes complete. The trace is persisted even when the run
    /// fails.
    pub fn run(
        &self,
        task: &Task,
        run_id: &str,
        trace_path: Option<&Path>,
    ) -> Result<FinalResult, Box<RunError>> {
        let mut trace = RunTrace::new(run_id);
        let writer = match trace_path {
            Some(path) => match TraceWriter::create(path) {
                Ok(w) => Some(w),
                Err(e) => {
                    return Err(Box::new(RunError {
                        kind: RunErrorKind::Trace(e),
                        trace,
                    }))
                }
            },
            None => None,
        };
        let mut persister = Persister {
            writer,
            committed: 0,
        };

        let (plan, graph) = match agents::plan(task, &self.roster, self.backend) {
            Ok(ok) => ok,
            Err(e) => {
                trace.append("T", EventKind::RunError, json!({"error": e.to_string()}));
                persister.sync(&trace);
                return Err(Box::new(RunError {
                    kind: RunErrorKind::Plan(e),
                    trace,
                }));
            }
        };
        trace.append(
            "T",
            EventKind::Plan,
            json!({"task": task, "plan": plan, "graph": graph}),
        );
        persister.sync(&trace);

        self.execute_graph(task, &graph, trace, persister, ExecutionMode::Fresh)
    }

    /// Re-executes a recorded run. Upstream results come from the trace;
    /// `from_node` and everything downstream of it are recomputed, or the
    /// whole graph when `from_node` is `None`. Under a scripted backend a
    /// full replay reproduces the original result and trace byte for byte.
    pub fn replay(
        &self,
        trace: &RunTrace,
        from_node: Option<&str>,
    ) -> Result<FinalResult, ReplayError> {
        let plan_event = trace
            .events_of_kind(EventKind::Plan)
            .next()
            .ok_or(ReplayError::MissingPlan)?;
        let task: Task = serde_json::from_value(plan_event.payload["task"].clone())
            .map_err(|e| ReplayError::MalformedPlan(e.to_string()))?;
        let graph: TaskExecutionGraph =
            serde_json::from_value(plan_event.payload["graph"].clone())
                .map_err(|e| ReplayError::MalformedPlan(e.to_string()))?;

        let recompute: Option<BTreeSet<NodeId>> = match from_node {
            None => None,
            Some(start) => {
                if graph.node(start).is_none() {
                    return Err(ReplayError::UnknownStartNode {
                        node_id: start.to_string(),
                    });
                }
                Some(Self::descendants_including(&graph, start))
            }
        };

        let mut recorded: BTreeMap<NodeId, String> = BTreeMap::new();
        for event in trace.events_of_kind(EventKind::NodeResult) {
            if let Some(text) = event.payload.get("text").and_then(|t| t.as_str()) {
                recorded.insert(event.node_id.clone(), text.to_string());
            }
        }
        if let Some(recompute) = &recompute {
            for node in graph.nodes() {
                if !recompute.contains(&node.id) && !recorded.contains_key(&node.id) {
                    return Err(ReplayError::MissingNodeResult {
                        node_id: node.id.clone(),
                    });
                }
            }
        }

        let mut replay_trace = RunTrace::new(&trace.run_id);
        replay_trace.append("T", EventKind::Plan, plan_event.payload.clone());
        let persister = Persister {
            writer: None,
            committed: 0,
        };
        self.execute_graph(
            &task,
            &graph,
            replay_trace,
            persister,
            ExecutionMode::Replay {
                recorded,
                recompute,
            },
        )
        .map_err(ReplayError::Run)
    }

    fn descendants_including(graph: &TaskExecutionGraph, start: &str) -> BTreeSet<NodeId> {
        let mut out: BTreeSet<NodeId> = BTreeSet::new();
        let mut queue = vec![start.to_string()];
        while let Some(cur) = queue.pop() {
            if out.insert(cur.clone()) {
                for (_, to) in graph.edges().iter().filter(|(from, _)| *from == cur) {
                    queue.push(to.clone());
                }
            }
        }
        out
    }

    fn execute_graph(
        &self,
        task: &Task,
        graph: &TaskExecutionGraph,
        mut trace: RunTrace,
        mut persister: Persister,
        mode: ExecutionMode,
    ) -> Result<FinalResult, Box<RunError>> {
        let levels = match topological_levels(graph) {
            Ok(levels) => levels,
            Err(e) => {
                trace.append("T", EventKind::RunError, json!({"error": e.to_string()}));
                persister.sync(&trace);
                return Err(Box::new(RunError {
                    kind: RunErrorKind::Graph(e),
                    trace,
                }));
            }
        };

        let question_keys: Vec<String> = task
            .metadata
            .get("question_keys")
            .map(|keys| keys.split(',').map(|k| k.trim().to_string()).collect())
            .unwrap_or_default();

        let mut results: BTreeMap<NodeId, String> = BTreeMap::new();
        let mut final_text: Option<String> = None;

        for level in levels {
            // Gather inputs first so workers borrow only immutable state.
            let mut jobs: Vec<(&Node, NodeContext)> = Vec::new();
            for node_id in &level {
                let node = graph.node(node_id).expect("levels cover known nodes");
                let inputs: Vec<(NodeId, String)> = graph
                    .in_edges(node_id)
                    .iter()
                    .map(|(from, _)| {
                        (from.clone(), results.get(from).cloned().unwrap_or_default())
                    })
                    .collect();
                jobs.push((node, NodeContext::new(inputs)));
            }

            let run_job = |node: &Node, context: &NodeContext| {
                if !mode.recomputes(&node.id) {
                    let text = mode
                        .recorded_text(&node.id)
                        .expect("recorded results were checked before execution");
                    return (NodeEventBuffer::new(&node.id), Ok(NodeOutput::Text(text)));
                }
                self.execute_node(node, context, &question_keys)
            };

            type Outcome = (NodeEventBuffer, Result<NodeOutput, RunErrorKind>);
            let outcomes: Vec<Outcome> = if self.parallel_nodes && jobs.len() > 1 {
                let mut slots: Vec<Option<Outcome>> = Vec::new();
                slots.resize_with(jobs.len(), || None);
                let slots = std::sync::Mutex::new(slots);
                std::thread::scope(|scope| {
                    for (i, (node, context)) in jobs.iter().enumerate() {
                        let slots = &slots;
                        let run_job = &run_job;
                        scope.spawn(move || {
                            let outcome = run_job(node, context);
                            slots.lock().unwrap()[i] = Some(outcome);
                        });
                    }
                });
                slots
                    .into_inner()
                    .unwrap()
                    .into_iter()
                    .map(|slot| slot.expect("every node slot is filled"))
                    .collect()
            } else {
                jobs.iter()
                    .map(|(node, context)| run_job(node, context))
                    .collect()
            };

            // Commit buffers in node-id order (levels are sorted), then fail
            // the run if any node failed.
            let mut failure: Option<RunErrorKind> = None;
            for ((node, _), (buffer, outcome)) in jobs.iter().zip(outcomes) {
                buffer.drain_into(&mut trace);
                match outcome {
                    Ok(output) => {
                        let text = output.text().to_string();
                        trace.append(&node.id, EventKind::NodeResult, json!({"text": text}));
                        if node.kind == NodeKind::Fusion {
                            trace.append(&node.id, EventKind::Final, json!({"text": text}));
                            final_text = Some(text.clone());
                        }
                        results.insert(node.id.clone(), text);
                    }
                    Err(kind) => {
                        trace.append(
                            &node.id,
                            EventKind::NodeError,
                            json!({"error": kind.to_string()}),
                        );
                        if failure.is_none() {
                            failure = Some(kind);
                        }
                    }
                }
                persister.sync(&trace);
            }
            if let Some(kind) = failure {
                return Err(Box::new(RunError { kind, trace }));
            }
        }

        let text = final_text.unwrap_or_default();
        Ok(FinalResult {
            run_id: trace.run_id.clone(),
            text,
            per_node: results,
            trace,
        })
    }

    /// Executes one node with the retry policy. The returned buffer holds
    /// retry markers plus the final attempt's events; earlier failed
    /// attempts contribute only their retry marker.
    fn execute_node(
        &self,
        node: &Node,
        context: &NodeContext,
        question_keys: &[String],
    ) -> (NodeEventBuffer, Result<NodeOutput, RunErrorKind>) {
        match node.kind {
            NodeKind::Task => (
                NodeEventBuffer::new(&node.id),
                Ok(NodeOutput::Text(node.spec.clone())),
            ),
            NodeKind::SubTask => {
                let mut retry_markers = NodeEventBuffer::new(&node.id);
                for attempt in 0..=self.node_retries {
                    let mut buffer = NodeEventBuffer::new(&node.id);
                    match engine::run_subtask_node(
                        node,
                        context,
                        &self.catalog,
                        question_keys,
                        &self.settings,
                        &self.roster,
                        self.backend,
                        &mut buffer,
                    ) {
                        Ok(result) => {
                            retry_markers.merge(buffer);
                            return (retry_markers, Ok(NodeOutput::SubTask(Box::new(result))));
                        }
                        Err(e) if attempt < self.node_retries => {
                            retry_markers.push(
                                EventKind::NodeRetry,
                                json!({"attempt": attempt + 1, "error": e.to_string()}),
                            );
                        }
                        Err(e) => {
                            retry_markers.merge(buffer);
                            return (
                                retry_markers,
                                Err(RunErrorKind::Node {
                                    node_id: node.id.clone(),
                                    source: e,
                                }),
                            );
                        }
                    }
                }
                unreachable!("retry loop always returns")
            }
            NodeKind::Fusion => {
                let buffer = NodeEventBuffer::new(&node.id);
                match agents::fuse_sub_tasks(node, context, &self.roster, self.backend) {
                    Ok(text) => (buffer, Ok(NodeOutput::Text(text))),
                    Err(e) => (
                        buffer,
                        Err(RunErrorKind::Fusion {
                            node_id: node.id.clone(),
                            source: e,
                        }),
                    ),
                }
            }
        }
    }
}
