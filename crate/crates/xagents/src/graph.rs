//! Task-execution graphs and the domain vocabulary shared by every other module.
//!
//! A [`TaskExecutionGraph`] is an unweighted directed acyclic graph with one
//! task node (the root), any number of sub-task nodes, and one fusion node
//! (the sink). Graphs are immutable once built; validation reports structural
//! violations as data rather than errors so callers can surface all of them
//! at once.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::error::GraphError;

/// Node identifiers are caller-supplied strings, unique within a graph.
pub type NodeId = String;

/// The input task to a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Task {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, GraphError> {
        let task = Task {
            id: id.into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        };
        if task.text.trim().is_empty() {
            return Err(GraphError::EmptyTaskText { id: task.id });
        }
        Ok(task)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// Role a node plays in the execution graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Task,
    SubTask,
    Fusion,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Task => write!(f, "task"),
            NodeKind::SubTask => write!(f, "sub_task"),
            NodeKind::Fusion => write!(f, "fusion"),
        }
    }
}

/// One node of a [`TaskExecutionGraph`].
///
/// `spec` holds the task text for the task node, the sub-task instruction for
/// sub-task nodes, and the fusion instruction for the fusion node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub spec: String,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind, spec: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            kind,
            spec: spec.into(),
        }
    }
}

/// Six-grade linguistic scale for how strongly a sub-task belongs to a domain.
///
/// The order is total: `High > SubHigh > Medium > MidLow > Lower > Low`, and
/// the numeric image is exactly `{1.0, 0.8, 0.6, 0.4, 0.2, 0.0}`. "Lower" and
/// "Low" are distinct grades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MembershipTerm {
    #[serde(rename = "Low")]
    Low,
    #[serde(rename = "Lower")]
    Lower,
    #[serde(rename = "Mid-Low")]
    MidLow,
    #[serde(rename = "Medium")]
    Medium,
    #[serde(rename = "Sub-High")]
    SubHigh,
    #[serde(rename = "High")]
    High,
}

impl MembershipTerm {
    /// All terms in descending order of strength.
    pub const ALL: [MembershipTerm; 6] = [
        MembershipTerm::High,
        MembershipTerm::SubHigh,
        MembershipTerm::Medium,
        MembershipTerm::MidLow,
        MembershipTerm::Lower,
        MembershipTerm::Low,
    ];

    /// Numeric membership value of the term.
    pub fn value(self) -> f64 {
        match self {
            MembershipTerm::High => 1.0,
            MembershipTerm::SubHigh => 0.8,
            MembershipTerm::Medium => 0.6,
            MembershipTerm::MidLow => 0.4,
            MembershipTerm::Lower => 0.2,
            MembershipTerm::Low => 0.0,
        }
    }
}

impl fmt::Display for MembershipTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MembershipTerm::High => "High",
            MembershipTerm::SubHigh => "Sub-High",
            MembershipTerm::Medium => "Medium",
            MembershipTerm::MidLow => "Mid-Low",
            MembershipTerm::Lower => "Lower",
            MembershipTerm::Low => "Low",
        };
        write!(f, "{name}")
    }
}

impl FromStr for MembershipTerm {
    type Err = GraphError;

    /// Parses a membership grade. Hyphens, underscores, and spaces are
    /// interchangeable and case is ignored; anything else is rejected with
    /// the offending token.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "high" => Ok(MembershipTerm::High),
            "subhigh" => Ok(MembershipTerm::SubHigh),
            "medium" => Ok(MembershipTerm::Medium),
            "midlow" => Ok(MembershipTerm::MidLow),
            "lower" => Ok(MembershipTerm::Lower),
            "low" => Ok(MembershipTerm::Low),
            _ => Err(GraphError::UnknownMembershipTerm {
                token: s.trim().to_string(),
            }),
        }
    }
}

/// Expert-agent configuration carried in the THEN-part of a domain rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Persona description handed to the domain expert as its system prompt.
    pub role: String,
    pub temperature: f64,
}

/// One IF-THEN domain rule: the IF-part is the membership grading of the
/// sub-task against `domain`, the THEN-part is the expert that answers
/// within that domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRule {
    pub rule_id: String,
    pub domain: String,
    pub membership: MembershipTerm,
    pub expert: ExpertConfig,
}

impl DomainRule {
    pub fn new(
        rule_id: impl Into<String>,
        domain: impl Into<String>,
        membership: MembershipTerm,
        expert: ExpertConfig,
    ) -> Result<Self, GraphError> {
        // Rules graded Low are never materialized.
        if membership == MembershipTerm::Low {
            return Err(GraphError::RuleAtLowMembership {
                domain: domain.into(),
            });
        }
        Ok(DomainRule {
            rule_id: rule_id.into(),
            domain: domain.into(),
            membership,
            expert,
        })
    }
}

/// Upstream inputs available to a node: one `(source node id, response text)`
/// entry per incoming edge, in edge declaration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeContext {
    pub inputs: Vec<(NodeId, String)>,
}

impl NodeContext {
    pub fn new(inputs: Vec<(NodeId, String)>) -> Self {
        NodeContext { inputs }
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    /// Plain-text rendering used inside prompts.
    pub fn rendered(&self) -> String {
        if self.inputs.is_empty() {
            return "(no prior context)".to_string();
        }
        let mut out = String::new();
        for (source, text) in &self.inputs {
            out.push_str(&format!("[from {source}]\n{text}\n"));
        }
        out.trim_end().to_string()
    }
}

/// A structural violation found by [`validate_teg`]. Violations are data,
/// not faults; each one names the offending node or edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    DuplicateNodeId { id: NodeId },
    DuplicateEdge { from: NodeId, to: NodeId },
    UnknownEdgeEndpoint { from: NodeId, to: NodeId, missing: NodeId },
    EmptySubTaskSpec { id: NodeId },
    NoTaskNode,
    MultipleTaskNodes { ids: Vec<NodeId> },
    NoFusionNode,
    MultipleFusionNodes { ids: Vec<NodeId> },
    TaskNodeHasInEdges { id: NodeId },
    FusionNodeHasOutEdges { id: NodeId },
    Cycle { nodes: Vec<NodeId> },
    UnreachableFromTask { id: NodeId },
    CannotReachFusion { id: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNodeId { id } => write!(f, "duplicate node id {id}"),
            Violation::DuplicateEdge { from, to } => write!(f, "duplicate edge {from}->{to}"),
            Violation::UnknownEdgeEndpoint { from, to, missing } => {
                write!(f, "edge {from}->{to} references unknown node {missing}")
            }
            Violation::EmptySubTaskSpec { id } => {
                write!(f, "sub-task node {id} has an empty instruction")
            }
            Violation::NoTaskNode => write!(f, "no task node"),
            Violation::MultipleTaskNodes { ids } => {
                write!(f, "multiple task nodes: {}", ids.join(","))
            }
            Violation::NoFusionNode => write!(f, "no fusion node"),
            Violation::MultipleFusionNodes { ids } => {
                write!(f, "multiple fusion nodes: {}", ids.join(","))
            }
            Violation::TaskNodeHasInEdges { id } => {
                write!(f, "task node {id} has incoming edges")
            }
            Violation::FusionNodeHasOutEdges { id } => {
                write!(f, "fusion node {id} has outgoing edges")
            }
            Violation::Cycle { nodes } => write!(f, "cycle through {}", nodes.join(",")),
            Violation::UnreachableFromTask { id } => {
                write!(f, "node {id} is not reachable from the task node")
            }
            Violation::CannotReachFusion { id } => {
                write!(f, "node {id} cannot reach the fusion node")
            }
        }
    }
}

/// Outcome of validating a graph: `ok` iff no violations were found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The execution plan: an unweighted DAG of task, sub-task, and fusion nodes.
///
/// Serializes as `{ "nodes": [{id, kind, spec}], "edges": [[from, to]] }` and
/// round-trips losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExecutionGraph {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
}

impl TaskExecutionGraph {
    /// Builds a graph, rejecting duplicate node ids up front. Structural
    /// invariants beyond id uniqueness are checked by [`validate_teg`].
    pub fn new(nodes: Vec<Node>, edges: Vec<(NodeId, NodeId)>) -> Result<Self, GraphError> {
        let mut seen = HashSet::new();
        for node in &nodes {
            if !seen.insert(node.id.clone()) {
                return Err(GraphError::DuplicateNodeId {
                    id: node.id.clone(),
                });
            }
        }
        Ok(TaskExecutionGraph { nodes, edges })
    }

    /// Builds a graph without any checks. Used when loading documents whose
    /// defects should surface through [`validate_teg`] instead of a parse error.
    pub fn from_parts_unchecked(nodes: Vec<Node>, edges: Vec<(NodeId, NodeId)>) -> Self {
        TaskExecutionGraph { nodes, edges }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn task_node(&self) -> Option<&Node> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Task)
    }

    pub fn fusion_node(&self) -> Option<&Node> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Fusion)
    }

    pub fn sub_task_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::SubTask)
    }

    /// Incoming edges of `id`, in declaration order.
    pub fn in_edges(&self, id: &str) -> Vec<&(NodeId, NodeId)> {
        self.edges.iter().filter(|(_, to)| to == id).collect()
    }

    /// Outgoing edges of `id`, in declaration order.
    pub fn out_edges(&self, id: &str) -> Vec<&(NodeId, NodeId)> {
        self.edges.iter().filter(|(from, _)| from == id).collect()
    }
}

/// Checks every structural invariant of the execution-graph shape and reports
/// all violations found. Returns an ok report iff the graph is a well-formed
/// task-execution DAG.
pub fn validate_teg(graph: &TaskExecutionGraph) -> ValidationReport {
    let mut violations = Vec::new();

    let mut seen: HashSet<&str> = HashSet::new();
    let mut dup_reported: HashSet<&str> = HashSet::new();
    for node in graph.nodes() {
        if !seen.insert(&node.id) && dup_reported.insert(&node.id) {
            violations.push(Violation::DuplicateNodeId {
                id: node.id.clone(),
            });
        }
        if node.kind == NodeKind::SubTask && node.spec.trim().is_empty() {
            violations.push(Violation::EmptySubTaskSpec {
                id: node.id.clone(),
            });
        }
    }

    let ids: HashSet<&str> = graph.nodes().iter().map(|n| n.id.as_str()).collect();
    let mut edge_seen: HashSet<(&str, &str)> = HashSet::new();
    for (from, to) in graph.edges() {
        for endpoint in [from, to] {
            if !ids.contains(endpoint.as_str()) {
                violations.push(Violation::UnknownEdgeEndpoint {
                    from: from.clone(),
                    to: to.clone(),
                    missing: endpoint.clone(),
                });
            }
        }
        if !edge_seen.insert((from, to)) {
            violations.push(Violation::DuplicateEdge {
                from: from.clone(),
                to: to.clone(),
            });
        }
    }

    let task_ids: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Task)
        .map(|n| n.id.clone())
        .collect();
    match task_ids.len() {
        0 => violations.push(Violation::NoTaskNode),
        1 => {}
        _ => violations.push(Violation::MultipleTaskNodes { ids: task_ids.clone() }),
    }
    let fusion_ids: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Fusion)
        .map(|n| n.id.clone())
        .collect();
    match fusion_ids.len() {
        0 => violations.push(Violation::NoFusionNode),
        1 => {}
        _ => violations.push(Violation::MultipleFusionNodes {
            ids: fusion_ids.clone(),
        }),
    }

    for id in &task_ids {
        if !graph.in_edges(id).is_empty() {
            violations.push(Violation::TaskNodeHasInEdges { id: id.clone() });
        }
    }
    for id in &fusion_ids {
        if !graph.out_edges(id).is_empty() {
            violations.push(Violation::FusionNodeHasOutEdges { id: id.clone() });
        }
    }

    if let Some(cycle) = find_cycle(graph) {
        violations.push(Violation::Cycle { nodes: cycle });
    } else {
        // Reachability is only meaningful on acyclic graphs with unique roles.
        if task_ids.len() == 1 && fusion_ids.len() == 1 {
            let forward = reach_from(graph, &task_ids[0], false);
            let backward = reach_from(graph, &fusion_ids[0], true);
            for node in graph.sub_task_nodes() {
                if !forward.contains(node.id.as_str()) {
                    violations.push(Violation::UnreachableFromTask {
                        id: node.id.clone(),
                    });
                }
                if !backward.contains(node.id.as_str()) {
                    violations.push(Violation::CannotReachFusion {
                        id: node.id.clone(),
                    });
                }
            }
        }
    }

    ValidationReport { violations }
}

/// Nodes reachable from `start` following edges forward (or backward when
/// `reverse` is set), including `start` itself.
fn reach_from<'g>(graph: &'g TaskExecutionGraph, start: &str, reverse: bool) -> HashSet<&'g str> {
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for (from, to) in graph.edges() {
        if reverse {
            adj.entry(to).or_default().push(from);
        } else {
            adj.entry(from).or_default().push(to);
        }
    }
    let mut visited: HashSet<&str> = HashSet::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    if let Some(node) = graph.node(start) {
        visited.insert(node.id.as_str());
        queue.push_back(node.id.as_str());
    }
    while let Some(cur) = queue.pop_front() {
        for next in adj.get(cur).into_iter().flatten() {
            if graph.node(next).is_some() && visited.insert(next) {
                queue.push_back(next);
            }
        }
    }
    visited
}

/// Returns the node ids of one cycle if the edge relation has any, ignoring
/// edges with unknown endpoints.
fn find_cycle(graph: &TaskExecutionGraph) -> Option<Vec<NodeId>> {
    let ids: BTreeSet<&str> = graph.nodes().iter().map(|n| n.id.as_str()).collect();
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (from, to) in graph.edges() {
        if ids.contains(from.as_str()) && ids.contains(to.as_str()) {
            adj.entry(from).or_default().push(to);
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut marks: BTreeMap<&str, Mark> = ids.iter().map(|id| (*id, Mark::White)).collect();

    // Iterative DFS keeping the grey path so the cycle can be reported.
    for root in &ids {
        if marks[root] != Mark::White {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
        let mut path: Vec<&str> = Vec::new();
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx == 0 {
                marks.insert(node, Mark::Grey);
                path.push(node);
            }
            let children = adj.get(node).map(|v| v.as_slice()).unwrap_or(&[]);
            if child_idx < children.len() {
                stack.push((node, child_idx + 1));
                let child = children[child_idx];
                match marks[child] {
                    Mark::White => stack.push((child, 0)),
                    Mark::Grey => {
                        let start = path.iter().position(|n| *n == child).unwrap_or(0);
                        return Some(path[start..].iter().map(|s| s.to_string()).collect());
                    }
                    Mark::Black => {}
                }
            } else {
                marks.insert(node, Mark::Black);
                path.pop();
            }
        }
    }
    None
}

/// Groups nodes into execution levels: a node's level is the length of the
/// longest path reaching it from any root, so all nodes within a level are
/// mutually independent and every edge crosses from a lower level to a higher
/// one. Node ids within a level are sorted.
pub fn topological_levels(graph: &TaskExecutionGraph) -> Result<Vec<Vec<NodeId>>, GraphError> {
    if let Some(nodes) = find_cycle(graph) {
        return Err(GraphError::CyclicGraph { nodes });
    }
    for (from, to) in graph.edges() {
        for endpoint in [from, to] {
            if graph.node(endpoint).is_none() {
                return Err(GraphError::UnknownNode {
                    id: endpoint.clone(),
                });
            }
        }
    }

    let mut level: HashMap<&str, usize> = HashMap::new();
    let mut in_degree: HashMap<&str, usize> = graph
        .nodes()
        .iter()
        .map(|n| (n.id.as_str(), 0))
        .collect();
    for (_, to) in graph.edges() {
        *in_degree.get_mut(to.as_str()).unwrap() += 1;
    }

    let mut queue: VecDeque<&str> = graph
        .nodes()
        .iter()
        .filter(|n| in_degree[n.id.as_str()] == 0)
        .map(|n| n.id.as_str())
        .collect();
    for id in &queue {
        level.insert(id, 0);
    }
    while let Some(cur) = queue.pop_front() {
        let cur_level = level[cur];
        for (from, to) in graph.edges() {
            if from == cur {
                let entry = level.entry(to.as_str()).or_insert(0);
                *entry = (*entry).max(cur_level + 1);
                let deg = in_degree.get_mut(to.as_str()).unwrap();
                *deg -= 1;
                if *deg == 0 {
                    queue.push_back(to.as_str());
                }
            }
        }
    }

    let max_level = level.values().copied().max().unwrap_or(0);
    let mut levels: Vec<Vec<NodeId>> = vec![Vec::new(); if level.is_empty() { 0 } else { max_level + 1 }];
    for node in graph.nodes() {
        levels[level[node.id.as_str()]].push(node.id.clone());
    }
    for bucket in &mut levels {
        bucket.sort();
    }
    Ok(levels)
}
