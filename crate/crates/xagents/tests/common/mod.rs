//! Shared generators and brute-force oracles for the property and
//! acceptance suites. Everything here is deliberately independent of the
//! implementation paths it checks.
#![allow(dead_code)] // each test target uses a different subset

use rand::rngs::StdRng;
use rand::Rng;
use std::collections::BTreeMap;

use xagents::agents::{Claim, RuleResponse};
use xagents::engine::ClaimCluster;
use xagents::graph::{MembershipTerm, Node, NodeKind, TaskExecutionGraph};

/// Random structurally valid execution graph: every sub-task hangs off the
/// task node, optional forward edges between sub-tasks, sinks feed fusion.
pub fn random_valid_teg(rng: &mut StdRng) -> TaskExecutionGraph {
    let n = rng.gen_range(1..=6);
    let mut nodes = vec![Node::new("T", NodeKind::Task, "the task")];
    for i in 1..=n {
        nodes.push(Node::new(
            format!("T{i}"),
            NodeKind::SubTask,
            format!("sub-task {i}"),
        ));
    }
    nodes.push(Node::new("F", NodeKind::Fusion, "fuse"));

    let mut edges: Vec<(String, String)> = Vec::new();
    let mut forward: Vec<(usize, usize)> = Vec::new();
    for i in 1..=n {
        for j in (i + 1)..=n {
            if rng.gen_bool(0.3) {
                forward.push((i, j));
            }
        }
    }
    for i in 1..=n {
        let has_incoming = forward.iter().any(|(_, to)| *to == i);
        if !has_incoming || rng.gen_bool(0.5) {
            edges.push(("T".into(), format!("T{i}")));
        }
    }
    for (i, j) in &forward {
        edges.push((format!("T{i}"), format!("T{j}")));
    }
    for i in 1..=n {
        let has_outgoing = forward.iter().any(|(from, _)| *from == i);
        if !has_outgoing || rng.gen_bool(0.5) {
            edges.push((format!("T{i}"), "F".into()));
        }
    }
    TaskExecutionGraph::new(nodes, edges).expect("generator produces unique ids")
}

/// Adds one back edge (cycle, fusion out-edge, or task in-edge), which must
/// flip acceptance.
pub fn mutate_with_back_edge(graph: &TaskExecutionGraph, rng: &mut StdRng) -> TaskExecutionGraph {
    let nodes = graph.nodes().to_vec();
    let mut edges = graph.edges().to_vec();
    let (from, to) = edges[rng.gen_range(0..edges.len())].clone();
    edges.push((to, from));
    TaskExecutionGraph::from_parts_unchecked(nodes, edges)
}

/// Longest-path-from-root levels by exhaustive path enumeration.
pub fn brute_force_levels(graph: &TaskExecutionGraph) -> BTreeMap<String, usize> {
    fn longest_to(graph: &TaskExecutionGraph, id: &str) -> usize {
        let preds: Vec<&str> = graph
            .edges()
            .iter()
            .filter(|(_, to)| to == id)
            .map(|(from, _)| from.as_str())
            .collect();
        preds
            .iter()
            .map(|p| longest_to(graph, p) + 1)
            .max()
            .unwrap_or(0)
    }
    graph
        .nodes()
        .iter()
        .map(|n| (n.id.clone(), longest_to(graph, &n.id)))
        .collect()
}

pub const POSITIVE_TERMS: [MembershipTerm; 5] = [
    MembershipTerm::High,
    MembershipTerm::SubHigh,
    MembershipTerm::Medium,
    MembershipTerm::MidLow,
    MembershipTerm::Lower,
];

/// Random rule responses: up to `max_rules` rules, each claiming a random
/// subset of up to `max_keys` slots with values from a small pool so that
/// agreements and conflicts both occur.
pub fn random_rule_responses(
    rng: &mut StdRng,
    max_rules: usize,
    max_keys: usize,
) -> Vec<RuleResponse> {
    let n_rules = rng.gen_range(1..=max_rules);
    let n_keys = rng.gen_range(1..=max_keys);
    (0..n_rules)
        .map(|r| {
            let membership = POSITIVE_TERMS[rng.gen_range(0..POSITIVE_TERMS.len())];
            let mut claims = Vec::new();
            for k in 0..n_keys {
                if rng.gen_bool(0.7) {
                    claims.push(Claim {
                        key: format!("k{k}"),
                        value: format!("v{}", rng.gen_range(0..4)),
                    });
                }
            }
            RuleResponse {
                rule_id: format!("r{r}"),
                domain: format!("domain-{r}"),
                membership,
                answer_text: String::new(),
                claims,
            }
        })
        .collect()
}

/// Brute-force conflict resolution: per key group, scan every cluster and
/// keep the argmax of (trust, summed membership, votes, reverse-lex value).
pub fn oracle_retained(clusters: &[ClaimCluster]) -> BTreeMap<String, String> {
    let mut groups: BTreeMap<&str, Vec<&ClaimCluster>> = BTreeMap::new();
    for cluster in clusters {
        groups.entry(&cluster.key).or_default().push(cluster);
    }
    groups
        .into_iter()
        .map(|(key, group)| {
            let mut best = group[0];
            for candidate in &group[1..] {
                let better = (
                    candidate.trust.unwrap(),
                    candidate.summed_membership(),
                    candidate.votes,
                    std::cmp::Reverse(candidate.value.clone()),
                ) > (
                    best.trust.unwrap(),
                    best.summed_membership(),
                    best.votes,
                    std::cmp::Reverse(best.value.clone()),
                );
                if better {
                    best = candidate;
                }
            }
            (key.to_string(), best.value.clone())
        })
        .collect()
}

/// Random tabulated coalition value function over `k` players, keyed by
/// player bitmask.
pub fn random_value_table(rng: &mut StdRng, k: usize) -> Vec<f64> {
    (0..(1usize << k)).map(|_| rng.gen_range(0.0..1.0)).collect()
}
