//! Deterministic fusion core: claim normalization, vote clustering,
//! membership-weighted trust, conflict resolution, and the per-node
//! pipeline that ties them to the agents.
//!
//! Everything up to the final fusion-expert call is a pure function:
//! identical inputs give identical outputs, and all ordering is canonical
//! (clusters sort by key, then normalized value).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, AgentError, AgentRoster, RuleOutcome, RuleResponse, RuleSettings};
use crate::backend::Backend;
use crate::graph::{MembershipTerm, Node, NodeContext, NodeId, NodeKind};
use crate::trace::{EventKind, NodeEventBuffer};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("node {node_id}: domain analysis failed: {source}")]
    Analysis {
        node_id: String,
        #[source]
        source: AgentError,
    },
    #[error("node {node_id}: every domain rule failed")]
    AllRulesFailed { node_id: String },
    #[error("node {node_id}: rule fusion failed: {source}")]
    Fusion {
        node_id: String,
        #[source]
        source: AgentError,
    },
    #[error("node {node_id} is not a sub-task node")]
    NotASubTask { node_id: String },
}

/// Canonical form used as the claim-equality predicate for voting:
/// year parentheticals removed, lowercased, punctuation stripped,
/// whitespace collapsed, and a leading article (a/an/the) dropped.
pub fn normalize_claim(value: &str) -> String {
    // Drop parentheticals that contain only a four-digit year.
    let mut no_years = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(open) = rest.find('(') {
        let (before, after_open) = rest.split_at(open);
        no_years.push_str(before);
        if let Some(close) = after_open.find(')') {
            let inner = &after_open[1..close];
            let is_year = inner.trim().len() == 4 && inner.trim().chars().all(|c| c.is_ascii_digit());
            if !is_year {
                no_years.push_str(&after_open[..=close]);
            }
            rest = &after_open[close + 1..];
        } else {
            no_years.push_str(after_open);
            rest = "";
        }
    }
    no_years.push_str(rest);

    let lowered = no_years.to_lowercase();
    // Punctuation is removed outright so intra-word marks glue together
    // ("Who's" -> "whos") instead of splitting into separate words.
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words: Vec<&str> = stripped.split_whitespace().collect();
    // Keep a lone article: a claim must not normalize to the empty string.
    if words.len() > 1 && matches!(words.first(), Some(&"a") | Some(&"an") | Some(&"the")) {
        words.remove(0);
    }
    words.join(" ")
}

/// A group of semantically equivalent claims: same key, same normalized
/// value. `votes` counts distinct supporting rules; `trust` is computed by
/// [`trust_degrees`], never set directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCluster {
    pub key: String,
    /// Normalized claim text (the equality representative).
    pub value: String,
    /// First-seen original wording, used when composing fused answers.
    pub surface: String,
    pub votes: usize,
    pub supporters: Vec<(String, MembershipTerm)>,
    pub trust: Option<f64>,
    #[serde(default)]
    pub low_confidence: bool,
}

impl ClaimCluster {
    pub fn summed_membership(&self) -> f64 {
        self.supporters.iter().map(|(_, m)| m.value()).sum()
    }
}

/// How supporter weight enters the trust computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrustWeighting {
    /// Supporters weigh in with their membership value (the default).
    MembershipWeighted,
    /// Every supporter weighs 1.0, reducing trust to pure vote share.
    VoteShare,
}

/// Groups equal claims into clusters. Claims are equal iff they share a key
/// and a normalized value; votes are counted once per distinct rule. The
/// returned clusters are sorted by (key, normalized value).
pub fn vote_claims(responses: &[RuleResponse]) -> Vec<ClaimCluster> {
    use std::collections::BTreeMap;
    let mut clusters: BTreeMap<(String, String), ClaimCluster> = BTreeMap::new();
    for response in responses {
        let mut seen_in_rule: std::collections::HashSet<(String, String)> =
            std::collections::HashSet::new();
        for claim in &response.claims {
            let normalized = normalize_claim(&claim.value);
            let cluster_key = (claim.key.clone(), normalized.clone());
            // A rule asserting the same claim twice still gets one vote.
            if !seen_in_rule.insert(cluster_key.clone()) {
                continue;
            }
            clusters
                .entry(cluster_key)
                .and_modify(|c| {
                    c.votes += 1;
                    c.supporters
                        .push((response.rule_id.clone(), response.membership));
                })
                .or_insert_with(|| ClaimCluster {
                    key: claim.key.clone(),
                    value: normalized,
                    surface: claim.value.clone(),
                    votes: 1,
                    supporters: vec![(response.rule_id.clone(), response.membership)],
                    trust: None,
                    low_confidence: false,
                });
        }
    }
    clusters.into_values().collect()
}

/// Sets each cluster's trust to its share of supporter weight within its key
/// group: `trust(c) = Σ weight(supporters of c) / Σ weight(all supporters in
/// the group)`. Trusts within a group sum to 1 when the denominator is
/// positive; an all-zero group falls back to uniform trust with a warning.
pub fn trust_degrees(clusters: Vec<ClaimCluster>) -> (Vec<ClaimCluster>, Vec<String>) {
    trust_degrees_with(clusters, TrustWeighting::MembershipWeighted)
}

pub fn trust_degrees_with(
    mut clusters: Vec<ClaimCluster>,
    weighting: TrustWeighting,
) -> (Vec<ClaimCluster>, Vec<String>) {
    use std::collections::BTreeMap;
    let weight = |cluster: &ClaimCluster| -> f64 {
        match weighting {
            TrustWeighting::MembershipWeighted => cluster.summed_membership(),
            TrustWeighting::VoteShare => cluster.votes as f64,
        }
    };

    let mut group_denominator: BTreeMap<String, f64> = BTreeMap::new();
    let mut group_size: BTreeMap<String, usize> = BTreeMap::new();
    for cluster in &clusters {
        *group_denominator.entry(cluster.key.clone()).or_insert(0.0) += weight(cluster);
        *group_size.entry(cluster.key.clone()).or_insert(0) += 1;
    }

    let mut warnings = Vec::new();
    for (key, denominator) in &group_denominator {
        if *denominator <= 0.0 {
            warnings.push(format!(
                "key {key:?}: all supporter weights are zero; falling back to uniform trust"
            ));
        }
    }
    for cluster in &mut clusters {
        let denominator = group_denominator[&cluster.key];
        cluster.trust = Some(if denominator > 0.0 {
            weight(cluster) / denominator
        } else {
            1.0 / group_size[&cluster.key] as f64
        });
    }
    (clusters, warnings)
}

/// A cluster dropped by conflict resolution, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedClaim {
    pub cluster: ClaimCluster,
    pub reason: String,
}

/// Outcome of conflict resolution over one node's claim clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub retained: Vec<ClaimCluster>,
    pub discarded: Vec<DiscardedClaim>,
}

/// Strict preference order within a key group: higher trust wins, ties
/// broken by higher summed membership, then higher votes, then the
/// lexicographically smaller normalized value. Total because values are
/// distinct within a group.
fn preferred(a: &ClaimCluster, b: &ClaimCluster) -> std::cmp::Ordering {
    let ta = a.trust.unwrap_or(0.0);
    let tb = b.trust.unwrap_or(0.0);
    tb.partial_cmp(&ta)
        .expect("trusts are finite")
        .then_with(|| {
            b.summed_membership()
                .partial_cmp(&a.summed_membership())
                .expect("memberships are finite")
        })
        .then_with(|| b.votes.cmp(&a.votes))
        .then_with(|| a.value.cmp(&b.value))
}

/// Per key group, retains the single most-trusted cluster and discards the
/// rest as outvoted. Non-conflicting (singleton-group) clusters are always
/// retained. Retained clusters whose trust falls below `keep_threshold` are
/// flagged low-confidence but kept, so a contested question never loses its
/// only answer.
pub fn resolve_conflicts(clusters: Vec<ClaimCluster>, keep_threshold: f64) -> Resolution {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<String, Vec<ClaimCluster>> = BTreeMap::new();
    for cluster in clusters {
        groups.entry(cluster.key.clone()).or_default().push(cluster);
    }

    let mut retained = Vec::new();
    let mut discarded = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(preferred);
        let mut winner = group.remove(0);
        winner.low_confidence = winner.trust.unwrap_or(0.0) < keep_threshold;
        retained.push(winner);
        for loser in group {
            discarded.push(DiscardedClaim {
                cluster: loser,
                reason: "outvoted".to_string(),
            });
        }
    }
    Resolution { retained, discarded }
}

/// Everything a sub-task node produced, including the losing claims and the
/// raw rule responses, so the decision trail is fully reconstructible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubTaskResult {
    pub node_id: NodeId,
    pub retained_claims: Vec<ClaimCluster>,
    pub discarded_claims: Vec<DiscardedClaim>,
    pub fused_text: String,
    pub rule_responses: Vec<RuleResponse>,
    pub failed_rules: Vec<FailedRule>,
    pub trust_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRule {
    pub rule_id: String,
    pub domain: String,
    pub error: String,
}

/// Engine-level settings for one run.
#[derive(Debug, Clone)]
pub struct EngineSettings {
    pub rules: RuleSettings,
    /// τ: retained clusters below this trust are flagged low-confidence.
    pub keep_threshold: f64,
    pub trust_weighting: TrustWeighting,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            rules: RuleSettings::default(),
            keep_threshold: 0.5,
            trust_weighting: TrustWeighting::MembershipWeighted,
        }
    }
}

/// Renders retained claims for the fusion-expert prompt, one per line.
/// Discarded claims are excluded entirely.
pub fn render_retained_claims(retained: &[ClaimCluster]) -> String {
    if retained.is_empty() {
        return "(none)".to_string();
    }
    retained
        .iter()
        .map(|c| {
            format!(
                "- {}: {} (trust {:.4}, votes {})",
                c.key,
                c.surface,
                c.trust.unwrap_or(0.0),
                c.votes
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs one sub-task node end to end: domain analysis, rule execution,
/// claim voting, trust assignment, conflict resolution, and fusion of the
/// retained claims into the node's answer. Every stage is recorded into the
/// node's event buffer.
#[allow(clippy::too_many_arguments)]
pub fn run_subtask_node(
    node: &Node,
    context: &NodeContext,
    catalog: &[String],
    question_keys: &[String],
    settings: &EngineSettings,
    roster: &AgentRoster,
    backend: &dyn Backend,
    buffer: &mut NodeEventBuffer,
) -> Result<SubTaskResult, EngineError> {
    if node.kind != NodeKind::SubTask {
        return Err(EngineError::NotASubTask {
            node_id: node.id.clone(),
        });
    }

    let analysis = agents::analyze_domains(node, context, catalog, &settings.rules, roster, backend)
        .map_err(|source| EngineError::Analysis {
            node_id: node.id.clone(),
            source,
        })?;
    buffer.push(EventKind::RuleGenerated, agents::rule_generated_payload(&analysis));

    let outcomes: Vec<RuleOutcome> = agents::execute_rules(
        &analysis.rules,
        node,
        context,
        question_keys,
        &settings.rules,
        roster,
        backend,
    );
    for outcome in &outcomes {
        agents::record_dea_call(buffer, outcome);
    }

    let mut rule_responses = Vec::new();
    let mut failed_rules = Vec::new();
    for outcome in outcomes {
        match outcome.result {
            Ok(response) => rule_responses.push(response),
            Err(error) => failed_rules.push(FailedRule {
                rule_id: outcome.rule.rule_id,
                domain: outcome.rule.domain,
                error: error.to_string(),
            }),
        }
    }
    if rule_responses.is_empty() {
        return Err(EngineError::AllRulesFailed {
            node_id: node.id.clone(),
        });
    }

    buffer.push(
        EventKind::Claims,
        serde_json::json!({
            "claims": rule_responses
                .iter()
                .map(|r| serde_json::json!({"rule_id": r.rule_id, "claims": r.claims}))
                .collect::<Vec<_>>(),
        }),
    );

    let clusters = vote_claims(&rule_responses);
    buffer.push(EventKind::Votes, serde_json::json!({ "clusters": clusters }));

    let (clusters, trust_warnings) = trust_degrees_with(clusters, settings.trust_weighting);
    buffer.push(
        EventKind::Trust,
        serde_json::json!({ "clusters": clusters, "warnings": trust_warnings }),
    );

    let resolution = resolve_conflicts(clusters, settings.keep_threshold);
    buffer.push(
        EventKind::Resolution,
        serde_json::json!({
            "retained": resolution.retained,
            "discarded": resolution.discarded,
        }),
    );

    let rendered = render_retained_claims(&resolution.retained);
    let fused_text = agents::compose_rule_fusion(node, &rendered, roster, backend).map_err(
        |source| EngineError::Fusion {
            node_id: node.id.clone(),
            source,
        },
    )?;

    Ok(SubTaskResult {
        node_id: node.id.clone(),
        retained_claims: resolution.retained,
        discarded_claims: resolution.discarded,
        fused_text,
        rule_responses,
        failed_rules,
        trust_warnings,
    })
}
