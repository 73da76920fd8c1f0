//! Shapley-value attribution of run outcomes to per-domain membership
//! features.
//!
//! Each run becomes an [`AttributionSample`] whose features map domains to
//! the membership value their rules carried (absent domain = 0.0). A value
//! function evaluates any coalition of domains — for real runs, by replaying
//! the recorded fusion with the complement's rules masked out and re-scoring
//! the composed answer. Exact attribution enumerates all coalitions (up to
//! 12 active features); the sampling estimator scales past that with
//! per-feature standard errors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use thiserror::Error;

use crate::engine::{resolve_conflicts, trust_degrees_with, vote_claims, EngineSettings};
use crate::graph::MembershipTerm;
use crate::agents::{Claim, RuleResponse};
use crate::trace::{EventKind, RunTrace};

/// Exact enumeration refuses above this many active features (2^K coalitions).
pub const MAX_EXACT_FEATURES: usize = 12;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("trace/score join failed; orphans: {}", orphans.join(", "))]
    Join { orphans: Vec<String> },
    #[error("{k} active features exceed the exact limit of {MAX_EXACT_FEATURES}; use the sampling estimator")]
    TooManyFeatures { k: usize },
    #[error("{k} active features exceed the 63-feature sampling limit")]
    TooManyFeaturesForSampling { k: usize },
    #[error("permutation count must be at least 1")]
    NoPermutations,
    #[error("feature {domain} has value {value} outside the membership scale")]
    OffScaleFeature { domain: String, value: f64 },
    #[error("no attribution rows to emit")]
    NoRows,
    #[error("grouping size must be at least 1")]
    BadGrouping,
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// One attribution sample: domain membership features and the run's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSample {
    pub sample_id: String,
    /// Domain name -> membership value; domains not present count as 0.0.
    pub features: BTreeMap<String, f64>,
    pub outcome: f64,
}

const MEMBERSHIP_SCALE: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

impl AttributionSample {
    /// Builds a sample, rejecting feature values outside the six-grade scale.
    pub fn new(
        sample_id: impl Into<String>,
        features: BTreeMap<String, f64>,
        outcome: f64,
    ) -> Result<Self, ExplainError> {
        for (domain, value) in &features {
            if !MEMBERSHIP_SCALE.iter().any(|s| (s - value).abs() < 1e-9) {
                return Err(ExplainError::OffScaleFeature {
                    domain: domain.clone(),
                    value: *value,
                });
            }
        }
        Ok(AttributionSample {
            sample_id: sample_id.into(),
            features,
            outcome,
        })
    }

    /// Domains with non-zero membership, in sorted order: the players of the
    /// attribution game.
    pub fn active_domains(&self) -> Vec<&str> {
        self.features
            .iter()
            .filter(|(_, v)| **v > 0.0)
            .map(|(d, _)| d.as_str())
            .collect()
    }
}

/// One attribution row; `std_error` is set by the sampling estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapRow {
    pub sample_id: String,
    pub domain: String,
    pub feature_value: f64,
    pub shap_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

/// Joins traces with their scores and builds one sample per run. Domains
/// take the maximum membership value their rules carried anywhere in the
/// run. With `group > 1`, consecutive runs (sorted by run id) merge into
/// composite samples: outcomes average, features take the group maximum so
/// they stay on the membership scale.
pub fn build_samples(
    traces: &[RunTrace],
    scores: &[(String, f64)],
    group: usize,
) -> Result<Vec<AttributionSample>, ExplainError> {
    if group == 0 {
        return Err(ExplainError::BadGrouping);
    }
    let score_map: BTreeMap<&str, f64> = scores.iter().map(|(id, s)| (id.as_str(), *s)).collect();

    let mut orphans: Vec<String> = Vec::new();
    let trace_ids: std::collections::BTreeSet<&str> =
        traces.iter().map(|t| t.run_id.as_str()).collect();
    for trace in traces {
        if !score_map.contains_key(trace.run_id.as_str()) {
            orphans.push(format!("trace {}", trace.run_id));
        }
    }
    for (id, _) in scores {
        if !trace_ids.contains(id.as_str()) {
            orphans.push(format!("score {id}"));
        }
    }
    if !orphans.is_empty() {
        orphans.sort();
        return Err(ExplainError::Join { orphans });
    }

    let mut per_run: Vec<AttributionSample> = Vec::with_capacity(traces.len());
    for trace in traces {
        let mut features: BTreeMap<String, f64> = BTreeMap::new();
        for event in trace.events_of_kind(EventKind::RuleGenerated) {
            let Some(rules) = event.payload.get("rules").and_then(|r| r.as_array()) else {
                continue;
            };
            for rule in rules {
                let Some(domain) = rule.get("domain").and_then(|d| d.as_str()) else {
                    continue;
                };
                let membership = rule
                    .get("membership")
                    .and_then(|m| m.as_str())
                    .and_then(|m| m.parse::<MembershipTerm>().ok())
                    .map(|m| m.value())
                    .unwrap_or(0.0);
                let entry = features.entry(domain.to_string()).or_insert(0.0);
                *entry = entry.max(membership);
            }
        }
        per_run.push(AttributionSample {
            sample_id: trace.run_id.clone(),
            features,
            outcome: score_map[trace.run_id.as_str()],
        });
    }
    per_run.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    if group == 1 {
        return Ok(per_run);
    }
    let mut composites = Vec::new();
    for chunk in per_run.chunks(group) {
        let sample_id = chunk
            .iter()
            .map(|s| s.sample_id.as_str())
            .collect::<Vec<_>>()
            .join("+");
        let mut features: BTreeMap<String, f64> = BTreeMap::new();
        for sample in chunk {
            for (domain, value) in &sample.features {
                let entry = features.entry(domain.clone()).or_insert(0.0);
                *entry = entry.max(*value);
            }
        }
        let outcome = chunk.iter().map(|s| s.outcome).sum::<f64>() / chunk.len() as f64;
        composites.push(AttributionSample {
            sample_id,
            features,
            outcome,
        });
    }
    Ok(composites)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Evaluates and memoizes coalition values keyed by player bitmask.
struct CoalitionTable<'a, F: Fn(&[&str]) -> f64> {
    players: &'a [&'a str],
    value_fn: F,
    cache: HashMap<u64, f64>,
}

impl<'a, F: Fn(&[&str]) -> f64> CoalitionTable<'a, F> {
    fn new(players: &'a [&'a str], value_fn: F) -> Self {
        CoalitionTable {
            players,
            value_fn,
            cache: HashMap::new(),
        }
    }

    fn value(&mut self, mask: u64) -> f64 {
        if let Some(v) = self.cache.get(&mask) {
            return *v;
        }
        let coalition: Vec<&str> = self
            .players
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, p)| *p)
            .collect();
        let v = (self.value_fn)(&coalition);
        self.cache.insert(mask, v);
        v
    }
}

/// Exact Shapley attribution by coalition enumeration:
/// `φ_d = Σ_{S ∌ d} |S|!(K−|S|−1)!/K! · (v(S ∪ {d}) − v(S))`.
///
/// Features with zero membership are not part of the game and receive φ = 0
/// exactly. Refuses when more than [`MAX_EXACT_FEATURES`] features are
/// active.
pub fn shapley_exact(
    sample: &AttributionSample,
    value_fn: impl Fn(&[&str]) -> f64,
) -> Result<Vec<ShapRow>, ExplainError> {
    let players = sample.active_domains();
    let k = players.len();
    if k > MAX_EXACT_FEATURES {
        return Err(ExplainError::TooManyFeatures { k });
    }

    let mut phi = vec![0.0f64; k];
    if k > 0 {
        let mut table = CoalitionTable::new(&players, value_fn);
        let k_factorial = factorial(k);
        for mask in 0..(1u64 << k) {
            let size = mask.count_ones() as usize;
            if size == k {
                continue;
            }
            let weight = factorial(size) * factorial(k - size - 1) / k_factorial;
            for (d, phi_d) in phi.iter_mut().enumerate() {
                if mask & (1 << d) != 0 {
                    continue;
                }
                let with = table.value(mask | (1 << d));
                let without = table.value(mask);
                *phi_d += weight * (with - without);
            }
        }
    }

    let phi_by_domain: BTreeMap<&str, f64> =
        players.iter().zip(phi).map(|(p, v)| (*p, v)).collect();
    Ok(sample
        .features
        .iter()
        .map(|(domain, feature_value)| ShapRow {
            sample_id: sample.sample_id.clone(),
            domain: domain.clone(),
            feature_value: *feature_value,
            shap_value: phi_by_domain.get(domain.as_str()).copied().unwrap_or(0.0),
            std_error: None,
        })
        .collect())
}

fn permutations_of(n: usize) -> Vec<Vec<usize>> {
    // Recursive generation; only used when n! fits the permutation budget.
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations_of(n - 1) {
        for pos in 0..=rest.len() {
            let mut perm = rest.clone();
            perm.insert(pos, n - 1);
            out.push(perm);
        }
    }
    out
}

/// Permutation-sampling Shapley estimator with per-feature standard errors.
///
/// Each sampled permutation contributes one marginal per player; the
/// estimate is the mean. A fixed seed makes the estimate reproducible. When
/// the budget `m` covers all `K!` orderings, every permutation is evaluated
/// exactly once and the result equals [`shapley_exact`] with zero standard
/// error.
pub fn shapley_sampled(
    sample: &AttributionSample,
    value_fn: impl Fn(&[&str]) -> f64,
    permutations: u64,
    seed: u64,
) -> Result<Vec<ShapRow>, ExplainError> {
    if permutations == 0 {
        return Err(ExplainError::NoPermutations);
    }
    let players = sample.active_domains();
    let k = players.len();
    // Coalitions are memoized by u64 bitmask.
    if k > 63 {
        return Err(ExplainError::TooManyFeaturesForSampling { k });
    }

    let mut mean = vec![0.0f64; k];
    let mut std_error = vec![0.0f64; k];
    if k > 0 {
        let mut table = CoalitionTable::new(&players, &value_fn);
        let k_factorial_exact: Option<u64> = (1..=k as u64).try_fold(1u64, u64::checked_mul);
        let exhaustive = matches!(k_factorial_exact, Some(kf) if kf <= permutations);

        let perms: Vec<Vec<usize>> = if exhaustive {
            permutations_of(k)
        } else {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let mut perms = Vec::with_capacity(permutations as usize);
            let base: Vec<usize> = (0..k).collect();
            for _ in 0..permutations {
                let mut perm = base.clone();
                perm.shuffle(&mut rng);
                perms.push(perm);
            }
            perms
        };

        let m = perms.len() as f64;
        let mut sum = vec![0.0f64; k];
        let mut sum_sq = vec![0.0f64; k];
        for perm in &perms {
            let mut mask = 0u64;
            let mut previous = table.value(0);
            for &player in perm {
                mask |= 1 << player;
                let current = table.value(mask);
                let marginal = current - previous;
                sum[player] += marginal;
                sum_sq[player] += marginal * marginal;
                previous = current;
            }
        }
        for d in 0..k {
            mean[d] = sum[d] / m;
            if !exhaustive && perms.len() > 1 {
                let variance = ((sum_sq[d] - sum[d] * sum[d] / m) / (m - 1.0)).max(0.0);
                std_error[d] = (variance / m).sqrt();
            }
        }
    }

    let stats: BTreeMap<&str, (f64, f64)> = players
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, (mean[i], std_error[i])))
        .collect();
    Ok(sample
        .features
        .iter()
        .map(|(domain, feature_value)| {
            let (shap_value, se) = stats.get(domain.as_str()).copied().unwrap_or((0.0, 0.0));
            ShapRow {
                sample_id: sample.sample_id.clone(),
                domain: domain.clone(),
                feature_value: *feature_value,
                shap_value,
                std_error: Some(se),
            }
        })
        .collect())
}

fn fmt_float(value: f64, decimals: usize) -> String {
    let value = if value == 0.0 { 0.0 } else { value };
    format!("{value:.decimals$}")
}

/// Writes attribution rows as CSV (`sample_id,domain,feature_value,
/// shap_value`), sorted by sample id then domain, so repeated invocations
/// over the same rows are byte-identical.
pub fn emit_beeswarm(rows: &[ShapRow], writer: &mut impl Write) -> Result<(), ExplainError> {
    if rows.is_empty() {
        return Err(ExplainError::NoRows);
    }
    let mut sorted: Vec<&ShapRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.sample_id
            .cmp(&b.sample_id)
            .then_with(|| a.domain.cmp(&b.domain))
    });
    writeln!(writer, "sample_id,domain,feature_value,shap_value")?;
    for row in sorted {
        writeln!(
            writer,
            "{},{},{},{}",
            row.sample_id,
            row.domain,
            fmt_float(row.feature_value, 1),
            fmt_float(row.shap_value, 9),
        )?;
    }
    Ok(())
}

/// Deterministic value function over a recorded run: replay the recorded
/// sub-task fusion with every rule whose domain is outside the coalition
/// masked out, compose the retained claims canonically, and re-score the
/// composed text. The empty coalition leaves no claims and scores as an
/// abstention.
pub struct TraceValueFn {
    /// Reconstructed rule responses per sub-task node, in node order.
    node_responses: Vec<(String, Vec<RuleResponse>)>,
    settings: EngineSettings,
    scorer: Box<dyn Fn(&str) -> f64 + Send + Sync>,
}

impl TraceValueFn {
    pub fn from_trace(
        trace: &RunTrace,
        settings: EngineSettings,
        scorer: Box<dyn Fn(&str) -> f64 + Send + Sync>,
    ) -> Self {
        let mut node_responses: Vec<(String, Vec<RuleResponse>)> = Vec::new();
        // Rule memberships come from rule_generated events; claims from the
        // claims events; answer text from dea_call events.
        let mut membership_of: HashMap<String, (String, MembershipTerm)> = HashMap::new();
        for event in trace.events_of_kind(EventKind::RuleGenerated) {
            if let Some(rules) = event.payload.get("rules").and_then(|r| r.as_array()) {
                for rule in rules {
                    let (Some(rule_id), Some(domain)) = (
                        rule.get("rule_id").and_then(|v| v.as_str()),
                        rule.get("domain").and_then(|v| v.as_str()),
                    ) else {
                        continue;
                    };
                    let membership = rule
                        .get("membership")
                        .and_then(|m| m.as_str())
                        .and_then(|m| m.parse::<MembershipTerm>().ok())
                        .unwrap_or(MembershipTerm::Low);
                    membership_of
                        .insert(rule_id.to_string(), (domain.to_string(), membership));
                }
            }
        }
        let mut answer_of: HashMap<String, String> = HashMap::new();
        for event in trace.events_of_kind(EventKind::DeaCall) {
            if let (Some(rule_id), Some(text)) = (
                event.payload.get("rule_id").and_then(|v| v.as_str()),
                event.payload.get("answer_text").and_then(|v| v.as_str()),
            ) {
                answer_of.insert(rule_id.to_string(), text.to_string());
            }
        }
        for event in trace.events_of_kind(EventKind::Claims) {
            let Some(rules) = event.payload.get("claims").and_then(|c| c.as_array()) else {
                continue;
            };
            let mut responses = Vec::new();
            for entry in rules {
                let Some(rule_id) = entry.get("rule_id").and_then(|v| v.as_str()) else {
                    continue;
                };
                let Some((domain, membership)) = membership_of.get(rule_id) else {
                    continue;
                };
                let claims: Vec<Claim> = entry
                    .get("claims")
                    .and_then(|c| serde_json::from_value(c.clone()).ok())
                    .unwrap_or_default();
                responses.push(RuleResponse {
                    rule_id: rule_id.to_string(),
                    domain: domain.clone(),
                    membership: *membership,
                    answer_text: answer_of.get(rule_id).cloned().unwrap_or_default(),
                    claims,
                });
            }
            node_responses.push((event.node_id.clone(), responses));
        }
        TraceValueFn {
            node_responses,
            settings,
            scorer,
        }
    }

    /// Composes the coalition's answer text: per node, the retained claims
    /// after re-running vote/trust/resolve over the unmasked rules.
    pub fn compose(&self, coalition: &[&str]) -> String {
        let mut parts = Vec::new();
        for (_, responses) in &self.node_responses {
            let surviving: Vec<RuleResponse> = responses
                .iter()
                .filter(|r| coalition.contains(&r.domain.as_str()))
                .cloned()
                .collect();
            if surviving.is_empty() {
                continue;
            }
            let clusters = vote_claims(&surviving);
            let (clusters, _) = trust_degrees_with(clusters, self.settings.trust_weighting);
            let resolution = resolve_conflicts(clusters, self.settings.keep_threshold);
            for cluster in &resolution.retained {
                parts.push(format!("{}: {}", cluster.key, cluster.surface));
            }
        }
        parts.join("\n")
    }

    pub fn value(&self, coalition: &[&str]) -> f64 {
        (self.scorer)(&self.compose(coalition))
    }
}
