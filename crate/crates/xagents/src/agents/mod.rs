//! The five agent roles: planner (PA), domain analyst (DAA), inference
//! expert (IEA), domain experts (DEAs), and fusion expert (FEA).
//!
//! Each role is a prompt-template profile plus a strict parser from model
//! text to typed results. The inference expert is realized as the dispatcher
//! in [`execute_rules`]: it binds rules to domain experts and assembles their
//! responses without making a model call of its own.

mod parse;
pub mod templates;

pub use parse::{extract_claims, extract_fenced_block, parse_plan, parse_rules};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, CompletionRequest, RoleTag};
use crate::graph::{
    validate_teg, DomainRule, ExpertConfig, MembershipTerm, Node, NodeContext, NodeKind, Task,
    TaskExecutionGraph,
};
use crate::trace::{EventKind, NodeEventBuffer};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("template placeholder {{{placeholder}}} is unbound")]
    UnboundPlaceholder { placeholder: String },
    #[error("plan parse failed: {reason}")]
    PlanParse { reason: String, raw: String },
    #[error("plan compiles to an invalid execution graph: {}", violations.join("; "))]
    PlanStructure { violations: Vec<String> },
    #[error("rules parse failed: {reason}")]
    RulesParse { reason: String, raw: String },
    #[error("node {node_id}: no domain rules above the execution threshold")]
    NoRulesGenerated { node_id: String },
    #[error("node {node_id} is not a sub-task node")]
    NotASubTask { node_id: String },
    #[error("domain catalog is empty")]
    EmptyCatalog,
    #[error("fusion node {node_id} has no inputs")]
    EmptyFusionContext { node_id: String },
    #[error("node {node_id}: every domain rule failed")]
    AllRulesFailed { node_id: String },
}

/// Prompt-template profile for one agent role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub role_tag: RoleTag,
    pub system_prompt_template: String,
    pub user_prompt_template: String,
    pub temperature: f64,
    pub model_id: String,
}

impl AgentProfile {
    fn request(
        &self,
        system_bindings: &[(&str, &str)],
        user_bindings: &[(&str, &str)],
    ) -> Result<CompletionRequest, AgentError> {
        Ok(CompletionRequest {
            role_tag: self.role_tag,
            system_prompt: templates::render_template(
                &self.system_prompt_template,
                system_bindings,
            )?,
            user_prompt: templates::render_template(&self.user_prompt_template, user_bindings)?,
            temperature: self.temperature,
            model_id: self.model_id.clone(),
        })
    }
}

/// The full set of agent profiles used in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRoster {
    pub planner: AgentProfile,
    pub analyst: AgentProfile,
    pub domain_expert: AgentProfile,
    pub rule_fusion: AgentProfile,
    pub task_fusion: AgentProfile,
    pub claims_extractor: AgentProfile,
}

impl AgentRoster {
    /// Default profiles: deterministic control flow (temperature 0.2) for
    /// planner, analyst, and fusion; creative generation (0.7) for the
    /// domain experts.
    pub fn with_model(model_id: &str) -> Self {
        let profile = |role_tag, system: &str, user: &str, temperature| AgentProfile {
            role_tag,
            system_prompt_template: system.to_string(),
            user_prompt_template: user.to_string(),
            temperature,
            model_id: model_id.to_string(),
        };
        AgentRoster {
            planner: profile(RoleTag::Planner, templates::PA_SYSTEM, templates::PA_USER, 0.2),
            analyst: profile(
                RoleTag::DomainAnalyst,
                templates::DAA_SYSTEM,
                templates::DAA_USER,
                0.2,
            ),
            domain_expert: profile(
                RoleTag::DomainExpert,
                templates::DEA_SYSTEM,
                templates::DEA_USER,
                0.7,
            ),
            rule_fusion: profile(
                RoleTag::FusionExpert,
                templates::FEA_RULES_SYSTEM,
                templates::FEA_RULES_USER,
                0.2,
            ),
            task_fusion: profile(
                RoleTag::FusionExpert,
                templates::FEA_SUB_SYSTEM,
                templates::FEA_SUB_USER,
                0.2,
            ),
            claims_extractor: profile(
                RoleTag::FusionExpert,
                templates::CLAIMS_EXTRACT_SYSTEM,
                templates::CLAIMS_EXTRACT_USER,
                0.2,
            ),
        }
    }
}

impl Default for AgentRoster {
    fn default() -> Self {
        AgentRoster::with_model("gpt-4")
    }
}

/// One sub-task declared by the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubTaskSpec {
    pub id: String,
    pub instruction: String,
}

/// The planner's output: sub-tasks, dependencies, and a fusion instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub sub_tasks: Vec<SubTaskSpec>,
    pub dependencies: Vec<(String, String)>,
    pub fusion_instruction: String,
}

/// Reserved node id of the task node in compiled graphs.
pub const TASK_NODE_ID: &str = "T";
/// Reserved node id of the fusion node in compiled graphs.
pub const FUSION_NODE_ID: &str = "F";

impl PlanSpec {
    /// Compiles the plan into an execution graph: the task node feeds every
    /// sub-task without incoming dependencies, declared dependencies become
    /// edges, and every sub-task without outgoing dependencies feeds the
    /// fusion node. The compiled graph must validate.
    pub fn compile(&self, task: &Task) -> Result<TaskExecutionGraph, AgentError> {
        let mut nodes = vec![Node::new(TASK_NODE_ID, NodeKind::Task, task.text.clone())];
        for sub in &self.sub_tasks {
            nodes.push(Node::new(&sub.id, NodeKind::SubTask, sub.instruction.clone()));
        }
        nodes.push(Node::new(
            FUSION_NODE_ID,
            NodeKind::Fusion,
            self.fusion_instruction.clone(),
        ));

        let has_incoming =
            |id: &str| self.dependencies.iter().any(|(_, to)| to == id);
        let has_outgoing =
            |id: &str| self.dependencies.iter().any(|(from, _)| from == id);

        let mut edges: Vec<(String, String)> = Vec::new();
        for sub in &self.sub_tasks {
            if !has_incoming(&sub.id) {
                edges.push((TASK_NODE_ID.to_string(), sub.id.clone()));
            }
        }
        for (from, to) in &self.dependencies {
            edges.push((from.clone(), to.clone()));
        }
        for sub in &self.sub_tasks {
            if !has_outgoing(&sub.id) {
                edges.push((sub.id.clone(), FUSION_NODE_ID.to_string()));
            }
        }

        let graph = TaskExecutionGraph::new(nodes, edges).map_err(|e| {
            AgentError::PlanStructure {
                violations: vec![e.to_string()],
            }
        })?;
        let report = validate_teg(&graph);
        if !report.is_ok() {
            return Err(AgentError::PlanStructure {
                violations: report.violations.iter().map(|v| v.to_string()).collect(),
            });
        }
        Ok(graph)
    }
}

/// Asks the planner to decompose the task and compiles the result into a
/// validated execution graph.
pub fn plan(
    task: &Task,
    roster: &AgentRoster,
    backend: &dyn Backend,
) -> Result<(PlanSpec, TaskExecutionGraph), AgentError> {
    let request = roster
        .planner
        .request(&[], &[("task", task.text.as_str())])?;
    let response = backend.complete(&request)?;
    let spec = parse_plan(&response.text)?;
    let graph = spec.compile(task)?;
    Ok((spec, graph))
}

/// An atomic assertion extracted from an expert answer: `key` names the slot
/// it answers, `value` is the asserted text. Two claims conflict iff they
/// share a key but differ in (normalized) value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub key: String,
    pub value: String,
}

/// One domain rule's answer to a sub-task, with its extracted claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleResponse {
    pub rule_id: String,
    pub domain: String,
    pub membership: MembershipTerm,
    pub answer_text: String,
    pub claims: Vec<Claim>,
}

/// Result of the analyst pass over one sub-task.
#[derive(Debug, Clone)]
pub struct DomainAnalysis {
    pub rules: Vec<DomainRule>,
    /// Domains the analyst named that could not be mapped into the catalog.
    pub dropped: Vec<String>,
}

/// Knobs controlling rule generation and execution.
#[derive(Debug, Clone)]
pub struct RuleSettings {
    pub max_rules: usize,
    /// Minimum membership a rule needs to be materialized.
    pub execution_threshold: MembershipTerm,
    pub parallel_rules: bool,
    /// When an expert answer carries no claims block, ask the fusion expert
    /// to extract the claims instead of falling back to one whole-answer
    /// claim. Meant for live backends; scripted fixtures emit blocks.
    pub assisted_extraction: bool,
}

impl Default for RuleSettings {
    fn default() -> Self {
        RuleSettings {
            max_rules: 5,
            execution_threshold: MembershipTerm::Lower,
            parallel_rules: true,
            assisted_extraction: false,
        }
    }
}

/// Case-insensitive Levenshtein distance, used to absorb analyst spelling
/// drift when mapping domain names onto the catalog.
fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j + 1] + 1).min(cur[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Maps an analyst-named domain onto the catalog: exact case-insensitive
/// match first, otherwise the closest entry within edit distance 2.
fn map_domain<'c>(name: &str, catalog: &'c [String]) -> Option<&'c str> {
    let trimmed = name.trim();
    if let Some(exact) = catalog
        .iter()
        .find(|d| d.eq_ignore_ascii_case(trimmed))
    {
        return Some(exact.as_str());
    }
    catalog
        .iter()
        .map(|d| (edit_distance(trimmed, d), d))
        .filter(|(dist, _)| *dist <= 2)
        .min_by_key(|(dist, _)| *dist)
        .map(|(_, d)| d.as_str())
}

fn default_persona(domain: &str) -> String {
    format!("You are an expert in {domain}. Answer strictly from that domain's knowledge and perspective.")
}

/// Asks the domain analyst to grade the sub-task against the catalog and
/// materializes the resulting IF-THEN rules, sorted by descending
/// membership, with pairwise-distinct domains, capped at `max_rules`.
pub fn analyze_domains(
    sub_task: &Node,
    context: &NodeContext,
    catalog: &[String],
    settings: &RuleSettings,
    roster: &AgentRoster,
    backend: &dyn Backend,
) -> Result<DomainAnalysis, AgentError> {
    if sub_task.kind != NodeKind::SubTask {
        return Err(AgentError::NotASubTask {
            node_id: sub_task.id.clone(),
        });
    }
    if catalog.is_empty() {
        return Err(AgentError::EmptyCatalog);
    }

    let max_rules = settings.max_rules.to_string();
    let catalog_text = catalog.join(", ");
    let context_text = context.rendered();
    let request = roster.analyst.request(
        &[("max_rules", max_rules.as_str())],
        &[
            ("task", sub_task.spec.as_str()),
            ("context", context_text.as_str()),
            ("catalog", catalog_text.as_str()),
        ],
    )?;
    let response = backend.complete(&request)?;
    let entries = parse_rules(&response.text)?;

    let mut dropped = Vec::new();
    // (domain, membership, persona) with domains already canonical and unique.
    let mut graded: Vec<(String, MembershipTerm, Option<String>)> = Vec::new();
    for entry in entries {
        let membership: MembershipTerm =
            entry
                .membership
                .parse()
                .map_err(|e: crate::error::GraphError| AgentError::RulesParse {
                    reason: e.to_string(),
                    raw: String::new(),
                })?;
        let Some(domain) = map_domain(&entry.domain, catalog) else {
            dropped.push(entry.domain);
            continue;
        };
        if membership == MembershipTerm::Low
            || membership.value() < settings.execution_threshold.value()
        {
            continue;
        }
        match graded.iter_mut().find(|(d, _, _)| d == domain) {
            Some(existing) => {
                if membership > existing.1 {
                    existing.1 = membership;
                    existing.2 = entry.role;
                }
            }
            None => graded.push((domain.to_string(), membership, entry.role)),
        }
    }

    // Stable sort keeps the analyst's emission order within equal grades.
    graded.sort_by_key(|entry| std::cmp::Reverse(entry.1));
    graded.truncate(settings.max_rules);

    if graded.is_empty() {
        return Err(AgentError::NoRulesGenerated {
            node_id: sub_task.id.clone(),
        });
    }

    let rules = graded
        .into_iter()
        .enumerate()
        .map(|(i, (domain, membership, persona))| {
            let expert = ExpertConfig {
                role: persona.unwrap_or_else(|| default_persona(&domain)),
                temperature: roster.domain_expert.temperature,
            };
            DomainRule::new(format!("{}-r{}", sub_task.id, i + 1), domain, membership, expert)
                .expect("memberships below the threshold were filtered out")
        })
        .collect();

    Ok(DomainAnalysis { rules, dropped })
}

/// Outcome of executing one rule's domain expert.
#[derive(Debug, Clone)]
pub struct RuleOutcome {
    pub rule: DomainRule,
    pub result: Result<RuleResponse, BackendError>,
}

/// Dispatches every rule to its domain expert and assembles the responses,
/// order-aligned with the input rules. Expert calls run concurrently when
/// `parallel_rules` is set; each response carries its rule's membership.
pub fn execute_rules(
    rules: &[DomainRule],
    sub_task: &Node,
    context: &NodeContext,
    question_keys: &[String],
    settings: &RuleSettings,
    roster: &AgentRoster,
    backend: &dyn Backend,
) -> Vec<RuleOutcome> {
    let run_one = |rule: &DomainRule| -> Result<RuleResponse, BackendError> {
        let context_text = context.rendered();
        let request = roster
            .domain_expert
            .request(
                &[
                    ("expert_role", rule.expert.role.as_str()),
                    ("domain", rule.domain.as_str()),
                ],
                &[
                    ("domain", rule.domain.as_str()),
                    ("task", sub_task.spec.as_str()),
                    ("context", context_text.as_str()),
                ],
            )
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let request = CompletionRequest {
            temperature: rule.expert.temperature,
            ..request
        };
        let response = backend.complete(&request)?;
        let claims = if settings.assisted_extraction
            && parse::extract_fenced_block(&response.text, "claims").is_none()
        {
            extract_claims_assisted(&response.text, question_keys, roster, backend)
                .map_err(|e| BackendError::InvalidRequest(e.to_string()))?
        } else {
            extract_claims(&response.text, question_keys)
        };
        Ok(RuleResponse {
            rule_id: rule.rule_id.clone(),
            domain: rule.domain.clone(),
            membership: rule.membership,
            answer_text: response.text,
            claims,
        })
    };

    if settings.parallel_rules && rules.len() > 1 {
        let mut slots: Vec<Option<RuleOutcome>> = Vec::new();
        slots.resize_with(rules.len(), || None);
        let slots = std::sync::Mutex::new(slots);
        std::thread::scope(|scope| {
            for (i, rule) in rules.iter().enumerate() {
                let slots = &slots;
                let run_one = &run_one;
                scope.spawn(move || {
                    let outcome = RuleOutcome {
                        rule: rule.clone(),
                        result: run_one(rule),
                    };
                    slots.lock().unwrap()[i] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("every rule slot is filled"))
            .collect()
    } else {
        rules
            .iter()
            .map(|rule| RuleOutcome {
                rule: rule.clone(),
                result: run_one(rule),
            })
            .collect()
    }
}

/// Asks the fusion expert to compose one answer for a sub-task from its
/// retained claims, rendered one per line.
pub fn compose_rule_fusion(
    sub_task: &Node,
    retained_claims: &str,
    roster: &AgentRoster,
    backend: &dyn Backend,
) -> Result<String, AgentError> {
    let request = roster.rule_fusion.request(
        &[],
        &[
            ("task", sub_task.spec.as_str()),
            ("claims", retained_claims),
        ],
    )?;
    Ok(backend.complete(&request)?.text)
}

/// Fuses the completed sub-task outputs into the final result.
pub fn fuse_sub_tasks(
    fusion_node: &Node,
    context: &NodeContext,
    roster: &AgentRoster,
    backend: &dyn Backend,
) -> Result<String, AgentError> {
    if context.is_empty() {
        return Err(AgentError::EmptyFusionContext {
            node_id: fusion_node.id.clone(),
        });
    }
    let context_text = context.rendered();
    let request = roster.task_fusion.request(
        &[],
        &[
            ("task", fusion_node.spec.as_str()),
            ("context", context_text.as_str()),
        ],
    )?;
    Ok(backend.complete(&request)?.text)
}

/// Model-assisted claim extraction for answers without structured blocks:
/// one extraction call produces the claims block, which is then parsed
/// directly. If the extractor itself fails to emit a block, the original
/// answer becomes one whole-answer claim, never the extractor's text.
pub fn extract_claims_assisted(
    answer_text: &str,
    question_keys: &[String],
    roster: &AgentRoster,
    backend: &dyn Backend,
) -> Result<Vec<Claim>, AgentError> {
    if answer_text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let slots = if question_keys.is_empty() {
        "answer".to_string()
    } else {
        question_keys.join(", ")
    };
    let request = roster.claims_extractor.request(
        &[],
        &[("catalog", slots.as_str()), ("task", answer_text)],
    )?;
    let response = backend.complete(&request)?;
    if parse::extract_fenced_block(&response.text, "claims").is_some() {
        Ok(extract_claims(&response.text, question_keys))
    } else {
        Ok(vec![Claim {
            key: "answer".into(),
            value: answer_text.trim().to_string(),
        }])
    }
}

/// Records a rule-generation event payload for the trace.
pub(crate) fn rule_generated_payload(analysis: &DomainAnalysis) -> serde_json::Value {
    serde_json::json!({
        "rules": analysis.rules,
        "dropped_domains": analysis.dropped,
    })
}

pub(crate) fn record_dea_call(
    buffer: &mut NodeEventBuffer,
    outcome: &RuleOutcome,
) {
    let payload = match &outcome.result {
        Ok(response) => serde_json::json!({
            "rule_id": outcome.rule.rule_id,
            "domain": outcome.rule.domain,
            "membership": outcome.rule.membership,
            "status": "ok",
            "answer_text": response.answer_text,
        }),
        Err(error) => serde_json::json!({
            "rule_id": outcome.rule.rule_id,
            "domain": outcome.rule.domain,
            "membership": outcome.rule.membership,
            "status": "failed",
            "error": error.to_string(),
        }),
    };
    buffer.push(EventKind::DeaCall, payload);
}
