//! Parsers from model text to typed results.
//!
//! Agents are instructed to answer with fenced structured blocks (```plan,
//! ```rules, ```claims). Parsers accept only those blocks and fail loudly
//! otherwise, carrying the raw text for diagnosis.

use serde::Deserialize;

use crate::agents::{AgentError, Claim, PlanSpec, SubTaskSpec};

/// Returns the body of the first fenced block tagged `tag`, if any.
pub fn extract_fenced_block(text: &str, tag: &str) -> Option<String> {
    let open = format!("```{tag}");
    let mut in_block = false;
    let mut body: Vec<&str> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if !in_block {
            if trimmed == open {
                in_block = true;
            }
        } else {
            if trimmed == "```" {
                return Some(body.join("\n"));
            }
            body.push(line);
        }
    }
    None
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanBlock {
    sub_tasks: Vec<SubTaskSpec>,
    #[serde(default)]
    dependencies: Vec<(String, String)>,
    fusion_instruction: String,
}

/// Parses the planner's fenced plan block into a [`PlanSpec`].
pub fn parse_plan(text: &str) -> Result<PlanSpec, AgentError> {
    let body = extract_fenced_block(text, "plan").ok_or_else(|| AgentError::PlanParse {
        reason: "no fenced plan block found".into(),
        raw: text.to_string(),
    })?;
    let block: PlanBlock = serde_json::from_str(&body).map_err(|e| AgentError::PlanParse {
        reason: e.to_string(),
        raw: text.to_string(),
    })?;
    if block.sub_tasks.is_empty() {
        return Err(AgentError::PlanParse {
            reason: "plan declares no sub-tasks".into(),
            raw: text.to_string(),
        });
    }
    Ok(PlanSpec {
        sub_tasks: block.sub_tasks,
        dependencies: block.dependencies,
        fusion_instruction: block.fusion_instruction,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleBlockEntry {
    pub domain: String,
    pub membership: String,
    #[serde(default)]
    pub role: Option<String>,
}

/// Parses the analyst's fenced rules block.
pub fn parse_rules(text: &str) -> Result<Vec<RuleBlockEntry>, AgentError> {
    let body = extract_fenced_block(text, "rules").ok_or_else(|| AgentError::RulesParse {
        reason: "no fenced rules block found".into(),
        raw: text.to_string(),
    })?;
    serde_json::from_str(&body).map_err(|e| AgentError::RulesParse {
        reason: e.to_string(),
        raw: text.to_string(),
    })
}

/// Extracts atomic claims from an expert answer.
///
/// The fenced claims block may be a JSON object (`{"slot": "value"}`), an
/// array of `{"key", "value"}` records, or a bare array of strings which is
/// zipped against `question_keys`. Without a block, a non-empty answer
/// becomes one whole-answer claim; an empty answer yields no claims.
pub fn extract_claims(answer_text: &str, question_keys: &[String]) -> Vec<Claim> {
    if answer_text.trim().is_empty() {
        return Vec::new();
    }
    let Some(body) = extract_fenced_block(answer_text, "claims") else {
        return vec![Claim {
            key: "answer".into(),
            value: answer_text.trim().to_string(),
        }];
    };

    if let Ok(map) = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&body) {
        return map
            .into_iter()
            .filter(|(k, _)| !k.trim().is_empty())
            .map(|(k, v)| Claim {
                key: k,
                value: json_scalar_to_string(&v),
            })
            .collect();
    }

    #[derive(Deserialize)]
    struct KeyValue {
        key: String,
        value: serde_json::Value,
    }
    if let Ok(pairs) = serde_json::from_str::<Vec<KeyValue>>(&body) {
        return pairs
            .into_iter()
            .filter(|p| !p.key.trim().is_empty())
            .map(|p| Claim {
                key: p.key,
                value: json_scalar_to_string(&p.value),
            })
            .collect();
    }

    if let Ok(values) = serde_json::from_str::<Vec<serde_json::Value>>(&body) {
        return values
            .iter()
            .enumerate()
            .map(|(i, v)| Claim {
                key: question_keys
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("a{}", i + 1)),
                value: json_scalar_to_string(v),
            })
            .collect();
    }

    // Block present but unparseable: treat the whole answer as one claim.
    vec![Claim {
        key: "answer".into(),
        value: answer_text.trim().to_string(),
    }]
}

fn json_scalar_to_string(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
