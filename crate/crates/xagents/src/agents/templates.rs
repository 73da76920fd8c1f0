//! Prompt templates and strict placeholder rendering.
//!
//! Templates use `{name}` placeholders. Rendering replaces every bound
//! placeholder and fails if any placeholder in the template is left unbound,
//! so a template edit can never silently drop an input.

use regex::Regex;
use std::sync::OnceLock;

use crate::agents::AgentError;

pub const PA_SYSTEM: &str = include_str!("../../assets/prompts/pa_system.txt");
pub const PA_USER: &str = include_str!("../../assets/prompts/pa_user.txt");
pub const DAA_SYSTEM: &str = include_str!("../../assets/prompts/daa_system.txt");
pub const DAA_USER: &str = include_str!("../../assets/prompts/daa_user.txt");
pub const DEA_SYSTEM: &str = include_str!("../../assets/prompts/dea_system.txt");
pub const DEA_USER: &str = include_str!("../../assets/prompts/dea_user.txt");
pub const FEA_RULES_SYSTEM: &str = include_str!("../../assets/prompts/fea_rules_system.txt");
pub const FEA_RULES_USER: &str = include_str!("../../assets/prompts/fea_rules_user.txt");
pub const FEA_SUB_SYSTEM: &str = include_str!("../../assets/prompts/fea_sub_system.txt");
pub const FEA_SUB_USER: &str = include_str!("../../assets/prompts/fea_sub_user.txt");
pub const CLAIMS_EXTRACT_SYSTEM: &str =
    include_str!("../../assets/prompts/claims_extract_system.txt");
pub const CLAIMS_EXTRACT_USER: &str = include_str!("../../assets/prompts/claims_extract_user.txt");

fn placeholder_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid placeholder pattern"))
}

/// Replaces each `{name}` with its binding. Unbound placeholders are an
/// error naming the placeholder; literal JSON braces in templates are left
/// alone because their brace content is never a bare lowercase word.
pub fn render_template(template: &str, bindings: &[(&str, &str)]) -> Result<String, AgentError> {
    let mut rendered = template.to_string();
    for (name, value) in bindings {
        rendered = rendered.replace(&format!("{{{name}}}"), value);
    }
    if let Some(m) = placeholder_pattern().captures(&rendered) {
        return Err(AgentError::UnboundPlaceholder {
            placeholder: m[1].to_string(),
        });
    }
    Ok(rendered)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_replaces_all_bound_placeholders() {
        let out = render_template("do {task} with {context}", &[("task", "x"), ("context", "y")])
            .unwrap();
        assert_eq!(out, "do x with y");
    }

    #[test]
    fn unbound_placeholder_is_named() {
        let err = render_template("do {task} in {domain}", &[("task", "x")]).unwrap_err();
        assert!(err.to_string().contains("domain"));
    }

    #[test]
    fn json_examples_in_templates_are_not_placeholders() {
        let out = render_template(PA_USER, &[("task", "write a story")]).unwrap();
        assert!(out.contains("write a story"));
        // The planner system prompt contains a JSON example with braces.
        render_template(PA_SYSTEM, &[]).unwrap();
    }

    #[test]
    fn default_templates_bind_cleanly() {
        render_template(
            DAA_USER,
            &[("task", "t"), ("context", "c"), ("catalog", "a, b")],
        )
        .unwrap();
        render_template(
            DEA_SYSTEM,
            &[("expert_role", "You are an expert."), ("domain", "History")],
        )
        .unwrap();
        render_template(
            DEA_USER,
            &[("domain", "History"), ("task", "t"), ("context", "c")],
        )
        .unwrap();
        render_template(FEA_RULES_USER, &[("task", "t"), ("claims", "- a: b")]).unwrap();
        render_template(FEA_SUB_USER, &[("task", "t"), ("context", "c")]).unwrap();
        render_template(DAA_SYSTEM, &[("max_rules", "5")]).unwrap();
    }
}
