//! Run configuration: backend selection, engine thresholds, agent
//! temperatures and template overrides, and the domain catalog.
//!
//! Configs are TOML documents; every field has a default, so an empty file
//! is a valid scripted-less configuration skeleton. Credentials are read
//! from the environment variable named in the config, never from the file.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

use crate::agents::{AgentRoster, RuleSettings};
use crate::backend::{
    Backend, CachingBackend, HttpBackend, HttpBackendConfig, Playbook, ScriptedBackend,
};
use crate::engine::{EngineSettings, TrustWeighting};
use crate::graph::MembershipTerm;

/// The tie-break chain used by conflict resolution. Only the default chain
/// is implemented; the id exists so configs are explicit about it.
pub const TIE_BREAK_MEMBERSHIP_VOTES_LEX: &str = "membership-votes-lex";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read template override {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Playbook(#[from] crate::backend::PlaybookError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Playbook path for the scripted backend, relative to the config file.
    pub playbook: Option<PathBuf>,
    pub base_url: String,
    pub model_id: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub concurrency: usize,
    pub cache: bool,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Scripted,
            playbook: None,
            base_url: "https://api.openai.com/v1".into(),
            model_id: "gpt-4".into(),
            api_key_env: "XAGENTS_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_base_ms: 500,
            concurrency: 4,
            cache: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    /// K: maximum number of domain rules per sub-task node.
    pub max_rules: usize,
    /// Minimum membership grade a rule needs to be materialized.
    pub execution_threshold: String,
    /// τ: retained clusters below this trust are flagged low-confidence.
    pub keep_threshold: f64,
    pub tie_break: String,
    pub trust_weighting: TrustWeighting,
    pub parallel_rules: bool,
    /// "direct" parses expert claims blocks as-is; "assisted" routes
    /// block-less answers through a fusion-expert extraction call.
    pub extraction: String,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            max_rules: 5,
            execution_threshold: "Lower".into(),
            keep_threshold: 0.5,
            tie_break: TIE_BREAK_MEMBERSHIP_VOTES_LEX.into(),
            trust_weighting: TrustWeighting::MembershipWeighted,
            parallel_rules: true,
            extraction: "direct".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsSection {
    pub pa_temperature: f64,
    pub daa_temperature: f64,
    pub iea_temperature: f64,
    pub dea_temperature: f64,
    pub fea_temperature: f64,
    /// Template overrides: template name -> file path relative to the config.
    pub templates: std::collections::BTreeMap<String, PathBuf>,
}

impl Default for AgentsSection {
    fn default() -> Self {
        AgentsSection {
            pa_temperature: 0.2,
            daa_temperature: 0.2,
            iea_temperature: 0.2,
            dea_temperature: 0.7,
            fea_temperature: 0.2,
            templates: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub node_retries: u32,
    pub parallel_nodes: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            node_retries: 1,
            parallel_nodes: true,
        }
    }
}

/// The twenty-domain default catalog used for rule generation.
pub fn default_catalog() -> Vec<String> {
    [
        "Entertainment-and-Media",
        "Arts-and-Design",
        "History",
        "Science",
        "Technology",
        "Literature",
        "Geography",
        "Sports",
        "Music",
        "Film",
        "Politics",
        "Economics",
        "Medicine",
        "Law",
        "Mathematics",
        "Philosophy",
        "Religion",
        "Nature",
        "Food-and-Drink",
        "Pop-Culture",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendSection,
    pub engine: EngineSection,
    pub agents: AgentsSection,
    pub run: RunSection,
    pub domains: Vec<String>,
    /// Directory template overrides and playbooks resolve against; set to
    /// the config file's directory on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            backend: Default::default(),
            engine: Default::default(),
            agents: Default::default(),
            run: Default::default(),
            domains: default_catalog(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: Config =
            toml::from_str(&raw).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.base_dir = path
            .parent()
            .map(|p| p.to_path_buf())
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Invalid {
            field: field.to_string(),
            message,
        };
        if self.backend.kind == BackendKind::Scripted && self.backend.playbook.is_none() {
            return Err(invalid(
                "backend.playbook",
                "scripted backend requires a playbook path".into(),
            ));
        }
        if self.engine.max_rules == 0 {
            return Err(invalid("engine.max_rules", "must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.engine.keep_threshold) {
            return Err(invalid(
                "engine.keep_threshold",
                format!("{} outside [0, 1]", self.engine.keep_threshold),
            ));
        }
        self.execution_threshold().map_err(|e| {
            invalid("engine.execution_threshold", e.to_string())
        })?;
        if self.engine.tie_break != TIE_BREAK_MEMBERSHIP_VOTES_LEX {
            return Err(invalid(
                "engine.tie_break",
                format!(
                    "unknown policy {:?} (available: {TIE_BREAK_MEMBERSHIP_VOTES_LEX:?})",
                    self.engine.tie_break
                ),
            ));
        }
        if !matches!(self.engine.extraction.as_str(), "direct" | "assisted") {
            return Err(invalid(
                "engine.extraction",
                format!("unknown mode {:?} (direct or assisted)", self.engine.extraction),
            ));
        }
        for (field, temp) in [
            ("agents.pa_temperature", self.agents.pa_temperature),
            ("agents.daa_temperature", self.agents.daa_temperature),
            ("agents.iea_temperature", self.agents.iea_temperature),
            ("agents.dea_temperature", self.agents.dea_temperature),
            ("agents.fea_temperature", self.agents.fea_temperature),
        ] {
            if !(0.0..=2.0).contains(&temp) {
                return Err(invalid(field, format!("{temp} outside [0, 2]")));
            }
        }
        if self.backend.concurrency == 0 {
            return Err(invalid("backend.concurrency", "must be at least 1".into()));
        }
        if self.domains.is_empty() {
            return Err(invalid("domains", "catalog must not be empty".into()));
        }
        Ok(())
    }

    pub fn execution_threshold(&self) -> Result<MembershipTerm, crate::error::GraphError> {
        self.engine.execution_threshold.parse()
    }

    pub fn engine_settings(&self) -> EngineSettings {
        EngineSettings {
            rules: RuleSettings {
                max_rules: self.engine.max_rules,
                execution_threshold: self
                    .execution_threshold()
                    .unwrap_or(MembershipTerm::Lower),
                parallel_rules: self.engine.parallel_rules,
                assisted_extraction: self.engine.extraction == "assisted",
            },
            keep_threshold: self.engine.keep_threshold,
            trust_weighting: self.engine.trust_weighting,
        }
    }

    /// Builds the agent roster with configured temperatures and any template
    /// overrides loaded from disk.
    pub fn roster(&self) -> Result<AgentRoster, ConfigError> {
        let mut roster = AgentRoster::with_model(&self.backend.model_id);
        roster.planner.temperature = self.agents.pa_temperature;
        roster.analyst.temperature = self.agents.daa_temperature;
        roster.domain_expert.temperature = self.agents.dea_temperature;
        roster.rule_fusion.temperature = self.agents.fea_temperature;
        roster.task_fusion.temperature = self.agents.fea_temperature;
        roster.claims_extractor.temperature = self.agents.fea_temperature;

        for (name, path) in &self.agents.templates {
            let resolved = self.base_dir.join(path);
            let text = std::fs::read_to_string(&resolved).map_err(|source| {
                ConfigError::Template {
                    path: resolved.display().to_string(),
                    source,
                }
            })?;
            let slot = match name.as_str() {
                "pa_system" => &mut roster.planner.system_prompt_template,
                "pa_user" => &mut roster.planner.user_prompt_template,
                "daa_system" => &mut roster.analyst.system_prompt_template,
                "daa_user" => &mut roster.analyst.user_prompt_template,
                "dea_system" => &mut roster.domain_expert.system_prompt_template,
                "dea_user" => &mut roster.domain_expert.user_prompt_template,
                "fea_rules_system" => &mut roster.rule_fusion.system_prompt_template,
                "fea_rules_user" => &mut roster.rule_fusion.user_prompt_template,
                "fea_sub_system" => &mut roster.task_fusion.system_prompt_template,
                "fea_sub_user" => &mut roster.task_fusion.user_prompt_template,
                other => {
                    return Err(ConfigError::Invalid {
                        field: format!("agents.templates.{other}"),
                        message: "unknown template name".into(),
                    })
                }
            };
            *slot = text;
        }
        Ok(roster)
    }

    /// Assembles a run driver over `backend` with this config's catalog,
    /// engine settings, roster, and retry policy.
    pub fn orchestrator<'a>(
        &self,
        backend: &'a dyn Backend,
    ) -> Result<crate::orchestrator::Orchestrator<'a>, ConfigError> {
        Ok(crate::orchestrator::Orchestrator {
            catalog: self.domains.clone(),
            settings: self.engine_settings(),
            roster: self.roster()?,
            node_retries: self.run.node_retries,
            parallel_nodes: self.run.parallel_nodes,
            backend,
        })
    }

    /// Instantiates the configured backend. Scripted backends load their
    /// playbook relative to the config file; live backends read their
    /// credential from the configured environment variable.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        let backend: Box<dyn Backend> = match self.backend.kind {
            BackendKind::Scripted => {
                let playbook_path = self.backend.playbook.as_ref().ok_or_else(|| {
                    ConfigError::Invalid {
                        field: "backend.playbook".into(),
                        message: "scripted backend requires a playbook path".into(),
                    }
                })?;
                let resolved = if playbook_path.is_absolute() {
                    playbook_path.clone()
                } else {
                    self.base_dir.join(playbook_path)
                };
                Box::new(ScriptedBackend::new(Playbook::load(resolved)?))
            }
            BackendKind::Http => Box::new(HttpBackend::new(HttpBackendConfig {
                base_url: self.backend.base_url.clone(),
                api_key_env: self.backend.api_key_env.clone(),
                timeout: Duration::from_secs(self.backend.timeout_secs),
                max_retries: self.backend.max_retries,
                backoff_base: Duration::from_millis(self.backend.backoff_base_ms),
                concurrency: self.backend.concurrency,
            })?),
        };
        Ok(if self.backend.cache {
            Box::new(CachingBackend::new(backend))
        } else {
            backend
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_form_a_valid_http_config() {
        let mut config = Config::default();
        config.backend.kind = BackendKind::Http;
        assert!(config.validate().is_ok());
        assert_eq!(config.domains.len(), 20);
        assert!(config.domains.iter().any(|d| d == "Entertainment-and-Media"));
    }

    #[test]
    fn scripted_requires_playbook() {
        let config = Config::default();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("backend.playbook"));
    }

    #[test]
    fn threshold_ranges_are_enforced() {
        let mut config = Config::default();
        config.backend.kind = BackendKind::Http;
        config.engine.keep_threshold = 1.5;
        assert!(config.validate().is_err());

        config.engine.keep_threshold = 0.5;
        config.agents.dea_temperature = 3.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn load_resolves_relative_playbook_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pb.json"), "[]").unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(
            &config_path,
            "[backend]\nkind = \"scripted\"\nplaybook = \"pb.json\"\n",
        )
        .unwrap();
        let config = Config::load(&config_path).unwrap();
        assert_eq!(config.backend.kind, BackendKind::Scripted);
        config.build_backend().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected_with_their_name() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("bad.toml");
        std::fs::write(&config_path, "[engine]\nmax_ruels = 3\n").unwrap();
        let err = Config::load(&config_path).unwrap_err();
        assert!(err.to_string().contains("max_ruels"));
    }

    #[test]
    fn temperatures_flow_into_the_roster() {
        let mut config = Config::default();
        config.agents.dea_temperature = 0.9;
        let roster = config.roster().unwrap();
        assert_eq!(roster.domain_expert.temperature, 0.9);
        assert_eq!(roster.planner.temperature, 0.2);
    }
}
