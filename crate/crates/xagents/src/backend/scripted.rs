//! Deterministic scripted backend driven by a playbook file.
//!
//! A playbook is an ordered list of `{role, match | regex, response}`
//! records; the first entry whose role matches and whose matcher hits the
//! user prompt wins, and its response is returned verbatim. Entries may also
//! carry `"fail": true` to inject a transport fault for resilience tests.

use regex::Regex;
use serde::Deserialize;
use std::fs;
use std::path::Path;
use thiserror::Error;

use super::{
    prompt_digest, Backend, BackendError, CompletionRequest, CompletionResponse, ResponseSource,
    RoleTag, TokenUsage,
};

#[derive(Debug, Error)]
pub enum PlaybookError {
    #[error("cannot read playbook {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("playbook parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("playbook entry {index}: {message}")]
    Entry { index: usize, message: String },
}

/// How an entry matches the user prompt.
#[derive(Debug, Clone)]
pub enum PromptMatcher {
    Substring(String),
    Pattern(Regex),
}

impl PromptMatcher {
    pub fn matches(&self, user_prompt: &str) -> bool {
        match self {
            PromptMatcher::Substring(needle) => user_prompt.contains(needle),
            PromptMatcher::Pattern(re) => re.is_match(user_prompt),
        }
    }

    fn key(&self) -> String {
        match self {
            PromptMatcher::Substring(s) => format!("substring:{s}"),
            PromptMatcher::Pattern(re) => format!("regex:{}", re.as_str()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlaybookEntry {
    pub role: RoleTag,
    pub matcher: PromptMatcher,
    pub response: String,
    pub fail: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaybookRecord {
    role: String,
    #[serde(rename = "match")]
    substring: Option<String>,
    regex: Option<String>,
    #[serde(default)]
    response: String,
    #[serde(default)]
    fail: bool,
}

/// Ordered canned responses; immutable during a run.
#[derive(Debug, Clone, Default)]
pub struct Playbook {
    entries: Vec<PlaybookEntry>,
    warnings: Vec<String>,
}

impl Playbook {
    pub fn from_entries(entries: Vec<PlaybookEntry>) -> Self {
        let mut warnings = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, entry) in entries.iter().enumerate() {
            let key = (entry.role, entry.matcher.key());
            if !seen.insert(key) {
                warnings.push(format!(
                    "entry {i}: duplicate matcher for role {}; first match wins",
                    entry.role
                ));
            }
        }
        Playbook { entries, warnings }
    }

    /// Loads a playbook from a JSON file, preserving entry order.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlaybookError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| PlaybookError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, PlaybookError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Ok(Playbook::default());
        }
        let records: Vec<PlaybookRecord> =
            serde_json::from_str(trimmed).map_err(|e| PlaybookError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
        let mut entries = Vec::with_capacity(records.len());
        for (index, record) in records.into_iter().enumerate() {
            let role: RoleTag = record
                .role
                .parse()
                .map_err(|e: BackendError| PlaybookError::Entry {
                    index,
                    message: e.to_string(),
                })?;
            let matcher = match (record.substring, record.regex) {
                (Some(s), None) => PromptMatcher::Substring(s),
                (None, Some(pattern)) => {
                    let re = Regex::new(&pattern).map_err(|e| PlaybookError::Entry {
                        index,
                        message: format!("bad regex: {e}"),
                    })?;
                    PromptMatcher::Pattern(re)
                }
                (Some(_), Some(_)) => {
                    return Err(PlaybookError::Entry {
                        index,
                        message: "entry has both `match` and `regex`".into(),
                    })
                }
                (None, None) => {
                    return Err(PlaybookError::Entry {
                        index,
                        message: "entry needs `match` or `regex`".into(),
                    })
                }
            };
            entries.push(PlaybookEntry {
                role,
                matcher,
                response: record.response,
                fail: record.fail,
            });
        }
        Ok(Playbook::from_entries(entries))
    }

    pub fn entries(&self) -> &[PlaybookEntry] {
        &self.entries
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// First entry whose role and matcher both hit, in file order.
    pub fn lookup(&self, role: RoleTag, user_prompt: &str) -> Option<&PlaybookEntry> {
        self.entries
            .iter()
            .find(|e| e.role == role && e.matcher.matches(user_prompt))
    }
}

/// Backend that replays a [`Playbook`]. Responses come back verbatim with
/// zero latency and deterministic whitespace-token usage counts, so repeated
/// runs over the same playbook are byte-identical.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    playbook: Playbook,
}

impl ScriptedBackend {
    pub fn new(playbook: Playbook) -> Self {
        ScriptedBackend { playbook }
    }

    pub fn playbook(&self) -> &Playbook {
        &self.playbook
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let entry = self
            .playbook
            .lookup(request.role_tag, &request.user_prompt)
            .ok_or_else(|| BackendError::PlaybookMiss {
                role_tag: request.role_tag,
                digest: prompt_digest(&request.user_prompt),
                excerpt: request.user_prompt.chars().take(80).collect(),
            })?;
        if entry.fail {
            return Err(BackendError::ScriptedFault {
                role_tag: request.role_tag,
            });
        }
        Ok(CompletionResponse {
            text: entry.response.clone(),
            usage: TokenUsage {
                prompt_tokens: request.user_prompt.split_whitespace().count() as u64,
                completion_tokens: entry.response.split_whitespace().count() as u64,
            },
            latency_ms: 0,
            source: ResponseSource::Scripted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(role: RoleTag, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            role_tag: role,
            system_prompt: "sys".into(),
            user_prompt: prompt.into(),
            temperature: 0.2,
            model_id: "scripted".into(),
        }
    }

    #[test]
    fn lookup_returns_matching_entry_verbatim() {
        let playbook = Playbook::parse(
            r#"[
                {"role": "DAA", "match": "Analyze the domains", "response": "  padded response  "},
                {"role": "DAA", "match": "Analyze", "response": "later entry"}
            ]"#,
        )
        .unwrap();
        let backend = ScriptedBackend::new(playbook);
        let resp = backend
            .complete(&req(RoleTag::DomainAnalyst, "Analyze the domains of this task"))
            .unwrap();
        // First match wins; text is returned without trimming.
        assert_eq!(resp.text, "  padded response  ");
        assert_eq!(resp.source, ResponseSource::Scripted);
    }

    #[test]
    fn miss_names_role_and_digest() {
        let backend = ScriptedBackend::new(Playbook::default());
        let err = backend
            .complete(&req(RoleTag::Planner, "no entry for this"))
            .unwrap_err();
        match err {
            BackendError::PlaybookMiss { role_tag, digest, .. } => {
                assert_eq!(role_tag, RoleTag::Planner);
                assert_eq!(digest.len(), 16);
            }
            other => panic!("expected playbook miss, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_empty_playbook() {
        let playbook = Playbook::parse("").unwrap();
        assert!(playbook.entries().is_empty());
    }

    #[test]
    fn entries_preserved_in_file_order() {
        let playbook = Playbook::parse(
            r#"[
                {"role": "PA", "match": "a", "response": "1"},
                {"role": "PA", "match": "b", "response": "2"},
                {"role": "PA", "regex": "c+", "response": "3"}
            ]"#,
        )
        .unwrap();
        assert_eq!(playbook.entries().len(), 3);
        assert_eq!(playbook.entries()[1].response, "2");
    }

    #[test]
    fn regex_matchers_hit_patterns() {
        let playbook = Playbook::parse(
            r#"[{"role": "DEA", "regex": "question [0-9]+ of", "response": "matched"}]"#,
        )
        .unwrap();
        assert!(playbook
            .lookup(RoleTag::DomainExpert, "answer question 12 of the set")
            .is_some());
        assert!(playbook
            .lookup(RoleTag::DomainExpert, "answer question twelve of the set")
            .is_none());
    }

    #[test]
    fn malformed_record_reports_line() {
        let raw = "[\n  {\"role\": \"PA\", \"match\": \"a\", \"response\": \"1\"},\n  {\"role\": \"PA\", \"match\": }\n]";
        match Playbook::parse(raw).unwrap_err() {
            PlaybookError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_matchers_warn_and_first_wins() {
        let playbook = Playbook::parse(
            r#"[
                {"role": "FEA", "match": "fuse", "response": "first"},
                {"role": "FEA", "match": "fuse", "response": "second"}
            ]"#,
        )
        .unwrap();
        assert_eq!(playbook.warnings().len(), 1);
        assert_eq!(
            playbook.lookup(RoleTag::FusionExpert, "please fuse").unwrap().response,
            "first"
        );
    }

    #[test]
    fn fault_entries_inject_scripted_faults() {
        let playbook = Playbook::parse(
            r#"[{"role": "DEA", "match": "flaky", "fail": true}]"#,
        )
        .unwrap();
        let backend = ScriptedBackend::new(playbook);
        let err = backend
            .complete(&req(RoleTag::DomainExpert, "flaky question"))
            .unwrap_err();
        assert!(matches!(err, BackendError::ScriptedFault { .. }));
    }
}
