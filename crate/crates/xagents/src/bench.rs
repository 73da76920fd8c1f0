//! Benchmark harness: loaders and scorers for the three task families, and
//! baseline-relative aggregation.
//!
//! Scores follow the correct-mention ratio `score = correct / n_questions`.
//! Trivia matching is substring containment on normalized text (lowercase,
//! punctuation removed, whitespace collapsed) against the instance's answer
//! aliases, counting each question at most once. Logic puzzles score exact
//! house-number accuracy. Codenames scores target recall:
//! `|guesses ∩ targets| / |targets|`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read dataset {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {path} is not a JSON array: {message}")]
    NotAnArray { path: String, message: String },
    #[error("dataset {path} record {index}: {message}")]
    BadRecord {
        path: String,
        index: usize,
        message: String,
    },
    #[error("cannot aggregate an empty score list")]
    EmptyScores,
    #[error("unknown dataset kind {0:?} (expected trivia, logic, or codenames)")]
    UnknownKind(String),
}

/// The three benchmark task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Trivia,
    Logic,
    Codenames,
}

impl FromStr for DatasetKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trivia" => Ok(DatasetKind::Trivia),
            "logic" => Ok(DatasetKind::Logic),
            "codenames" => Ok(DatasetKind::Codenames),
            other => Err(BenchError::UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetKind::Trivia => write!(f, "trivia"),
            DatasetKind::Logic => write!(f, "logic"),
            DatasetKind::Codenames => write!(f, "codenames"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriviaQuestion {
    pub question: String,
    /// Accepted alias strings; any one counts as a correct mention.
    pub answers: Vec<String>,
}

/// Story-writing instance: craft a coherent story around `topic` while
/// incorporating the answers to every question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriviaInstance {
    pub topic: String,
    pub questions: Vec<TriviaQuestion>,
}

/// House-assignment puzzle: `input` holds the clues and the question,
/// `target` the gold house number (2 to 5 houses per puzzle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicPuzzleInstance {
    pub input: String,
    pub target: i64,
}

/// Cooperative word game instance: the spymaster hints at the target words,
/// the guesser picks them out of the full word list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodenamesInstance {
    pub targets: Vec<String>,
    pub distractors: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Trivia(Vec<TriviaInstance>),
    Logic(Vec<LogicPuzzleInstance>),
    Codenames(Vec<CodenamesInstance>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Trivia(v) => v.len(),
            Dataset::Logic(v) => v.len(),
            Dataset::Codenames(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Trivia(_) => DatasetKind::Trivia,
            Dataset::Logic(_) => DatasetKind::Logic,
            Dataset::Codenames(_) => DatasetKind::Codenames,
        }
    }
}

/// Loads a dataset file: a JSON array of records matching the family schema.
/// The first malformed record aborts the load with its index.
pub fn load_dataset(path: impl AsRef<Path>, kind: DatasetKind) -> Result<Dataset, BenchError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| BenchError::Read {
        path: display.clone(),
        source,
    })?;
    let records: Vec<serde_json::Value> =
        serde_json::from_str(&raw).map_err(|e| BenchError::NotAnArray {
            path: display.clone(),
            message: e.to_string(),
        })?;

    let bad = |index: usize, message: String| BenchError::BadRecord {
        path: display.clone(),
        index,
        message,
    };

    match kind {
        DatasetKind::Trivia => {
            let mut instances = Vec::with_capacity(records.len());
            for (index, record) in records.into_iter().enumerate() {
                let instance: TriviaInstance = serde_json::from_value(record)
                    .map_err(|e| bad(index, e.to_string()))?;
                if instance.questions.is_empty() {
                    return Err(bad(index, "instance has no questions".into()));
                }
                for (qi, q) in instance.questions.iter().enumerate() {
                    if q.answers.is_empty() {
                        return Err(bad(index, format!("question {qi} has no answer aliases")));
                    }
                }
                instances.push(instance);
            }
            Ok(Dataset::Trivia(instances))
        }
        DatasetKind::Logic => {
            let mut instances = Vec::with_capacity(records.len());
            for (index, record) in records.into_iter().enumerate() {
                let instance: LogicPuzzleInstance = serde_json::from_value(record)
                    .map_err(|e| bad(index, e.to_string()))?;
                if !(1..=5).contains(&instance.target) {
                    return Err(bad(
                        index,
                        format!("target house {} outside 1..=5", instance.target),
                    ));
                }
                instances.push(instance);
            }
            Ok(Dataset::Logic(instances))
        }
        DatasetKind::Codenames => {
            let mut instances = Vec::with_capacity(records.len());
            for (index, record) in records.into_iter().enumerate() {
                let instance: CodenamesInstance = serde_json::from_value(record)
                    .map_err(|e| bad(index, e.to_string()))?;
                if instance.targets.is_empty() {
                    return Err(bad(index, "instance has no target words".into()));
                }
                let targets: BTreeSet<String> =
                    instance.targets.iter().map(|w| normalize_match(w)).collect();
                let overlap: Vec<&String> = instance
                    .distractors
                    .iter()
                    .filter(|w| targets.contains(&normalize_match(w)))
                    .collect();
                if !overlap.is_empty() {
                    return Err(bad(
                        index,
                        format!("targets and distractors overlap: {overlap:?}"),
                    ));
                }
                instances.push(instance);
            }
            Ok(Dataset::Codenames(instances))
        }
    }
}

/// Match normalization: lowercase, punctuation removed, whitespace collapsed.
fn normalize_match(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fraction of questions whose answer is mentioned in the output: a question
/// counts (at most once) iff at least one of its aliases appears in the
/// normalized output text.
pub fn score_trivia(output_text: &str, instance: &TriviaInstance) -> f64 {
    if instance.questions.is_empty() {
        return 0.0;
    }
    let haystack = normalize_match(output_text);
    let correct = instance
        .questions
        .iter()
        .filter(|q| {
            q.answers.iter().any(|alias| {
                let needle = normalize_match(alias);
                !needle.is_empty() && haystack.contains(&needle)
            })
        })
        .count();
    correct as f64 / instance.questions.len() as f64
}

/// First integer on the final non-empty line of the output, the conventional
/// place for a logic puzzle's house-number answer.
pub fn extract_house_prediction(output_text: &str) -> Option<i64> {
    let line = output_text.lines().rev().find(|l| !l.trim().is_empty())?;
    let mut digits = String::new();
    for c in line.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if !digits.is_empty() {
            break;
        }
    }
    digits.parse().ok()
}

/// Exact-match house accuracy. Unparseable predictions score 0 and are
/// flagged so reports can distinguish wrong answers from missing ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicScore {
    pub score: f64,
    pub unparsed: bool,
}

pub fn score_logic(prediction: Option<i64>, instance: &LogicPuzzleInstance) -> LogicScore {
    match prediction {
        Some(house) => LogicScore {
            score: if house == instance.target { 1.0 } else { 0.0 },
            unparsed: false,
        },
        None => LogicScore {
            score: 0.0,
            unparsed: true,
        },
    }
}

/// Pulls the guessed words out of an output: tokens from the text after the
/// last "guesses" marker line (fallback: the whole text) that appear in the
/// instance's full word list, deduplicated, in order of first mention.
pub fn extract_guesses(output_text: &str, instance: &CodenamesInstance) -> Vec<String> {
    let lowered = output_text.to_lowercase();
    let tail = match lowered.rfind("guesses") {
        Some(pos) => &lowered[pos..],
        None => lowered.as_str(),
    };
    let word_list: BTreeSet<String> = instance
        .targets
        .iter()
        .chain(instance.distractors.iter())
        .map(|w| normalize_match(w))
        .collect();
    let mut seen = BTreeSet::new();
    let mut guesses = Vec::new();
    for token in tail
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let token = normalize_match(token);
        if word_list.contains(&token) && seen.insert(token.clone()) {
            guesses.push(token);
        }
    }
    guesses
}

/// Target recall: `|guesses ∩ targets| / |targets|` after case
/// normalization. Guesses outside the word list are ignored by extraction;
/// duplicates count once.
pub fn score_codenames(guesses: &[String], instance: &CodenamesInstance) -> f64 {
    if instance.targets.is_empty() {
        return 0.0;
    }
    let targets: BTreeSet<String> = instance.targets.iter().map(|w| normalize_match(w)).collect();
    let hit: BTreeSet<String> = guesses
        .iter()
        .map(|g| normalize_match(g))
        .filter(|g| targets.contains(g))
        .collect();
    hit.len() as f64 / instance.targets.len() as f64
}

/// Per-run aggregate with optional baseline-relative delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Raw per-instance scores in [0, 1].
    pub per_instance: Vec<f64>,
    /// Mean score as a percentage, rounded to one decimal.
    pub mean_score_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_pct: Option<f64>,
    /// `(mean − baseline) / baseline × 100`, rounded to one decimal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Folds per-instance scores into a report. The delta is computed from the
/// rounded mean so it reproduces published one-decimal score columns; a zero
/// baseline leaves the delta undefined with a warning.
pub fn aggregate(per_instance: &[f64], baseline_pct: Option<f64>) -> Result<ScoreReport, BenchError> {
    if per_instance.is_empty() {
        return Err(BenchError::EmptyScores);
    }
    let mean_score_pct = round1(per_instance.iter().sum::<f64>() / per_instance.len() as f64 * 100.0);
    let mut warnings = Vec::new();
    let delta_pct = match baseline_pct {
        Some(baseline) if baseline != 0.0 => {
            Some(round1((mean_score_pct - baseline) / baseline * 100.0))
        }
        Some(_) => {
            warnings.push("baseline is zero; delta undefined and omitted".to_string());
            None
        }
        None => None,
    };
    Ok(ScoreReport {
        per_instance: per_instance.to_vec(),
        mean_score_pct,
        baseline_pct,
        delta_pct,
        warnings,
    })
}
