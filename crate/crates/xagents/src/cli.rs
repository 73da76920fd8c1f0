//! Command implementations behind the `xagents` binary: run, bench,
//! explain, and validate.
//!
//! Exit-code contract: 0 success, 1 domain failure (failed run, invalid
//! graph), 2 usage or configuration error. File outputs land in a layout of
//! `traces/<run_id>.jsonl`, `reports/<name>.json`, and `explain/<name>.csv`
//! under the output directory, and are byte-deterministic under the
//! scripted backend.

use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::bench::{
    self, load_dataset, CodenamesInstance, Dataset, DatasetKind, LogicPuzzleInstance,
    ScoreReport, TriviaInstance,
};
use crate::config::Config;
use crate::explain::{
    build_samples, emit_beeswarm, shapley_exact, shapley_sampled, ExplainError, ShapRow,
    TraceValueFn,
};
use crate::graph::{validate_teg, Task, TaskExecutionGraph};
use crate::trace::RunTrace;

#[derive(Debug, Error)]
pub enum CliError {
    /// Usage or configuration problem; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Domain failure (run failed, graph invalid); exit code 1.
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

/// Reads the task input: a path to a JSON task document (or plain text), or
/// `-` for standard input.
pub fn read_task(task_arg: &str) -> Result<Task, CliError> {
    let (raw, fallback_id) = if task_arg == "-" {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| usage(format!("cannot read task from stdin: {e}")))?;
        (buf, "stdin".to_string())
    } else {
        let path = Path::new(task_arg);
        let raw = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read task {}: {e}", path.display())))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "task".into());
        (raw, id)
    };
    if let Ok(task) = serde_json::from_str::<Task>(&raw) {
        return Ok(task);
    }
    Task::new(fallback_id, raw.trim().to_string()).map_err(usage)
}

/// `run`: execute one task end to end and print the final result.
pub fn cmd_run(
    task_arg: &str,
    config_path: &Path,
    trace_out: Option<&Path>,
) -> Result<String, CliError> {
    let config = Config::load(config_path).map_err(usage)?;
    let backend = config.build_backend().map_err(usage)?;
    let task = read_task(task_arg)?;
    let orchestrator = config.orchestrator(&backend).map_err(usage)?;
    let result = orchestrator
        .run(&task, &task.id, trace_out)
        .map_err(|e| domain(format!("run failed: {e}")))?;
    Ok(result.text)
}

/// One row of a benchmark report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRow {
    pub run_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// The report document written by `bench`: per-instance rows plus the
/// aggregate block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset_kind: DatasetKind,
    pub dataset_path: String,
    pub instances: usize,
    pub rows: Vec<InstanceRow>,
    pub aggregate: ScoreReport,
}

pub struct BenchArgs<'a> {
    pub kind: &'a str,
    pub path: &'a Path,
    pub n: Option<usize>,
    pub baseline: Option<f64>,
    pub out_dir: &'a Path,
    pub config_path: &'a Path,
    pub name: Option<&'a str>,
    /// Reuse recorded traces where they exist and enable the call cache for
    /// the instances that still need to run.
    pub resume: bool,
}

/// Builds the task document a benchmark instance runs as. The instance is
/// embedded in the task metadata so traces stay self-contained for scoring
/// and attribution replay.
pub fn instance_task(
    kind: DatasetKind,
    index: usize,
    dataset: &Dataset,
) -> Result<Task, CliError> {
    let (run_id, text, instance_json, question_keys) = match dataset {
        Dataset::Trivia(instances) => {
            let instance = &instances[index];
            let n = instance.questions.len();
            let mut text = format!(
                "Write a short, coherent story about the topic \"{}\" that naturally incorporates the answer to each of the following questions.\n",
                instance.topic
            );
            for (i, q) in instance.questions.iter().enumerate() {
                text.push_str(&format!("{}. {}\n", i + 1, q.question));
            }
            let keys: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
            (
                format!("trivia{n}-{index:03}"),
                text,
                serde_json::to_string(instance).unwrap(),
                keys.join(","),
            )
        }
        Dataset::Logic(instances) => {
            let instance = &instances[index];
            let text = format!(
                "{}\n\nState the final answer on its own line as: Answer: house <number>",
                instance.input
            );
            (
                format!("logic-{index:03}"),
                text,
                serde_json::to_string(instance).unwrap(),
                "answer".to_string(),
            )
        }
        Dataset::Codenames(instances) => {
            let instance = &instances[index];
            let mut words: Vec<&str> = instance
                .targets
                .iter()
                .chain(instance.distractors.iter())
                .map(|s| s.as_str())
                .collect();
            words.sort();
            let text = format!(
                "Cooperative word-guessing game. As the spymaster, the target words are: {}. Give a one-word hint linking them. Then, as the guesser, use the hint to pick the targets out of the full word list: {}.\nEnd with a line: Guesses: <comma-separated words>",
                instance.targets.join(", "),
                words.join(", "),
            );
            (
                format!("codenames-{index:03}"),
                text,
                serde_json::to_string(instance).unwrap(),
                "hint,guesses".to_string(),
            )
        }
    };
    let task = Task::new(run_id, text).map_err(usage)?;
    Ok(task
        .with_metadata("bench_kind", kind.to_string())
        .with_metadata("bench_instance", instance_json)
        .with_metadata("question_keys", question_keys))
}

/// Scores a final output text against an embedded instance, returning the
/// score and any scorer flags.
pub fn score_output(
    kind: DatasetKind,
    output: &str,
    instance_json: &str,
) -> Result<(f64, Vec<String>), CliError> {
    match kind {
        DatasetKind::Trivia => {
            let instance: TriviaInstance = serde_json::from_str(instance_json)
                .map_err(|e| usage(format!("embedded trivia instance: {e}")))?;
            Ok((bench::score_trivia(output, &instance), Vec::new()))
        }
        DatasetKind::Logic => {
            let instance: LogicPuzzleInstance = serde_json::from_str(instance_json)
                .map_err(|e| usage(format!("embedded logic instance: {e}")))?;
            let prediction = bench::extract_house_prediction(output);
            let scored = bench::score_logic(prediction, &instance);
            let flags = if scored.unparsed {
                vec!["unparsed".to_string()]
            } else {
                Vec::new()
            };
            Ok((scored.score, flags))
        }
        DatasetKind::Codenames => {
            let instance: CodenamesInstance = serde_json::from_str(instance_json)
                .map_err(|e| usage(format!("embedded codenames instance: {e}")))?;
            let guesses = bench::extract_guesses(output, &instance);
            Ok((bench::score_codenames(&guesses, &instance), Vec::new()))
        }
    }
}

/// Re-scoring closure used by attribution replay.
pub type OutputScorer = Box<dyn Fn(&str) -> f64 + Send + Sync>;

/// Builds a scorer closure for attribution replay from a trace's task
/// metadata.
pub fn scorer_from_metadata(
    metadata: &BTreeMap<String, String>,
) -> Result<OutputScorer, CliError> {
    let kind: DatasetKind = metadata
        .get("bench_kind")
        .ok_or_else(|| usage("trace task has no bench_kind metadata"))?
        .parse()
        .map_err(usage)?;
    let instance_json = metadata
        .get("bench_instance")
        .ok_or_else(|| usage("trace task has no bench_instance metadata"))?
        .clone();
    // Validate once up front so replay closures cannot fail late.
    score_output(kind, "", &instance_json)?;
    Ok(Box::new(move |output: &str| {
        score_output(kind, output, &instance_json)
            .map(|(score, _)| score)
            .unwrap_or(0.0)
    }))
}

/// `bench`: run every dataset instance through the orchestrator, score the
/// outputs, aggregate against an optional baseline, and write the report.
pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    let kind: DatasetKind = args.kind.parse().map_err(usage)?;
    if let Some(n) = args.n {
        if kind == DatasetKind::Trivia && !matches!(n, 5 | 10) {
            return Err(usage(format!("--n {n} is not a supported trivia size (5 or 10)")));
        }
    }
    let mut config = Config::load(args.config_path).map_err(usage)?;
    if args.resume {
        config.backend.cache = true;
    }
    let backend = config.build_backend().map_err(usage)?;
    let dataset = load_dataset(args.path, kind).map_err(usage)?;
    if dataset.is_empty() {
        return Err(usage(format!("dataset {} is empty", args.path.display())));
    }
    if let (Some(n), Dataset::Trivia(instances)) = (args.n, &dataset) {
        if let Some(bad) = instances.iter().position(|i| i.questions.len() != n) {
            return Err(usage(format!(
                "instance {bad} has {} questions, expected --n {n}",
                instances[bad].questions.len()
            )));
        }
    }

    let orchestrator = config.orchestrator(&backend).map_err(usage)?;

    let traces_dir = args.out_dir.join("traces");
    let mut rows: Vec<InstanceRow> = Vec::new();
    for index in 0..dataset.len() {
        let task = instance_task(kind, index, &dataset)?;
        let trace_path = traces_dir.join(format!("{}.jsonl", task.id));
        if args.resume {
            if let Some(text) = recorded_final_text(&trace_path) {
                let instance_json = task.metadata.get("bench_instance").unwrap();
                let (score, mut flags) = score_output(kind, &text, instance_json)?;
                flags.push("resumed".to_string());
                rows.push(InstanceRow {
                    run_id: task.id.clone(),
                    score,
                    flags,
                });
                continue;
            }
        }
        match orchestrator.run(&task, &task.id, Some(&trace_path)) {
            Ok(result) => {
                let instance_json = task.metadata.get("bench_instance").unwrap();
                let (score, flags) = score_output(kind, &result.text, instance_json)?;
                rows.push(InstanceRow {
                    run_id: task.id.clone(),
                    score,
                    flags,
                });
            }
            Err(e) => {
                // A failed instance scores 0 and is flagged; the bench keeps going.
                rows.push(InstanceRow {
                    run_id: task.id.clone(),
                    score: 0.0,
                    flags: vec!["run-failed".to_string(), e.to_string()],
                });
            }
        }
    }

    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let aggregate = bench::aggregate(&scores, args.baseline).map_err(usage)?;
    let report = BenchReport {
        dataset_kind: kind,
        dataset_path: args.path.display().to_string(),
        instances: dataset.len(),
        rows,
        aggregate,
    };

    let name = match args.name {
        Some(name) => name.to_string(),
        None => match &dataset {
            Dataset::Trivia(instances) => {
                format!("trivia{}", instances[0].questions.len())
            }
            _ => kind.to_string(),
        },
    };
    let reports_dir = args.out_dir.join("reports");
    std::fs::create_dir_all(&reports_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", reports_dir.display())))?;
    let report_path = reports_dir.join(format!("{name}.json"));
    let doc = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, doc)
        .map_err(|e| usage(format!("cannot write {}: {e}", report_path.display())))?;
    Ok(report)
}

/// Final text from a previously recorded run, if its trace completed.
fn recorded_final_text(trace_path: &Path) -> Option<String> {
    let trace = RunTrace::load(trace_path).ok()?;
    let event = trace.events_of_kind(crate::trace::EventKind::Final).next()?;
    event
        .payload
        .get("text")
        .and_then(|t| t.as_str())
        .map(|t| t.to_string())
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    run_id: String,
    score: f64,
}

/// Loads run scores from a bench report or a bare `[{run_id, score}]` list.
fn load_scores(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read scores {}: {e}", path.display())))?;
    if let Ok(report) = serde_json::from_str::<BenchReport>(&raw) {
        return Ok(report.rows.into_iter().map(|r| (r.run_id, r.score)).collect());
    }
    let rows: Vec<ScoreRow> = serde_json::from_str(&raw)
        .map_err(|e| usage(format!("scores file {}: {e}", path.display())))?;
    Ok(rows.into_iter().map(|r| (r.run_id, r.score)).collect())
}

pub struct ExplainArgs<'a> {
    pub trace_dir: &'a Path,
    pub scores_path: &'a Path,
    pub mode: &'a str,
    pub group: usize,
    pub permutations: u64,
    pub seed: u64,
    pub out_dir: &'a Path,
    pub config_path: Option<&'a Path>,
    pub name: &'a str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleAttribution {
    pub sample_id: String,
    pub active_features: usize,
    pub value_full: f64,
    pub value_empty: f64,
    pub efficiency_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainReport {
    pub mode: String,
    pub samples: Vec<SampleAttribution>,
    pub max_efficiency_residual: f64,
    pub csv_path: String,
}

/// `explain`: join traces with scores, attribute each sample's outcome to
/// its domain memberships, and emit the attribution table plus a report
/// with per-sample efficiency residuals.
pub fn cmd_explain(args: &ExplainArgs) -> Result<ExplainReport, CliError> {
    let settings = match args.config_path {
        Some(path) => Config::load(path).map_err(usage)?.engine_settings(),
        None => Default::default(),
    };

    let mut trace_paths: Vec<PathBuf> = std::fs::read_dir(args.trace_dir)
        .map_err(|e| usage(format!("cannot read trace dir {}: {e}", args.trace_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    trace_paths.sort();
    if trace_paths.is_empty() {
        return Err(usage(format!(
            "no .jsonl traces in {}",
            args.trace_dir.display()
        )));
    }
    let mut traces = Vec::with_capacity(trace_paths.len());
    for path in &trace_paths {
        traces.push(RunTrace::load(path).map_err(usage)?);
    }
    let scores = load_scores(args.scores_path)?;

    let samples = build_samples(&traces, &scores, args.group).map_err(usage)?;

    // One value function per run; composite samples average their members.
    let mut value_fns: BTreeMap<String, TraceValueFn> = BTreeMap::new();
    for trace in &traces {
        let plan_event = trace
            .events_of_kind(crate::trace::EventKind::Plan)
            .next()
            .ok_or_else(|| usage(format!("trace {} has no plan event", trace.run_id)))?;
        let task: Task = serde_json::from_value(plan_event.payload["task"].clone())
            .map_err(|e| usage(format!("trace {}: {e}", trace.run_id)))?;
        let scorer = scorer_from_metadata(&task.metadata)?;
        value_fns.insert(
            trace.run_id.clone(),
            TraceValueFn::from_trace(trace, settings.clone(), scorer),
        );
    }

    let mut all_rows: Vec<ShapRow> = Vec::new();
    let mut sample_reports: Vec<SampleAttribution> = Vec::new();
    for sample in &samples {
        let members: Vec<&TraceValueFn> = sample
            .sample_id
            .split('+')
            .filter_map(|id| value_fns.get(id))
            .collect();
        let value = |coalition: &[&str]| -> f64 {
            if members.is_empty() {
                return 0.0;
            }
            members.iter().map(|f| f.value(coalition)).sum::<f64>() / members.len() as f64
        };

        let rows = match args.mode {
            "exact" => shapley_exact(sample, value).map_err(|e| match e {
                ExplainError::TooManyFeatures { .. } => usage(format!(
                    "sample {}: {e}; re-run with --mode sampled",
                    sample.sample_id
                )),
                other => domain(other),
            })?,
            "sampled" => shapley_sampled(sample, value, args.permutations, args.seed)
                .map_err(domain)?,
            other => return Err(usage(format!("unknown mode {other:?} (exact or sampled)"))),
        };

        let active: Vec<&str> = sample.active_domains();
        let value_full = value(&active);
        let value_empty = value(&[]);
        let shap_sum: f64 = rows.iter().map(|r| r.shap_value).sum();
        let efficiency_residual = (shap_sum - (value_full - value_empty)).abs();
        sample_reports.push(SampleAttribution {
            sample_id: sample.sample_id.clone(),
            active_features: active.len(),
            value_full,
            value_empty,
            efficiency_residual,
        });
        all_rows.extend(rows);
    }

    let explain_dir = args.out_dir.join("explain");
    std::fs::create_dir_all(&explain_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", explain_dir.display())))?;
    let csv_path = explain_dir.join(format!("{}.csv", args.name));
    let mut csv = Vec::new();
    emit_beeswarm(&all_rows, &mut csv).map_err(domain)?;
    std::fs::write(&csv_path, csv)
        .map_err(|e| usage(format!("cannot write {}: {e}", csv_path.display())))?;

    let max_efficiency_residual = sample_reports
        .iter()
        .map(|s| s.efficiency_residual)
        .fold(0.0, f64::max);
    let report = ExplainReport {
        mode: args.mode.to_string(),
        samples: sample_reports,
        max_efficiency_residual,
        csv_path: csv_path.display().to_string(),
    };
    let report_path = explain_dir.join(format!("{}_report.json", args.name));
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&json!({
            "mode": report.mode,
            "samples": report.samples,
            "max_efficiency_residual": report.max_efficiency_residual,
        }))
        .expect("report serializes"),
    )
    .map_err(|e| usage(format!("cannot write {}: {e}", report_path.display())))?;
    Ok(report)
}

/// `validate`: structural check of an execution-graph document.
pub fn cmd_validate(plan_path: &Path) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(plan_path)
        .map_err(|e| usage(format!("cannot read plan {}: {e}", plan_path.display())))?;
    let graph: TaskExecutionGraph = serde_json::from_str(&raw)
        .map_err(|e| usage(format!("plan {}: {e}", plan_path.display())))?;
    let report = validate_teg(&graph);
    if report.is_ok() {
        Ok(())
    } else {
        let lines: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        Err(domain(lines.join("\n")))
    }
}
