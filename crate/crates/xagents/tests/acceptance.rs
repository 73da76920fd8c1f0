//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them on success).

mod common;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use xagents::bench::{
    aggregate, extract_guesses, extract_house_prediction, score_codenames, score_logic,
    score_trivia, CodenamesInstance, LogicPuzzleInstance, TriviaInstance, TriviaQuestion,
};
use xagents::cli::{self, BenchArgs, ExplainArgs};
use xagents::config::Config;
use xagents::engine::{resolve_conflicts, trust_degrees, vote_claims, ClaimCluster};
use xagents::explain::{build_samples, shapley_exact, shapley_sampled, AttributionSample};
use xagents::graph::{topological_levels, validate_teg, Task};
use xagents::trace::{EventKind, RunTrace};

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn pass(name: &str) {
    println!("ACCEPTANCE {name}: PASS");
}

/// Published comparison tables (scores and baseline-relative deltas, all
/// rounded to one decimal as printed): trivia story writing at N=5 and
/// N=10, house-assignment puzzles, and the cooperative word game, each
/// against standard prompting.
const REFERENCE_CELLS: &[(&str, &str, f64, f64, f64)] = &[
    ("trivia-n5", "standard", 74.6, 74.6, 0.0),
    ("trivia-n5", "cot", 67.1, 74.6, -10.0),
    ("trivia-n5", "self-refine", 73.9, 74.6, -0.9),
    ("trivia-n5", "spp", 79.9, 74.6, 7.1),
    ("trivia-n5", "autoagents", 82.0, 74.6, 9.9),
    ("trivia-n5", "xagents", 84.4, 74.6, 13.1),
    ("trivia-n10", "standard", 77.0, 77.0, 0.0),
    ("trivia-n10", "cot", 68.5, 77.0, -11.1),
    ("trivia-n10", "self-refine", 76.9, 77.0, -0.1),
    ("trivia-n10", "spp", 84.7, 77.0, 10.0),
    ("trivia-n10", "autoagents", 85.3, 77.0, 10.8),
    ("trivia-n10", "xagents", 88.1, 77.0, 14.4),
    ("logic", "standard", 57.7, 57.7, 0.0),
    ("logic", "cot", 65.8, 57.7, 14.0),
    ("logic", "self-refine", 60.0, 57.7, 4.0),
    ("logic", "spp", 68.3, 57.7, 18.4),
    ("logic", "autoagents", 71.8, 57.7, 24.4),
    ("logic", "xagents", 75.0, 57.7, 30.0),
    ("codenames", "standard", 75.4, 75.4, 0.0),
    ("codenames", "cot", 72.7, 75.4, -3.6),
    ("codenames", "self-refine", 75.3, 75.4, -0.1),
    ("codenames", "spp", 79.0, 75.4, 4.8),
    ("codenames", "autoagents", 81.4, 75.4, 7.9),
    ("codenames", "xagents", 83.5, 75.4, 10.7),
];

#[test]
fn delta_reproduction_reference_tables() {
    let started = Instant::now();
    let mut failures = Vec::new();
    for (table, method, score, standard, printed_delta) in REFERENCE_CELLS {
        let report = aggregate(&[*score / 100.0], Some(*standard)).unwrap();
        assert_eq!(report.mean_score_pct, *score, "{table}/{method} mean");
        let delta = report.delta_pct.unwrap();
        let unrounded = (score - standard) / standard * 100.0;
        let deviation = (delta - printed_delta).abs();
        let status = if deviation <= 0.05 + 1e-9 { "ok " } else { "BAD" };
        println!(
            "  {status} {table:11} {method:11} computed {delta:+6.1} (unrounded {unrounded:+8.4}) printed {printed_delta:+6.1}"
        );
        if deviation > 0.05 + 1e-9 {
            failures.push(format!(
                "{table}/{method}: {score} vs {standard} gives {unrounded:+.4}%, rounds to {delta:+.1}, printed {printed_delta:+.1} (deviation {:.4} pp)",
                (unrounded - printed_delta).abs()
            ));
        }
    }
    assert!(started.elapsed().as_secs() < 1, "runtime budget exceeded");
    if failures.is_empty() {
        pass("delta-reproduction");
    } else {
        println!("ACCEPTANCE delta-reproduction: FAIL ({} of 24 cells)", failures.len());
        panic!(
            "published delta cells not reproducible from their printed score columns at ±0.05 pp \
             (the published delta column was evidently computed from unrounded scores; every \
             deviation below is within the ±0.19 pp that score-column rounding alone can induce):\n  {}",
            failures.join("\n  ")
        );
    }
}

#[test]
fn scorer_exactness_on_crafted_cases() {
    let datasets = repo_path("datasets/fixtures");
    let trivia5: Vec<TriviaInstance> = serde_json::from_str(
        &std::fs::read_to_string(datasets.join("trivia_n5.json")).unwrap(),
    )
    .unwrap();
    let trivia10: Vec<TriviaInstance> = serde_json::from_str(
        &std::fs::read_to_string(datasets.join("trivia_n10.json")).unwrap(),
    )
    .unwrap();
    let greek = &trivia5[0];
    let cinema = &trivia5[1];
    let inventions = &trivia10[0];
    let animals = &trivia10[1];

    let mut cases = 0usize;
    let mut check = |label: &str, got: f64, want: f64| {
        assert_eq!(got, want, "case {label}");
        cases += 1;
    };

    // Trivia N=5.
    check(
        "greek all five with aliases",
        score_trivia(
            "Poseidon met Pegasus while Icarus fell; Heracles cheered and King Midas paid.",
            greek,
        ),
        1.0,
    );
    check(
        "greek four of five",
        score_trivia("Poseidon, Pegasus, Icarus and Hercules met at the shore.", greek),
        4.0 / 5.0,
    );
    check(
        "greek case and punctuation variants",
        score_trivia("POSEIDON! pegasus... icarus?? HERCULES; king midas.", greek),
        1.0,
    );
    check("greek empty output", score_trivia("", greek), 0.0);
    check(
        "greek repeats count once",
        score_trivia("Poseidon Poseidon Poseidon", greek),
        1.0 / 5.0,
    );
    check(
        "cinema surname alias",
        score_trivia("It was directed by hitchcock, nothing else to add.", cinema),
        1.0 / 5.0,
    );
    check(
        "cinema bogart only",
        score_trivia("Bogart.", cinema),
        1.0 / 5.0,
    );

    // Trivia N=10.
    check(
        "inventions six of ten",
        score_trivia(
            "Alexander Graham Bell, Jonas Salk, Gutenberg, Edison, the Wright brothers and Alfred Nobel all appear.",
            inventions,
        ),
        6.0 / 10.0,
    );
    check(
        "inventions short aliases",
        score_trivia("Bell, Salk and Morse share a page.", inventions),
        3.0 / 10.0,
    );
    check(
        "animals shouting",
        score_trivia("THE BLUE WHALE surfaced; a platypus watched!", animals),
        2.0 / 10.0,
    );
    check(
        "animals whitespace collapse",
        score_trivia("the   blue    whale", animals),
        1.0 / 10.0,
    );
    let twain = TriviaInstance {
        topic: "authors".into(),
        questions: vec![TriviaQuestion {
            question: "Who wrote under a river pen name?".into(),
            answers: vec!["Mark Twain".into(), "Samuel Clemens".into()],
        }],
    };
    check(
        "alias list with trailing period",
        score_trivia("it was samuel clemens.", &twain),
        1.0,
    );

    // Logic puzzles.
    let gold3 = LogicPuzzleInstance { input: "p".into(), target: 3 };
    let gold4 = LogicPuzzleInstance { input: "p".into(), target: 4 };
    let gold5 = LogicPuzzleInstance { input: "p".into(), target: 5 };
    check("logic exact match", score_logic(Some(3), &gold3).score, 1.0);
    check("logic mismatch", score_logic(Some(2), &gold3).score, 0.0);
    check(
        "logic sentence answer",
        score_logic(extract_house_prediction("The answer is house 4."), &gold4).score,
        1.0,
    );
    let unparsed = score_logic(extract_house_prediction("no digits at all"), &gold3);
    assert!(unparsed.unparsed, "unparsed flag");
    check("logic unparsed scores zero", unparsed.score, 0.0);
    check(
        "logic final line wins",
        score_logic(
            extract_house_prediction("house 1 then house 2 maybe\nAnswer: house 5"),
            &gold5,
        )
        .score,
        1.0,
    );

    // Codenames.
    let abc = CodenamesInstance {
        targets: vec!["apple".into(), "bear".into(), "cloud".into()],
        distractors: vec!["desk".into(), "drum".into()],
    };
    let guesses = |words: &[&str]| -> Vec<String> { words.iter().map(|w| w.to_string()).collect() };
    check(
        "codenames two of three",
        score_codenames(&guesses(&["apple", "bear", "desk"]), &abc),
        2.0 / 3.0,
    );
    check(
        "codenames all targets",
        score_codenames(&guesses(&["apple", "bear", "cloud"]), &abc),
        1.0,
    );
    check(
        "codenames disjoint",
        score_codenames(&guesses(&["desk", "drum"]), &abc),
        0.0,
    );
    check(
        "codenames case variants",
        score_codenames(&guesses(&["APPLE", "Bear"]), &abc),
        2.0 / 3.0,
    );
    check(
        "codenames duplicates count once",
        score_codenames(&guesses(&["apple", "apple"]), &abc),
        1.0 / 3.0,
    );
    check(
        "codenames guess extraction after marker",
        score_codenames(
            &extract_guesses("I pondered apple and cloud.\nGuesses: apple, bear", &abc),
            &abc,
        ),
        2.0 / 3.0,
    );

    assert!(cases >= 20, "only {cases} crafted cases");
    println!("  {cases} crafted cases matched exactly");
    pass("scorer-exactness");
}

#[test]
fn conflict_fixture_reproduces_the_case_study() {
    let started = Instant::now();
    let config = Config::load(repo_path("fixtures/configs/conflict.toml")).unwrap();
    let backend = config.build_backend().unwrap();
    let orchestrator = config.orchestrator(&backend).unwrap();
    let task: Task = serde_json::from_str(
        &std::fs::read_to_string(repo_path("fixtures/tasks/movie_conflict.json")).unwrap(),
    )
    .unwrap();
    let result = orchestrator.run(&task, "movie-conflict", None).unwrap();

    let trust_event = result.trace.events_of_kind(EventKind::Trust).next().unwrap();
    let clusters: Vec<ClaimCluster> =
        serde_json::from_value(trust_event.payload["clusters"].clone()).unwrap();
    let winner = clusters.iter().find(|c| c.votes == 2).expect("two-vote cluster");
    let loser = clusters.iter().find(|c| c.votes == 1).expect("one-vote cluster");
    assert_eq!(winner.value, "guess whos coming to dinner");
    assert!((winner.trust.unwrap() - 1.6 / 2.2).abs() <= 1e-9);
    assert!((loser.trust.unwrap() - 0.6 / 2.2).abs() <= 1e-9);

    let resolution = result.trace.events_of_kind(EventKind::Resolution).next().unwrap();
    let retained: Vec<ClaimCluster> =
        serde_json::from_value(resolution.payload["retained"].clone()).unwrap();
    assert_eq!(retained.len(), 1);
    assert_eq!(retained[0].value, "guess whos coming to dinner");
    assert!(result.text.contains("Guess Who's Coming to Dinner"));

    assert!(started.elapsed().as_secs() < 5, "runtime budget exceeded");
    println!(
        "  votes 2 vs 1, trusts {:.4} / {:.4}, fused text names the retained film",
        winner.trust.unwrap(),
        loser.trust.unwrap()
    );
    pass("conflict-fixture");
}

#[test]
fn fusion_oracle_equivalence_1000_instances() {
    let mut rng = StdRng::seed_from_u64(0xFACE);
    for i in 0..1000 {
        let responses = common::random_rule_responses(&mut rng, 6, 6);
        let (clusters, _) = trust_degrees(vote_claims(&responses));

        let keys: BTreeSet<&str> = clusters.iter().map(|c| c.key.as_str()).collect();
        for key in &keys {
            let total: f64 = clusters
                .iter()
                .filter(|c| c.key == *key)
                .map(|c| c.trust.unwrap())
                .sum();
            assert!(
                (total - 1.0).abs() <= 1e-12,
                "instance {i} key {key}: trust sum {total}"
            );
        }

        let oracle = common::oracle_retained(&clusters);
        let resolution = resolve_conflicts(clusters, 0.5);
        assert_eq!(resolution.retained.len(), oracle.len(), "instance {i}");
        for cluster in &resolution.retained {
            assert_eq!(
                oracle[&cluster.key], cluster.value,
                "instance {i} key {}",
                cluster.key
            );
        }
    }
    println!("  1000 randomized instances matched the brute-force argmax; trust sums within 1e-12");
    pass("fusion-oracle-equivalence");
}

#[test]
fn shapley_axioms_and_sampling() {
    let mut rng = StdRng::seed_from_u64(0xBEEF);

    // Efficiency on 100 random tabulated value functions with K <= 6.
    for trial in 0..100 {
        let k = rng.gen_range(1..=6usize);
        let table = common::random_value_table(&mut rng, k);
        let sample = grid_sample(k);
        let players: Vec<String> = sample.features.keys().cloned().collect();
        let value = table_value_fn(&players, &table);
        let rows = shapley_exact(&sample, &value).unwrap();
        let total: f64 = rows.iter().map(|r| r.shap_value).sum();
        let swing = table[(1 << k) - 1] - table[0];
        assert!(
            (total - swing).abs() <= 1e-9,
            "trial {trial}: efficiency residual {}",
            (total - swing).abs()
        );
    }

    // Dummy: a feature whose masking never changes the value gets exactly 0.
    for _ in 0..20 {
        let k = rng.gen_range(2..=6usize);
        let base = common::random_value_table(&mut rng, k - 1);
        let dummy_index = rng.gen_range(0..k);
        let sample = grid_sample(k);
        let players: Vec<String> = sample.features.keys().cloned().collect();
        let value = |coalition: &[&str]| {
            let mut mask = 0usize;
            let mut bit = 0;
            for (i, p) in players.iter().enumerate() {
                if i == dummy_index {
                    continue;
                }
                if coalition.contains(&p.as_str()) {
                    mask |= 1 << bit;
                }
                bit += 1;
            }
            base[mask]
        };
        let rows = shapley_exact(&sample, value).unwrap();
        let dummy_row = rows
            .iter()
            .find(|r| r.domain == players[dummy_index])
            .unwrap();
        assert_eq!(dummy_row.shap_value, 0.0, "dummy feature must get exactly 0");
    }

    // Symmetry: interchangeable features receive equal attribution.
    for _ in 0..20 {
        let k = rng.gen_range(2..=6usize);
        let rest = common::random_value_table(&mut rng, k - 2);
        let pair_bonus: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.5)).collect();
        let sample = grid_sample(k);
        let players: Vec<String> = sample.features.keys().cloned().collect();
        // Symmetric in players 0 and 1: value depends on how many of the
        // pair are present, never which.
        let value = |coalition: &[&str]| {
            let pair_count = [0usize, 1]
                .iter()
                .filter(|i| coalition.contains(&players[**i].as_str()))
                .count();
            let mut mask = 0usize;
            for (bit, p) in players.iter().enumerate().skip(2) {
                if coalition.contains(&p.as_str()) {
                    mask |= 1 << (bit - 2);
                }
            }
            rest[mask] + pair_bonus[pair_count]
        };
        let rows = shapley_exact(&sample, value).unwrap();
        let phi0 = rows.iter().find(|r| r.domain == players[0]).unwrap().shap_value;
        let phi1 = rows.iter().find(|r| r.domain == players[1]).unwrap().shap_value;
        assert!(
            (phi0 - phi1).abs() <= 1e-9,
            "symmetric features diverged: {phi0} vs {phi1}"
        );
    }

    // K=1 identity: the lone feature carries the whole swing.
    let sample = grid_sample(1);
    let rows = shapley_exact(&sample, |c: &[&str]| if c.is_empty() { 0.25 } else { 0.85 }).unwrap();
    assert!((rows[0].shap_value - 0.6).abs() <= 1e-12);

    // Exhaustive permutation budget reproduces the exact values.
    let sample = grid_sample(3);
    let table = common::random_value_table(&mut rng, 3);
    let players: Vec<String> = sample.features.keys().cloned().collect();
    let value = table_value_fn(&players, &table);
    let exact = shapley_exact(&sample, &value).unwrap();
    let sampled = shapley_sampled(&sample, &value, 6, 123).unwrap();
    for (e, s) in exact.iter().zip(&sampled) {
        assert!((e.shap_value - s.shap_value).abs() <= 1e-12);
        assert_eq!(s.std_error, Some(0.0));
    }

    // Sampling at a fixed seed stays within three standard errors of exact.
    let sample = grid_sample(6);
    let table = common::random_value_table(&mut rng, 6);
    let players: Vec<String> = sample.features.keys().cloned().collect();
    let value = table_value_fn(&players, &table);
    let exact = shapley_exact(&sample, &value).unwrap();
    let sampled = shapley_sampled(&sample, &value, 2000, 20260808).unwrap();
    for (e, s) in exact.iter().zip(&sampled) {
        let se = s.std_error.unwrap();
        assert!(
            (e.shap_value - s.shap_value).abs() <= 3.0 * se + 1e-12,
            "{}: exact {} sampled {} se {}",
            e.domain,
            e.shap_value,
            s.shap_value,
            se
        );
    }

    println!("  efficiency<=1e-9 on 100 tables; dummy exact; symmetry<=1e-9; sampling within 3 SE");
    pass("shapley-correctness");
}

fn grid_sample(k: usize) -> AttributionSample {
    let features: BTreeMap<String, f64> = (0..k)
        .map(|i| {
            let grade = [1.0, 0.8, 0.6, 0.4, 0.2][i % 5];
            (format!("d{i}"), grade)
        })
        .collect();
    AttributionSample::new("sample", features, 0.5).unwrap()
}

fn table_value_fn<'a>(players: &'a [String], table: &'a [f64]) -> impl Fn(&[&str]) -> f64 + 'a {
    move |coalition: &[&str]| {
        let mask = players
            .iter()
            .enumerate()
            .filter(|(_, p)| coalition.contains(&p.as_str()))
            .fold(0usize, |m, (i, _)| m | (1 << i));
        table[mask]
    }
}

#[test]
fn membership_attribution_signs_on_fixture() {
    let out = tempfile::tempdir().unwrap();
    let report = cli::cmd_bench(&BenchArgs {
        kind: "trivia",
        path: &repo_path("datasets/fixtures/trivia_n5.json"),
        n: Some(5),
        baseline: None,
        out_dir: out.path(),
        config_path: &repo_path("fixtures/configs/trivia5.toml"),
        name: None,
        resume: false,
    })
    .unwrap();

    let mut traces = Vec::new();
    for row in &report.rows {
        traces.push(
            RunTrace::load(out.path().join(format!("traces/{}.jsonl", row.run_id))).unwrap(),
        );
    }
    let scores: Vec<(String, f64)> = report
        .rows
        .iter()
        .map(|r| (r.run_id.clone(), r.score))
        .collect();
    let mut samples = build_samples(&traces, &scores, 1).unwrap();

    // Materialize the implicit zero-membership features so the sign
    // property is visible in the rows.
    let all_domains: BTreeSet<String> = samples
        .iter()
        .flat_map(|s| s.features.keys().cloned())
        .collect();
    for sample in &mut samples {
        for domain in &all_domains {
            sample.features.entry(domain.clone()).or_insert(0.0);
        }
    }

    let settings = Config::load(repo_path("fixtures/configs/trivia5.toml"))
        .unwrap()
        .engine_settings();
    let mut positive_rows = 0usize;
    let mut zero_rows = 0usize;
    for (sample, trace) in samples.iter().zip(&traces) {
        let plan_event = trace.events_of_kind(EventKind::Plan).next().unwrap();
        let task: Task = serde_json::from_value(plan_event.payload["task"].clone()).unwrap();
        let scorer = cli::scorer_from_metadata(&task.metadata).unwrap();
        let value_fn =
            xagents::explain::TraceValueFn::from_trace(trace, settings.clone(), scorer);
        let rows = shapley_exact(sample, |c: &[&str]| value_fn.value(c)).unwrap();
        for row in rows {
            if row.feature_value == 0.0 {
                assert_eq!(row.shap_value, 0.0, "{}: zero-membership feature", row.domain);
                zero_rows += 1;
            } else {
                assert!(
                    row.shap_value >= 0.0,
                    "{}/{}: negative attribution {}",
                    sample.sample_id,
                    row.domain,
                    row.shap_value
                );
                positive_rows += 1;
            }
        }
    }
    assert!(positive_rows >= 10 && zero_rows >= 10);
    println!(
        "  {zero_rows} zero-membership rows attributed exactly 0; {positive_rows} graded rows all >= 0"
    );
    pass("membership-attribution-signs");
}

#[test]
fn teg_property_suite_1000_graphs() {
    let mut rng = StdRng::seed_from_u64(0x7E6);
    for i in 0..1000 {
        let graph = common::random_valid_teg(&mut rng);
        let report = validate_teg(&graph);
        assert!(report.is_ok(), "graph {i}: {:?}", report.violations);

        let levels = topological_levels(&graph).unwrap();
        let level_of = |id: &str| levels.iter().position(|l| l.iter().any(|n| n == id)).unwrap();
        for (from, to) in graph.edges() {
            assert!(level_of(from) < level_of(to), "graph {i} edge {from}->{to}");
        }
        let flat: Vec<&String> = levels.iter().flatten().collect();
        assert_eq!(flat.len(), graph.nodes().len(), "graph {i}");

        let mutated = common::mutate_with_back_edge(&graph, &mut rng);
        assert!(!validate_teg(&mutated).is_ok(), "graph {i} mutation accepted");
    }
    println!("  1000 random graphs validated, leveled, and mutation-flipped");
    pass("teg-property-suite");
}

fn read_dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return out;
    }
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            );
        }
    }
    out
}

#[test]
fn deterministic_end_to_end_bench() {
    let mut snapshots = Vec::new();
    for _ in 0..3 {
        let out = tempfile::tempdir().unwrap();
        cli::cmd_bench(&BenchArgs {
            kind: "trivia",
            path: &repo_path("datasets/fixtures/trivia_n5.json"),
            n: Some(5),
            baseline: Some(74.6),
            out_dir: out.path(),
            config_path: &repo_path("fixtures/configs/trivia5.toml"),
            name: None,
            resume: false,
        })
        .unwrap();
        cli::cmd_explain(&ExplainArgs {
            trace_dir: &out.path().join("traces"),
            scores_path: &out.path().join("reports/trivia5.json"),
            mode: "exact",
            group: 1,
            permutations: 2000,
            seed: 17,
            out_dir: out.path(),
            config_path: Some(&repo_path("fixtures/configs/trivia5.toml")),
            name: "attribution",
        })
        .unwrap();
        snapshots.push((
            read_dir_files(&out.path().join("traces")),
            read_dir_files(&out.path().join("reports")),
            read_dir_files(&out.path().join("explain")),
        ));
    }
    assert_eq!(snapshots[0], snapshots[1], "first and second runs differ");
    assert_eq!(snapshots[1], snapshots[2], "second and third runs differ");

    // Run and replay agree byte for byte on the scripted backend.
    let config = Config::load(repo_path("fixtures/configs/trivia5.toml")).unwrap();
    let backend = config.build_backend().unwrap();
    let orchestrator = config.orchestrator(&backend).unwrap();
    let dataset =
        xagents::bench::load_dataset(repo_path("datasets/fixtures/trivia_n5.json"), "trivia".parse().unwrap())
            .unwrap();
    let task = cli::instance_task(xagents::bench::DatasetKind::Trivia, 0, &dataset).unwrap();
    let run = orchestrator.run(&task, &task.id, None).unwrap();
    let replayed = orchestrator.replay(&run.trace, None).unwrap();
    assert_eq!(run.trace.to_jsonl(), replayed.trace.to_jsonl());
    assert_eq!(run.text, replayed.text);

    println!("  3 consecutive bench+explain runs byte-identical; run/replay agree byte-for-byte");
    pass("deterministic-end-to-end");
}

/// Optional live smoke test: runs only when a key and opt-in flag are set.
#[test]
fn live_smoke_single_instance() {
    if std::env::var("XAGENTS_LIVE_SMOKE").ok().as_deref() != Some("1") {
        println!("ACCEPTANCE live-smoke: SKIPPED (set XAGENTS_LIVE_SMOKE=1 with a configured key)");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("live.toml");
    let base_url = std::env::var("XAGENTS_BASE_URL")
        .unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
    let model = std::env::var("XAGENTS_MODEL").unwrap_or_else(|_| "gpt-4".to_string());
    std::fs::write(
        &config_path,
        format!("[backend]\nkind = \"http\"\nbase_url = \"{base_url}\"\nmodel_id = \"{model}\"\n"),
    )
    .unwrap();

    // One instance end to end: valid trace, score in range, no numeric target.
    let full: Vec<TriviaInstance> = serde_json::from_str(
        &std::fs::read_to_string(repo_path("datasets/fixtures/trivia_n5.json")).unwrap(),
    )
    .unwrap();
    let single_path = dir.path().join("single.json");
    std::fs::write(&single_path, serde_json::to_string(&full[..1]).unwrap()).unwrap();

    let report = cli::cmd_bench(&BenchArgs {
        kind: "trivia",
        path: &single_path,
        n: Some(5),
        baseline: None,
        out_dir: dir.path(),
        config_path: &config_path,
        name: Some("live"),
        resume: false,
    });
    let report = report.expect("live smoke run failed");
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].flags.iter().all(|f| f != "run-failed"));
    let score = report.rows[0].score;
    assert!((0.0..=1.0).contains(&score));
    let trace_path = dir.path().join("traces/trivia5-000.jsonl");
    let trace = RunTrace::load(&trace_path).expect("live trace loads");
    assert!(trace.events_of_kind(EventKind::Final).count() == 1);
    pass("live-smoke");
}
