//! End-to-end tests of the `coldrank` binary: exit codes, summary lines,
//! artifact formats, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coldrank::evaluation::synthetic_show_time;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_coldrank")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(binary())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch coldrank")
}

fn run_ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let output = run_in(dir, args);
    assert!(
        output.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8(output.stdout).unwrap();
    let line = stdout.lines().last().expect("no summary line");
    serde_json::from_str(line).expect("summary line is not JSON")
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }
}

fn synth_args(seed: u64, out: &str) -> Vec<String> {
    [
        "synth",
        "--users",
        "400",
        "--shows",
        "120",
        "--communities",
        "3",
        "--feature-noise",
        "0.1",
        "--spend",
        "uniform:0.50..3.00",
        "--seed",
        &seed.to_string(),
        "--out-dir",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn cutoff() -> String {
    (synthetic_show_time(96) - 1).to_string()
}

#[test]
fn synth_is_deterministic_across_invocations() {
    let ws = Workspace::new();
    let args = synth_args(7, "a");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&ws.root, &args);
    let args_b = synth_args(7, "b");
    let args_b: Vec<&str> = args_b.iter().map(String::as_str).collect();
    run_ok(&ws.root, &args_b);

    for name in ["transactions.csv", "shows.jsonl", "communities.json"] {
        let first = std::fs::read(ws.root.join("a").join(name)).unwrap();
        let second = std::fs::read(ws.root.join("b").join(name)).unwrap();
        assert!(!first.is_empty());
        assert_eq!(first, second, "{name} differs across seeded runs");
    }
}

#[test]
fn full_pipeline_produces_consistent_artifacts() {
    let ws = Workspace::new();
    let args = synth_args(21, "data");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let summary = run_ok(&ws.root, &args);
    assert_eq!(summary["command"], "synth");

    let summary = run_ok(
        &ws.root,
        &[
            "ingest",
            "--transactions",
            "data/transactions.csv",
            "--shows",
            "data/shows.jsonl",
            "--out",
            "index.cache",
        ],
    );
    assert_eq!(summary["malformed"], 0);
    assert_eq!(summary["users"], 400);

    let summary = run_ok(
        &ws.root,
        &[
            "build-graph",
            "--index",
            "index.cache",
            "--kind",
            "jaccard",
            "--out",
            "graph.tsv",
        ],
    );
    assert_eq!(summary["kind"], "jaccard");
    let graph_text = std::fs::read_to_string(ws.root.join("graph.tsv")).unwrap();
    assert!(graph_text.starts_with("# coldrank-graph v1 kind=jaccard"));

    run_ok(
        &ws.root,
        &[
            "train-model",
            "--index",
            "index.cache",
            "--shows",
            "data/shows.jsonl",
            "--graph",
            "graph.tsv",
            "--out",
            "model.json",
        ],
    );
    let model_text = std::fs::read_to_string(ws.root.join("model.json")).unwrap();
    assert!(model_text.contains("coldrank-model v1"));

    std::fs::write(
        ws.root.join("new.json"),
        "{\"show_id\":\"brandnew\",\"city\":\"city00\",\"types\":[\"genre00\"]}\n",
    )
    .unwrap();
    let summary = run_ok(
        &ws.root,
        &[
            "predict",
            "--index",
            "index.cache",
            "--shows",
            "data/shows.jsonl",
            "--show",
            "new.json",
            "--graph",
            "graph.tsv",
            "--model",
            "model.json",
            "--l",
            "2",
            "--top",
            "audience.csv",
        ],
    );
    assert_eq!(summary["users_ranked"], 400);
    let audience = std::fs::read_to_string(ws.root.join("audience.csv")).unwrap();
    let mut lines = audience.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("# coldrank-ranking v1 kind=jaccard l=2"));
    assert_eq!(lines.next().unwrap(), "rank,user_id,score");
    assert_eq!(audience.lines().count(), 402);

    let summary = run_ok(
        &ws.root,
        &[
            "evaluate",
            "--transactions",
            "data/transactions.csv",
            "--shows",
            "data/shows.jsonl",
            "--cutoff",
            &cutoff(),
            "--test-sample",
            "6",
            "--kind",
            "jaccard",
            "--l",
            "2",
            "--out",
            "report.json",
        ],
    );
    assert_eq!(summary["test_shows"], 6);
    assert_eq!(summary["failures"], 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["format"], "coldrank-report v1");
    assert_eq!(report["config"]["kind"], "jaccard");
    assert_eq!(report["per_show"].as_array().unwrap().len(), 6);

    let summary = run_ok(
        &ws.root,
        &[
            "grid-search",
            "--transactions",
            "data/transactions.csv",
            "--shows",
            "data/shows.jsonl",
            "--cutoff",
            &cutoff(),
            "--test-sample",
            "6",
            "--l",
            "1..2",
            "--kinds",
            "jaccard,mdw-asym",
            "--out-matrix",
            "grid.tsv",
            "--out-report",
            "grid.json",
        ],
    );
    assert_eq!(summary["cells"], 4);
    let grid = std::fs::read_to_string(ws.root.join("grid.tsv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert!(lines[0].starts_with("# coldrank-grid v1"));
    assert_eq!(lines[1], "l\tjaccard\tmdw-asym");
    assert_eq!(lines.len(), 4);
}

#[test]
fn grid_search_covers_the_full_matrix_shape() {
    let ws = Workspace::new();
    let args = synth_args(3, "data");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&ws.root, &args);
    let summary = run_ok(
        &ws.root,
        &[
            "grid-search",
            "--transactions",
            "data/transactions.csv",
            "--shows",
            "data/shows.jsonl",
            "--cutoff",
            &cutoff(),
            "--test-sample",
            "4",
            "--l",
            "1..5",
            "--kinds",
            "all",
            "--out-matrix",
            "grid.tsv",
        ],
    );
    assert_eq!(summary["cells"], 35);
    let grid = std::fs::read_to_string(ws.root.join("grid.tsv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(
        lines[1],
        "l\tamazon\tbp\tjaccard\tjaccard-asym\tmdw\tmdw-asym\tnbi"
    );
    assert_eq!(lines.len(), 7, "comment + header + five rows");
    for row in &lines[2..] {
        assert_eq!(row.split('\t').count(), 8);
    }
}

#[test]
fn reruns_write_byte_identical_artifacts() {
    let ws = Workspace::new();
    let args = synth_args(5, "data");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&ws.root, &args);
    // All shared settings come from one config file; only output paths
    // differ between the two rounds.
    std::fs::write(
        ws.root.join("run.toml"),
        format!(
            "transactions = \"data/transactions.csv\"\n\
             shows = \"data/shows.jsonl\"\n\
             kind = \"nbi\"\n\
             l = 3\n\
             cutoff = {}\n\
             negative_seed = 17\n\
             shuffle_seed = 42\n",
            synthetic_show_time(96) - 1
        ),
    )
    .unwrap();
    for round in ["x", "y"] {
        std::fs::create_dir(ws.root.join(round)).unwrap();
        run_ok(
            &ws.root,
            &[
                "--config",
                "run.toml",
                "ingest",
                "--out",
                &format!("{round}/index.cache"),
            ],
        );
        run_ok(
            &ws.root,
            &[
                "--config",
                "run.toml",
                "build-graph",
                "--index",
                &format!("{round}/index.cache"),
                "--out",
                &format!("{round}/graph.tsv"),
            ],
        );
        run_ok(
            &ws.root,
            &[
                "--config",
                "run.toml",
                "train-model",
                "--index",
                &format!("{round}/index.cache"),
                "--graph",
                &format!("{round}/graph.tsv"),
                "--out",
                &format!("{round}/model.json"),
            ],
        );
        run_ok(
            &ws.root,
            &[
                "--config",
                "run.toml",
                "evaluate",
                "--out",
                &format!("{round}/report.json"),
            ],
        );
    }
    for name in ["index.cache", "graph.tsv", "model.json", "report.json"] {
        let first = std::fs::read(ws.root.join("x").join(name)).unwrap();
        let second = std::fs::read(ws.root.join("y").join(name)).unwrap();
        assert_eq!(first, second, "{name} differs across reruns");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let ws = Workspace::new();
    let args = synth_args(9, "data");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&ws.root, &args);
    std::fs::write(
        ws.root.join("run.toml"),
        "transactions = \"data/transactions.csv\"\nshows = \"data/shows.jsonl\"\nkind = \"mdw\"\nl = 2\n",
    )
    .unwrap();

    let summary = run_ok(
        &ws.root,
        &["--config", "run.toml", "build-graph", "--out", "graph.tsv"],
    );
    assert_eq!(summary["kind"], "mdw", "kind comes from the config file");

    let summary = run_ok(
        &ws.root,
        &[
            "--config",
            "run.toml",
            "build-graph",
            "--kind",
            "jaccard",
            "--out",
            "graph2.tsv",
        ],
    );
    assert_eq!(summary["kind"], "jaccard", "flag overrides the config file");
}

#[test]
fn usage_and_io_errors_use_distinct_exit_codes() {
    let ws = Workspace::new();
    let output = run_in(&ws.root, &["build-graph", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2), "usage error");

    let output = run_in(
        &ws.root,
        &[
            "build-graph",
            "--transactions",
            "missing.csv",
            "--kind",
            "jaccard",
            "--out",
            "graph.tsv",
        ],
    );
    assert_eq!(output.status.code(), Some(1), "missing input file");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "{stderr}");
    assert!(stderr.contains("catalog"), "stage attribution: {stderr}");

    // A cutoff past the data leaves an empty test set.
    let args = synth_args(2, "data");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&ws.root, &args);
    let output = run_in(
        &ws.root,
        &[
            "evaluate",
            "--transactions",
            "data/transactions.csv",
            "--shows",
            "data/shows.jsonl",
            "--cutoff",
            "99999999999",
            "--kind",
            "jaccard",
            "--l",
            "1",
            "--out",
            "report.json",
        ],
    );
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("empty test set"), "{stderr}");
}

#[test]
fn version_reports_artifact_format_tags() {
    let ws = Workspace::new();
    let output = run_in(&ws.root, &["--version"]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    for tag in [
        "coldrank-index v1",
        "coldrank-graph v1",
        "coldrank-model v1",
        "coldrank-ranking v1",
        "coldrank-report v1",
        "coldrank-grid v1",
    ] {
        assert!(stdout.contains(tag), "missing {tag} in {stdout}");
    }
}
