use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use backtrack_core::agent::{replay, Episode};
use backtrack_core::dataset::{build_judgment, build_reflection, DatasetConfig};
use backtrack_core::environment::{save_chain, save_graph, Environment, ExecutionMode, GraphDataset, GraphMeta};
use backtrack_core::fixtures::{metric_example, starbucks, synthetic_suite};
use backtrack_core::matching::MatchConfig;
use backtrack_core::metrics::{evaluate, pair, sample_subset};
use backtrack_core::policy::mock::{OracleGenerator, OracleJudger};
use serde_json::Value;
use tempfile::TempDir;

fn backtrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backtrack"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

fn json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&read(p)).unwrap()
}

#[test]
fn simulate_the_starbucks_task() {
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        "run.toml",
        "seed = 5\nout = \"out\"\n[dataset]\nbuiltin = \"starbucks\"\n[policy.generator]\nkind = \"oracle\"\nerror_rate = 0.4\n",
    );
    let o = backtrack(dir.path(), &["simulate", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let episodes = read(out.join("episodes.jsonl"));
    assert_eq!(episodes.lines().count(), 1);
    let ep: Episode = serde_json::from_str(episodes.lines().next().unwrap()).unwrap();
    assert_eq!(ep.task_id, "starbucks-black-tea-latte");
    assert_eq!(read(out.join("timings.jsonl")).lines().count(), 1);
    let attempts: usize = ep.steps.iter().map(|s| s.attempts.len()).sum();
    assert_eq!(read(out.join("rewards.jsonl")).lines().count(), attempts);
    let m = json(out.join("simulate.manifest.json"));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_dataset_path_is_named() {
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        "run.toml",
        "seed = 1\nout = \"out\"\n[dataset]\ngraph = \"no/such/graph\"\n",
    );
    let o = backtrack(dir.path(), &["simulate", "--config", "run.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no/such/graph"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        "noseed.toml",
        "out = \"out\"\n[dataset]\nbuiltin = \"starbucks\"\n",
    );
    config(dir.path(), "ok.toml", "seed = 1\n[dataset]\nbuiltin = \"starbucks\"\n");
    let cases: [&[&str]; 5] = [
        &["simulate", "--config", "noseed.toml"],
        &["simulate", "--config", "missing.toml"],
        &["simulate", "--config", "ok.toml"],
        &[
            "simulate",
            "--config",
            "ok.toml",
            "--out",
            "o",
            "--execution-mode",
            "imagined",
        ],
        &["evaluate", "--config", "ok.toml", "--out", "o", "--sample", "1.5"],
    ];
    for args in cases {
        let o = backtrack(dir.path(), args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
    assert!(stderr(&backtrack(dir.path(), cases[0])).contains("seed"));
    assert!(stderr(&backtrack(dir.path(), cases[2])).contains("--out"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let body = "seed = 11\nparallelism = 4\n[dataset]\nbuiltin = \"synthetic\"\nsize = 40\n\
                [policy.generator]\nkind = \"oracle\"\nerror_rate = 0.5\n\
                [policy.judger]\nkind = \"oracle\"\nflip_prob = 0.2\n";
    config(dir.path(), "run.toml", body);
    for out in ["a", "b"] {
        let o = backtrack(dir.path(), &["simulate", "--config", "run.toml", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let o = backtrack(
        dir.path(),
        &["simulate", "--config", "run.toml", "--out", "c", "--parallelism", "1"],
    );
    assert_eq!(code(&o), 0);
    // the manifest alone reproduces the run
    let o = backtrack(
        dir.path(),
        &["simulate", "--config", "a/simulate.manifest.json", "--out", "d"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read(dir.path().join("a/episodes.jsonl"));
    assert_eq!(a.lines().count(), 40);
    for other in ["b", "c", "d"] {
        assert_eq!(a, read(dir.path().join(other).join("episodes.jsonl")), "{other}");
        assert_eq!(
            read(dir.path().join("a/rewards.jsonl")),
            read(dir.path().join(other).join("rewards.jsonl"))
        );
    }
    let ma = json(dir.path().join("a/simulate.manifest.json"));
    let mb = json(dir.path().join("b/simulate.manifest.json"));
    let mc = json(dir.path().join("c/simulate.manifest.json"));
    assert_ne!(ma["config_sha256"], mb["config_sha256"]);
    assert_ne!(ma["config_sha256"], mc["config_sha256"]);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        "run.toml",
        "seed = 1\nout = \"out\"\n[dataset]\nbuiltin = \"starbucks\"\n[loop]\nmax_reflections = 4\n\
         [policy.generator]\nkind = \"oracle\"\nerror_rate = 0.6\n",
    );
    let o = backtrack(
        dir.path(),
        &[
            "simulate",
            "--config",
            "run.toml",
            "--max-reflections",
            "0",
            "--seed",
            "77",
            "--execution-mode",
            "simulated",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = json(dir.path().join("out/simulate.manifest.json"));
    assert_eq!(m["seed"], 77);
    assert_eq!(m["config"]["loop"]["max_reflections"], 0);
    assert_eq!(m["config"]["loop"]["execution_mode"], "simulated");
    let ep: Episode = serde_json::from_str(read(dir.path().join("out/episodes.jsonl")).trim()).unwrap();
    assert!(ep.steps.iter().all(|s| s.attempts.len() == 1));
    assert_eq!(ep.execution_mode, ExecutionMode::Simulated);
}

fn write_metric_example(dir: &Path) {
    let ex = metric_example();
    let env = Environment::Graph(ex.graph.clone());
    let mut lines = String::new();
    for (t, g) in ex.tasks.iter().zip(&ex.generated) {
        lines.push_str(&replay(&env, t, g, ExecutionMode::Actual).unwrap().to_record());
        lines.push('\n');
    }
    fs::write(dir.join("episodes.jsonl"), lines).unwrap();
    let ds = GraphDataset {
        meta: GraphMeta {
            app: "example".into(),
            version: "1".into(),
        },
        graph: ex.graph,
        tasks: ex.tasks,
    };
    save_graph(&dir.join("graph"), &ds).unwrap();
}

#[test]
fn evaluate_the_worked_metric_example() {
    let dir = TempDir::new().unwrap();
    write_metric_example(dir.path());
    config(
        dir.path(),
        "eval.toml",
        "seed = 3\nout = \"report\"\n[dataset]\ngraph = \"graph\"\n",
    );
    let o = backtrack(
        dir.path(),
        &["evaluate", "--config", "eval.toml", "--episodes", "episodes.jsonl"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("step accuracy: iou 70.00%  text 60.00%"), "{text}");
    assert!(
        text.contains("task accuracy: both 0.00%  iou 33.33%  text 0.00%"),
        "{text}"
    );
    assert!(text.contains("task success rate: 100.00%"), "{text}");
    assert_eq!(read(dir.path().join("report/report.txt")), text);
    let r = json(dir.path().join("report/report.json"));
    assert_eq!(r["episodes"], 3);
    assert_eq!(r["timing"], Value::Null);

    let o = backtrack(dir.path(), &["report", "report"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), text);
}

#[test]
fn evaluating_nothing_fails() {
    let dir = TempDir::new().unwrap();
    write_metric_example(dir.path());
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    config(
        dir.path(),
        "eval.toml",
        "seed = 3\nout = \"report\"\n[dataset]\ngraph = \"graph\"\n",
    );
    let o = backtrack(
        dir.path(),
        &["evaluate", "--config", "eval.toml", "--episodes", "empty.jsonl"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no episodes"), "{}", stderr(&o));
    fs::create_dir(dir.path().join("nothing")).unwrap();
    let o = backtrack(
        dir.path(),
        &["evaluate", "--config", "eval.toml", "--episodes", "nothing"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn episodes_for_unknown_tasks_are_reported() {
    let dir = TempDir::new().unwrap();
    write_metric_example(dir.path());
    config(
        dir.path(),
        "eval.toml",
        "seed = 3\nout = \"report\"\n[dataset]\nbuiltin = \"starbucks\"\n",
    );
    let o = backtrack(
        dir.path(),
        &["evaluate", "--config", "eval.toml", "--episodes", "episodes.jsonl"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("task-1"), "{}", stderr(&o));
}

#[test]
fn sampled_evaluation_matches_the_seeded_subset() {
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        "run.toml",
        "seed = 4\nout = \"run\"\n[dataset]\nbuiltin = \"synthetic\"\nsize = 25\n[policy.generator]\nkind = \"oracle\"\nerror_rate = 0.5\n",
    );
    assert_eq!(code(&backtrack(dir.path(), &["simulate", "--config", "run.toml"])), 0);
    let o = backtrack(
        dir.path(),
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--episodes",
            "run",
            "--sample",
            "0.8",
            "--seed",
            "9",
            "--out",
            "eval",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(dir.path().join("eval/report.json"));
    assert_eq!(r["episodes"], 20);

    let episodes: Vec<Episode> = read(dir.path().join("run/episodes.jsonl"))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let (graph, tasks) = synthetic_suite(25, 0);
    let subset = sample_subset(&episodes, 0.8, 9);
    let expected = evaluate(&pair(&subset, &tasks).unwrap(), Some(&graph), &MatchConfig::default()).unwrap();
    assert_eq!(
        r["step_accuracy"],
        serde_json::to_value(expected.step_accuracy).unwrap()
    );
    assert_eq!(r["detection"], serde_json::to_value(expected.detection).unwrap());
    assert!(r["timing"]["steps"].as_u64().unwrap() > 0);

    // rerunning from the manifest picks up the recorded episodes and fraction
    let o = backtrack(
        dir.path(),
        &["evaluate", "--config", "eval/evaluate.manifest.json", "--out", "again"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let again = json(dir.path().join("again/report.json"));
    assert_eq!(again["episodes"], 20);
    assert_eq!(again["step_accuracy"], r["step_accuracy"]);
}

#[test]
fn build_datasets_matches_the_library_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let body = "seed = 6\nparallelism = 3\n[dataset]\nbuiltin = \"synthetic\"\nsize = 30\n\
                [policy.generator]\nkind = \"oracle\"\nerror_rate = 0.4\n";
    config(dir.path(), "ds.toml", body);
    for out in ["a", "b"] {
        let o = backtrack(dir.path(), &["build-datasets", "--config", "ds.toml", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["judgment.jsonl", "reflection.jsonl"] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)));
    }
    let (graph, tasks) = synthetic_suite(30, 0);
    let env = Environment::Graph(graph);
    let cfg = DatasetConfig {
        seed: 6,
        ..DatasetConfig::default()
    };
    let gen = OracleGenerator::new(0.4);
    let judgment = build_judgment(&tasks, &gen, &env, &cfg);
    let reflection = build_reflection(&tasks, &gen, &OracleJudger::new(), &env, &cfg);
    assert_eq!(
        read(dir.path().join("a/judgment.jsonl")).lines().count(),
        judgment.len()
    );
    assert_eq!(
        read(dir.path().join("a/reflection.jsonl")).lines().count(),
        reflection.len()
    );
    assert!(judgment.len() > tasks.len());
}

#[test]
fn empty_corpus_gives_empty_datasets() {
    let dir = TempDir::new().unwrap();
    let sb = starbucks();
    let ds = GraphDataset {
        meta: GraphMeta {
            app: "starbucks".into(),
            version: "1".into(),
        },
        graph: sb.graph,
        tasks: vec![],
    };
    save_graph(&dir.path().join("graph"), &ds).unwrap();
    fs::write(dir.path().join("tasks.jsonl"), "").unwrap();
    config(
        dir.path(),
        "ds.toml",
        "seed = 1\nout = \"out\"\n[dataset]\ngraph = \"graph\"\ntasks = \"tasks.jsonl\"\n",
    );
    let o = backtrack(dir.path(), &["build-datasets", "--config", "ds.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(dir.path().join("out/judgment.jsonl")), "");
    assert_eq!(read(dir.path().join("out/reflection.jsonl")), "");
}

#[test]
fn chain_dataset_from_disk() {
    let dir = TempDir::new().unwrap();
    save_chain(&dir.path().join("chain.jsonl"), &starbucks().chain()).unwrap();
    config(
        dir.path(),
        "run.toml",
        "seed = 2\nout = \"out\"\n[dataset]\nchain = \"chain.jsonl\"\n[loop]\nexecution_mode = \"simulated\"\n",
    );
    assert_eq!(code(&backtrack(dir.path(), &["simulate", "--config", "run.toml"])), 0);
    let o = backtrack(dir.path(), &["evaluate", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("task success rate: n/a"));
    let o = backtrack(dir.path(), &["build-datasets", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read(dir.path().join("out/judgment.jsonl")).contains("#sim:"));
}

#[test]
fn unreachable_backend_exits_with_three() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let dir = TempDir::new().unwrap();
    config(
        dir.path(),
        "run.toml",
        &format!(
            "seed = 1\nout = \"out\"\n[dataset]\nbuiltin = \"starbucks\"\n\
             [policy.generator]\nkind = \"remote\"\nendpoint = \"tcp://{addr}\"\n\
             [remote]\ntimeout_secs = 0.2\nretries = 0\n"
        ),
    );
    let o = backtrack(dir.path(), &["simulate", "--config", "run.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("unavailable"), "{}", stderr(&o));
    assert_eq!(read(dir.path().join("out/episodes.jsonl")), "");

    let o = backtrack(dir.path(), &["build-datasets", "--config", "run.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!dir.path().join("out/judgment.jsonl").exists());
}
