use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{anyhow, Context};
use backtrack_core::agent::{run_suite, Episode, EpisodeTimings, LoopError};
use backtrack_core::dataset::{build_judgment, build_reflection, to_jsonl};
use backtrack_core::metrics::{self, pair, sample_subset, SuiteReport};
use backtrack_core::rewards::reward_records;
use backtrack_core::{Action, Generator, Judger, JudgerVerdict, PolicyContext, PolicyError};
use serde::Serialize;
use serde_json::{json, Map};

use crate::config::{build_policies, load_data, RunConfig};
use crate::exit::{Failure, Kind, ResultExt};

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body)
        .with_context(|| format!("cannot write {}", path.display()))
        .data()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let body = serde_json::to_string_pretty(value).expect("value serializes");
    write(path, &(body + "\n"))
}

fn create_out(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let out = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .data()?;
    Ok(out)
}

fn loop_failure_kind(e: &LoopError) -> Kind {
    match e {
        LoopError::PolicyFailure { .. } => Kind::Policy,
        LoopError::Environment { .. } => Kind::Data,
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let out = create_out(cfg)?;
    let data = load_data(&cfg.dataset)?;
    let policies = build_policies(cfg)?;
    let results = run_suite(&data.env, &policies, &cfg.loop_config(), &data.tasks, cfg.parallelism);

    let mut episodes = Vec::with_capacity(results.len());
    let mut failed: Vec<Kind> = Vec::new();
    for r in results {
        match r {
            Ok(ep) => episodes.push(ep),
            Err(e) => {
                failed.push(loop_failure_kind(&e));
                log::error!("{:#}", anyhow::Error::from(e));
            }
        }
    }

    let mut records = String::new();
    for ep in &episodes {
        records.push_str(&ep.to_record());
        records.push('\n');
    }
    write(&out.join("episodes.jsonl"), &records)?;
    let timings = episodes.iter().map(|ep| EpisodeTimings {
        task_id: ep.task_id.clone(),
        steps: ep.timings(),
    });
    write(&out.join("timings.jsonl"), &to_jsonl(timings))?;
    write(
        &out.join("rewards.jsonl"),
        &to_jsonl(reward_records(&episodes, &cfg.rewards)),
    )?;
    write_json(
        &out.join("simulate.manifest.json"),
        &cfg.manifest("simulate", Map::new()),
    )?;
    println!("{} episodes written to {}", episodes.len(), out.display());

    match failed.iter().max_by_key(|k| **k as u8) {
        None => Ok(()),
        Some(&kind) => Err(Failure {
            kind,
            error: anyhow!("{} of {} tasks failed", failed.len(), data.tasks.len()),
        }),
    }
}

fn episodes_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("episodes.jsonl")
    } else {
        path.to_path_buf()
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .data()?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))
                .data()
        })
        .collect()
}

/// Episodes, and whether a timings file was found next to them.
fn load_episodes(path: &Path) -> Result<(Vec<Episode>, bool), Failure> {
    let file = episodes_file(path);
    let mut episodes: Vec<Episode> = read_jsonl(&file)?;
    if episodes.is_empty() {
        return Err(Failure::data(anyhow!("no episodes in {}", file.display())));
    }
    let timings_path = file.with_file_name("timings.jsonl");
    let timed = timings_path.exists();
    if timed {
        let timings: Vec<EpisodeTimings> = read_jsonl(&timings_path)?;
        let by_task: HashMap<&str, &[_]> = timings
            .iter()
            .map(|t| (t.task_id.as_str(), t.steps.as_slice()))
            .collect();
        for ep in &mut episodes {
            if let Some(t) = by_task.get(ep.task_id.as_str()) {
                ep.attach_timings(t);
            }
        }
    }
    Ok((episodes, timed))
}

pub fn evaluate(cfg: &RunConfig, episodes_path: &Path, sample: Option<f64>) -> Result<SuiteReport, Failure> {
    if let Some(f) = sample {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Failure::usage(anyhow!("--sample must lie in (0, 1], got {f}")));
        }
    }
    let out = create_out(cfg)?;
    let data = load_data(&cfg.dataset)?;
    let (mut episodes, timed) = load_episodes(episodes_path)?;
    if let Some(f) = sample {
        episodes = sample_subset(&episodes, f, cfg.seed);
    }
    let scored = pair(&episodes, &data.tasks).data()?;
    let mut report = metrics::evaluate(&scored, data.graph(), &cfg.matching).data()?;
    if !timed {
        report.timing = None;
    }

    let text = report.to_text();
    write_json(&out.join("report.json"), &report)?;
    write(&out.join("report.txt"), &text)?;
    let mut args = Map::new();
    let abs = std::path::absolute(episodes_path).unwrap_or_else(|_| episodes_path.to_path_buf());
    args.insert("episodes".into(), json!(abs));
    if let Some(f) = sample {
        args.insert("sample".into(), json!(f));
    }
    write_json(&out.join("evaluate.manifest.json"), &cfg.manifest("evaluate", args))?;
    print!("{text}");
    Ok(report)
}

/// Counts backend failures seen by the roles it wraps.
#[derive(Default)]
struct Outages(AtomicUsize);

impl Outages {
    fn note<T>(&self, r: Result<T, PolicyError>) -> Result<T, PolicyError> {
        if matches!(r, Err(PolicyError::BackendUnavailable(_))) {
            self.0.fetch_add(1, Ordering::Relaxed);
        }
        r
    }
}

struct Watched<'a, P: ?Sized> {
    inner: &'a P,
    outages: &'a Outages,
}

impl<P: Generator + ?Sized> Generator for Watched<'_, P> {
    fn generate(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        self.outages.note(self.inner.generate(ctx))
    }
}

impl<P: Judger + ?Sized> Judger for Watched<'_, P> {
    fn judge(&self, ctx: &PolicyContext<'_>, candidate: &Action) -> Result<JudgerVerdict, PolicyError> {
        self.outages.note(self.inner.judge(ctx, candidate))
    }
}

pub fn build_datasets(cfg: &RunConfig) -> Result<(), Failure> {
    let out = create_out(cfg)?;
    let data = load_data(&cfg.dataset)?;
    let policies = build_policies(cfg)?;
    let dcfg = cfg.dataset_config();
    let outages = Outages::default();
    let generator = Watched {
        inner: policies.generator.as_ref(),
        outages: &outages,
    };
    let judger = Watched {
        inner: policies.judger.as_ref(),
        outages: &outages,
    };
    let judgment = build_judgment(&data.tasks, &generator, &data.env, &dcfg);
    let reflection = build_reflection(&data.tasks, &generator, &judger, &data.env, &dcfg);
    let failures = outages.0.load(Ordering::Relaxed);
    if failures > 0 {
        return Err(Failure::policy(anyhow!(
            "policy backend unavailable for {failures} calls; no datasets written"
        )));
    }
    write(
        &out.join("judgment.jsonl"),
        &to_jsonl(judgment.iter().map(|e| e.record())),
    )?;
    write(
        &out.join("reflection.jsonl"),
        &to_jsonl(reflection.iter().map(|e| e.record())),
    )?;
    write_json(
        &out.join("build-datasets.manifest.json"),
        &cfg.manifest("build-datasets", Map::new()),
    )?;
    println!(
        "{} judgment and {} reflection examples written to {}",
        judgment.len(),
        reflection.len(),
        out.display()
    );
    Ok(())
}

pub fn report(input: &Path) -> Result<(), Failure> {
    let path = if input.is_dir() {
        input.join("report.json")
    } else {
        input.to_path_buf()
    };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))
        .data()?;
    let report: SuiteReport = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a report", path.display()))
        .data()?;
    print!("{}", report.to_text());
    Ok(())
}
