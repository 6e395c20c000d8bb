//! Run configuration: a TOML file (or a previous run's manifest) plus flag
//! overrides.
//!
//! ```toml
//! seed = 7
//! parallelism = 4
//! out = "runs/demo"
//!
//! [dataset]
//! graph = "data/starbucks"      # or: chain = "chains.jsonl", builtin = "starbucks"
//!
//! [policy.generator]
//! kind = "oracle"
//! error_rate = 0.3
//!
//! [policy.judger]
//! kind = "remote"
//! endpoint = "tcp://127.0.0.1:7000"
//!
//! [loop]
//! max_reflections = 3
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use backtrack_core::agent::LoopConfig;
use backtrack_core::dataset::DatasetConfig;
use backtrack_core::environment::{load_chain, load_graph, load_tasks, Environment, EnvironmentGraph, ExecutionMode};
use backtrack_core::fixtures;
use backtrack_core::matching::MatchConfig;
use backtrack_core::page::Task;
use backtrack_core::policy::mock::{AcceptAllJudger, OracleGenerator, OracleJudger, OracleReflector};
use backtrack_core::policy::remote::{RemoteConfig, RemotePolicy};
use backtrack_core::policy::Policies;
use backtrack_core::rewards::RewardConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::{Failure, ResultExt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default, rename = "loop")]
    pub loop_cfg: LoopSection,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub rewards: RewardConfig,
    #[serde(default)]
    pub datasets: DatasetSection,
    #[serde(default)]
    pub remote: RemoteConfig,
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<PathBuf>,
    /// Task file for a graph dataset; defaults to `<graph>/tasks.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Builtin>,
    /// Size of the `synthetic` and `ladder` fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    Starbucks,
    StarbucksChain,
    MetricExample,
    Ladder,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    Oracle {
        #[serde(default)]
        error_rate: f64,
        #[serde(default)]
        flip_prob: f64,
    },
    AcceptAll,
    Remote {
        endpoint: String,
    },
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Oracle {
            error_rate: 0.0,
            flip_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub generator: PolicySpec,
    pub judger: PolicySpec,
    pub reflector: PolicySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub max_reflections: usize,
    pub max_steps: usize,
    pub execution_mode: ExecutionMode,
}

impl Default for LoopSection {
    fn default() -> Self {
        let d = LoopConfig::default();
        Self {
            max_reflections: d.max_reflections,
            max_steps: d.max_steps,
            execution_mode: d.execution_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub regenerations: usize,
    pub preserve_rate: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            regenerations: d.regenerations,
            preserve_rate: d.preserve_rate,
        }
    }
}

/// Values given on the command line; `None` leaves the file value alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub execution_mode: Option<ExecutionMode>,
    pub max_reflections: Option<usize>,
    pub out: Option<PathBuf>,
}

/// What a manifest records about a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub args: serde_json::Map<String, serde_json::Value>,
}

/// A loaded configuration, plus command arguments when it came from a
/// manifest.
pub struct Loaded {
    pub config: RunConfig,
    pub args: serde_json::Map<String, serde_json::Value>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .usage()?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let (mut config, args) = if is_json {
        let m: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a run manifest", path.display()))
            .usage()?;
        (m.config, m.args)
    } else {
        let c: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .usage()?;
        (c, serde_json::Map::new())
    };
    let base = path.parent().unwrap_or(Path::new("."));
    config.resolve_paths(base);
    config.apply(overrides);
    config.validate().usage()?;
    Ok(Loaded { config, args })
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl RunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.dataset;
        for p in [&mut d.graph, &mut d.chain, &mut d.tasks, &mut self.out]
            .into_iter()
            .flatten()
        {
            *p = absolute(base, p);
        }
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(m) = o.execution_mode {
            self.loop_cfg.execution_mode = m;
        }
        if let Some(r) = o.max_reflections {
            self.loop_cfg.max_reflections = r;
        }
        if let Some(out) = &o.out {
            self.out = Some(absolute(Path::new("."), out));
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        let d = &self.dataset;
        let sources = [d.graph.is_some(), d.chain.is_some(), d.builtin.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            bail!("[dataset] needs exactly one of graph, chain or builtin");
        }
        if d.tasks.is_some() && d.graph.is_none() {
            bail!("[dataset] tasks only applies to a graph dataset");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        self.rewards.validate()?;
        if !(0.0..=1.0).contains(&self.datasets.preserve_rate) {
            bail!("datasets.preserve_rate must lie in [0, 1]");
        }
        for (role, spec) in [
            ("generator", &self.policy.generator),
            ("judger", &self.policy.judger),
            ("reflector", &self.policy.reflector),
        ] {
            match spec {
                PolicySpec::Oracle { error_rate, flip_prob } => {
                    if !(0.0..=1.0).contains(error_rate) || !(0.0..=1.0).contains(flip_prob) {
                        bail!("policy.{role}: rates must lie in [0, 1]");
                    }
                    if role != "generator" && *error_rate != 0.0 {
                        bail!("policy.{role}: error_rate only applies to the generator");
                    }
                    if role != "judger" && *flip_prob != 0.0 {
                        bail!("policy.{role}: flip_prob only applies to the judger");
                    }
                }
                PolicySpec::AcceptAll if role != "judger" => bail!("policy.{role}: accept-all is a judger"),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path, Failure> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::usage(anyhow::anyhow!("no output directory: set `out` or pass --out")))
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            max_reflections: self.loop_cfg.max_reflections,
            max_steps: self.loop_cfg.max_steps,
            execution_mode: self.loop_cfg.execution_mode,
            seed: self.seed,
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            match_cfg: self.matching,
            regenerations: self.datasets.regenerations,
            preserve_rate: self.datasets.preserve_rate,
            parallelism: self.parallelism,
            seed: self.seed,
        }
    }

    /// SHA-256 of the resolved configuration in its JSON form.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn manifest(&self, command: &str, args: serde_json::Map<String, serde_json::Value>) -> Manifest {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: backtrack_core::VERSION.to_string(),
            seed: self.seed,
            config_sha256: self.sha256(),
            config: self.clone(),
            args,
        }
    }
}

/// The environment and the tasks to run on it.
pub struct Data {
    pub env: Environment,
    pub tasks: Vec<Task>,
}

impl Data {
    pub fn graph(&self) -> Option<&EnvironmentGraph> {
        self.env.graph()
    }
}

fn require(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::data(anyhow::anyhow!(
            "dataset path {} does not exist",
            path.display()
        )))
    }
}

pub fn load_data(src: &DatasetSource) -> Result<Data, Failure> {
    if let Some(dir) = &src.graph {
        require(dir)?;
        let ds = load_graph(dir).data()?;
        let tasks = match &src.tasks {
            Some(p) => {
                require(p)?;
                load_tasks(p).data()?
            }
            None => ds.tasks,
        };
        return Ok(Data {
            env: Environment::Graph(ds.graph),
            tasks,
        });
    }
    if let Some(path) = &src.chain {
        require(path)?;
        let chain = load_chain(path).data()?;
        let tasks = chain.tasks().map(|t| t.task.clone()).collect();
        return Ok(Data {
            env: Environment::Chain(chain),
            tasks,
        });
    }
    let builtin = src.builtin.expect("validated dataset source");
    Ok(match builtin {
        Builtin::Starbucks => {
            let sb = fixtures::starbucks();
            Data {
                env: Environment::Graph(sb.graph),
                tasks: vec![sb.task],
            }
        }
        Builtin::StarbucksChain => {
            let sb = fixtures::starbucks();
            Data {
                env: Environment::Chain(sb.chain()),
                tasks: vec![sb.task],
            }
        }
        Builtin::MetricExample => {
            let ex = fixtures::metric_example();
            Data {
                env: Environment::Graph(ex.graph),
                tasks: ex.tasks,
            }
        }
        Builtin::Ladder => {
            let (graph, task) = fixtures::ladder(src.size.unwrap_or(10), 3);
            Data {
                env: Environment::Graph(graph),
                tasks: vec![task],
            }
        }
        Builtin::Synthetic => {
            let (graph, tasks) = fixtures::synthetic_suite(src.size.unwrap_or(100), 0);
            Data {
                env: Environment::Graph(graph),
                tasks,
            }
        }
    })
}

fn remote(endpoint: &str, cfg: RemoteConfig) -> Result<Arc<RemotePolicy>, Failure> {
    RemotePolicy::from_endpoint(endpoint, cfg)
        .map(Arc::new)
        .with_context(|| format!("cannot reach policy backend {endpoint}"))
        .policy()
}

pub fn build_policies(cfg: &RunConfig) -> Result<Policies, Failure> {
    let p = &cfg.policy;
    let generator: Arc<dyn backtrack_core::Generator> = match &p.generator {
        PolicySpec::Oracle { error_rate, .. } => Arc::new(OracleGenerator::new(*error_rate)),
        PolicySpec::Remote { endpoint } => remote(endpoint, cfg.remote)?,
        PolicySpec::AcceptAll => unreachable!("validated"),
    };
    let judger: Arc<dyn backtrack_core::Judger> = match &p.judger {
        PolicySpec::Oracle { flip_prob, .. } if *flip_prob > 0.0 => Arc::new(OracleJudger::noisy(*flip_prob)),
        PolicySpec::Oracle { .. } => Arc::new(OracleJudger::new()),
        PolicySpec::AcceptAll => Arc::new(AcceptAllJudger),
        PolicySpec::Remote { endpoint } => remote(endpoint, cfg.remote)?,
    };
    let reflector: Arc<dyn backtrack_core::Reflector> = match &p.reflector {
        PolicySpec::Oracle { .. } => Arc::new(OracleReflector),
        PolicySpec::Remote { endpoint } => remote(endpoint, cfg.remote)?,
        PolicySpec::AcceptAll => unreachable!("validated"),
    };
    Ok(Policies {
        generator,
        judger,
        reflector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> anyhow::Result<RunConfig> {
        let c: RunConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("seed = 3\n[dataset]\nbuiltin = \"starbucks\"\n").unwrap();
        assert_eq!(c.parallelism, 1);
        assert_eq!(c.loop_cfg.max_reflections, 3);
        assert_eq!(c.policy.judger, PolicySpec::default());
        assert_eq!(c.loop_config().seed, 3);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = parse("[dataset]\nbuiltin = \"starbucks\"\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn exactly_one_dataset_source() {
        assert!(parse("seed = 1\n[dataset]\n").is_err());
        assert!(parse("seed = 1\n[dataset]\nbuiltin = \"starbucks\"\nchain = \"x.jsonl\"\n").is_err());
    }

    #[test]
    fn role_specific_parameters() {
        let base = "seed = 1\n[dataset]\nbuiltin = \"starbucks\"\n";
        assert!(parse(&format!("{base}[policy.judger]\nkind = \"oracle\"\nflip_prob = 0.1\n")).is_ok());
        assert!(parse(&format!("{base}[policy.judger]\nkind = \"oracle\"\nerror_rate = 0.1\n")).is_err());
        assert!(parse(&format!("{base}[policy.generator]\nkind = \"accept-all\"\n")).is_err());
        assert!(parse(&format!(
            "{base}[policy.generator]\nkind = \"oracle\"\ntemperature = 1\n"
        ))
        .is_err());
        let c = parse(&format!(
            "{base}[policy.reflector]\nkind = \"remote\"\nendpoint = \"tcp://127.0.0.1:9\"\n"
        ))
        .unwrap();
        assert!(matches!(c.policy.reflector, PolicySpec::Remote { .. }));
    }

    #[test]
    fn flags_override_the_file() {
        let mut c =
            parse("seed = 1\nparallelism = 2\n[dataset]\nbuiltin = \"starbucks\"\n[loop]\nmax_reflections = 5\n")
                .unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            max_reflections: Some(0),
            execution_mode: Some(ExecutionMode::Simulated),
            ..Overrides::default()
        });
        assert_eq!(c.seed, 9);
        assert_eq!(c.parallelism, 2);
        assert_eq!(c.loop_cfg.max_reflections, 0);
        assert_eq!(c.loop_cfg.execution_mode, ExecutionMode::Simulated);
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse("seed = 1\n[dataset]\nbuiltin = \"starbucks\"\n").unwrap();
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.seed = 2;
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }
}
