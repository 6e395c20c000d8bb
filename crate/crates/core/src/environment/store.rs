//! On-disk dataset formats.
//!
//! Graph dataset directory:
//!
//! ```text
//! meta.json          {"app": "...", "version": "..."}
//! pages/<id>.json    one page record per file
//! edges.tsv          source_id <TAB> canonical action <TAB> target_id
//! tasks.jsonl        optional, one task record per line
//! ```
//!
//! Chain dataset: a JSON-lines file with one chain task (task fields plus
//! the ordered `pages`) per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChainDataset, ChainTask, Edge, EnvError, EnvironmentGraph};
use crate::action::parse_action;
use crate::page::{Page, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub app: String,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub meta: GraphMeta,
    pub graph: EnvironmentGraph,
    pub tasks: Vec<Task>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnvError + '_ {
    move |source| EnvError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, reason: impl std::fmt::Display) -> EnvError {
    EnvError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn read(path: &Path) -> Result<String, EnvError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn load_graph(dir: &Path) -> Result<GraphDataset, EnvError> {
    let meta_path = dir.join("meta.json");
    let meta: GraphMeta = serde_json::from_str(&read(&meta_path)?).map_err(|e| format_err(&meta_path, e))?;

    let pages_dir = dir.join("pages");
    let mut page_files: Vec<PathBuf> = fs::read_dir(&pages_dir)
        .map_err(io_err(&pages_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    page_files.sort();
    let mut pages = Vec::with_capacity(page_files.len());
    for path in &page_files {
        let page: Page = serde_json::from_str(&read(path)?).map_err(|e| format_err(path, e))?;
        pages.push(page);
    }

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (n, line) in read(&edges_path)?.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(format_err(
                &edges_path,
                format!("line {}: expected 3 tab-separated columns, got {}", n + 1, cols.len()),
            ));
        }
        let action = parse_action(cols[1]).map_err(|e| format_err(&edges_path, format!("line {}: {e}", n + 1)))?;
        edges.push(Edge {
            source: cols[0].to_string(),
            action,
            target: cols[2].to_string(),
        });
    }

    let graph = EnvironmentGraph::new(pages, edges)?;
    let tasks_path = dir.join("tasks.jsonl");
    let tasks = if tasks_path.exists() {
        load_tasks(&tasks_path)?
    } else {
        Vec::new()
    };
    for t in &tasks {
        if graph.page(&t.start_page).is_err() {
            return Err(EnvError::Integrity(format!(
                "task {:?} starts on missing page {:?}",
                t.task_id, t.start_page
            )));
        }
    }
    Ok(GraphDataset { meta, graph, tasks })
}

fn page_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

pub fn save_graph(dir: &Path, data: &GraphDataset) -> Result<(), EnvError> {
    let pages_dir = dir.join("pages");
    fs::create_dir_all(&pages_dir).map_err(io_err(&pages_dir))?;
    let meta_path = dir.join("meta.json");
    let meta = serde_json::to_string_pretty(&data.meta).expect("meta serializes");
    fs::write(&meta_path, meta + "\n").map_err(io_err(&meta_path))?;
    for p in data.graph.pages() {
        let path = pages_dir.join(page_file_name(&p.page_id));
        if path.exists() {
            return Err(format_err(&path, "page ids collide after file-name sanitizing"));
        }
        let body = serde_json::to_string_pretty(p).expect("page serializes");
        fs::write(&path, body + "\n").map_err(io_err(&path))?;
    }
    let edges_path = dir.join("edges.tsv");
    let mut out = String::new();
    for e in data.graph.edges() {
        let act = e.action.canonical();
        if [&e.source, &act, &e.target].iter().any(|s| s.contains(['\t', '\n'])) {
            return Err(format_err(
                &edges_path,
                format!("edge field contains a tab or newline: {act}"),
            ));
        }
        out.push_str(&format!("{}\t{}\t{}\n", e.source, act, e.target));
    }
    fs::write(&edges_path, out).map_err(io_err(&edges_path))?;
    if !data.tasks.is_empty() {
        save_tasks(&dir.join("tasks.jsonl"), &data.tasks)?;
    }
    Ok(())
}

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EnvError> {
    let mut out = Vec::new();
    for (n, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| format_err(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), EnvError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for item in items {
        let line = serde_json::to_string(item).expect("record serializes");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}

pub fn load_tasks(path: &Path) -> Result<Vec<Task>, EnvError> {
    let tasks: Vec<Task> = load_jsonl(path)?;
    for t in &tasks {
        if t.golden_actions.is_empty() {
            return Err(format_err(path, format!("task {:?} has no golden actions", t.task_id)));
        }
    }
    Ok(tasks)
}

pub fn save_tasks(path: &Path, tasks: &[Task]) -> Result<(), EnvError> {
    save_jsonl(path, tasks)
}

pub fn load_chain(path: &Path) -> Result<ChainDataset, EnvError> {
    let raw: Vec<ChainTask> = load_jsonl(path)?;
    let mut tasks = Vec::with_capacity(raw.len());
    for ct in raw {
        if ct.task.golden_actions.is_empty() {
            return Err(format_err(
                path,
                format!("task {:?} has no golden actions", ct.task.task_id),
            ));
        }
        tasks.push(ChainTask::new(ct.task, ct.pages)?);
    }
    ChainDataset::new(tasks)
}

pub fn save_chain(path: &Path, data: &ChainDataset) -> Result<(), EnvError> {
    let tasks: Vec<&ChainTask> = data.tasks().collect();
    save_jsonl(path, &tasks)
}
