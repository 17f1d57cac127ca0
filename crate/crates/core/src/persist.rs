//! On-disk formats: population, library and report files, the per-iteration
//! state layout, file validation and CSV export.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{evaluate, Library, LibraryEntryJson, Program, MAX_PROGRAM_SIZE};
use crate::embedding::EmbeddedGraphJson;
use crate::evolution::{
    write_atomic, EvolutionState, FitnessRecord, IterationReport, PopulationEntry,
};
use crate::graph::{FeatureGraph, GraphJson};
use crate::isomorphism::isomorphic_featured;

pub const POPULATION_FILE: &str = "pop.json";
pub const LIBRARY_FILE: &str = "lib.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("no iterations under {0}")]
    EmptyStateDir(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> PersistError + '_ {
    move |source| PersistError::Json {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PersistError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// One population member on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationEntryJson {
    pub program: String,
    pub graph: GraphJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<FitnessRecord>,
}

pub fn population_to_json(
    population: &[PopulationEntry],
    lib: &Library,
) -> Vec<PopulationEntryJson> {
    population
        .iter()
        .map(|e| PopulationEntryJson {
            program: e.program.to_sexpr(lib),
            graph: GraphJson::from(&e.graph),
            fitness: e.fitness.clone(),
        })
        .collect()
}

/// Everything wrong with one population entry, prefixed by its index.
fn entry_violations(i: usize, entry: &PopulationEntryJson, lib: &Library) -> Vec<String> {
    let mut out = Vec::new();
    let mut elements = entry.graph.elements();
    elements.sort_by_key(|e| e.id);
    let graph_issues = FeatureGraph::violations_of(&elements);
    out.extend(
        graph_issues
            .iter()
            .map(|v| format!("entry {i}: graph: {v}")),
    );
    let program = match Program::parse(&entry.program, lib) {
        Ok(p) => p,
        Err(e) => {
            out.push(format!("entry {i}: program: {e}"));
            return out;
        }
    };
    if program.size() > MAX_PROGRAM_SIZE {
        out.push(format!(
            "entry {i}: program size {} exceeds the size limit of {MAX_PROGRAM_SIZE}",
            program.size()
        ));
    }
    if let Some(f) = &entry.fitness {
        let bad = |a: f64| !(0.0..=1.0).contains(&a);
        if bad(f.train_accuracy) || f.validation_accuracy.is_some_and(bad) {
            out.push(format!("entry {i}: accuracy outside [0, 1]"));
        }
    }
    if graph_issues.is_empty() {
        let stored = FeatureGraph::from_elements(elements).expect("no violations");
        match evaluate(&program, lib) {
            Ok(g) if isomorphic_featured(&g, &stored) => {}
            Ok(_) => out.push(format!(
                "entry {i}: graph differs from the program's output"
            )),
            Err(e) => out.push(format!("entry {i}: program: {e}")),
        }
    }
    out
}

pub fn population_from_json(
    entries: &[PopulationEntryJson],
    lib: &Library,
    path: &Path,
) -> Result<Vec<PopulationEntry>, PersistError> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if let Some(v) = entry_violations(i, e, lib).into_iter().next() {
                return Err(PersistError::Invalid {
                    path: path.to_path_buf(),
                    message: v,
                });
            }
            Ok(PopulationEntry {
                program: Program::parse(&e.program, lib).expect("validated"),
                graph: FeatureGraph::from_elements(e.graph.elements()).expect("validated"),
                fitness: e.fitness.clone(),
            })
        })
        .collect()
}

pub fn load_library(path: &Path) -> Result<Library, PersistError> {
    let entries: Vec<LibraryEntryJson> = read_json(path)?;
    Library::from_json(&entries).map_err(|e| PersistError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_population(path: &Path, lib: &Library) -> Result<Vec<PopulationEntry>, PersistError> {
    let entries: Vec<PopulationEntryJson> = read_json(path)?;
    population_from_json(&entries, lib, path)
}

pub fn iteration_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("iteration_{k}"))
}

/// Completed iteration numbers under `root`, ascending.
pub fn iterations(root: &Path) -> Result<Vec<usize>, PersistError> {
    let read = match fs::read_dir(root) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(root)(e)),
    };
    let mut out = Vec::new();
    for entry in read {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name();
        let Some(k) = name
            .to_str()
            .and_then(|n| n.strip_prefix("iteration_"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if entry.path().join(REPORT_FILE).is_file() {
            out.push(k);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Writes `iteration_<k>/` by filling a scratch directory and renaming it
/// into place, so readers never see half an iteration.
pub fn save_iteration(
    root: &Path,
    state: &EvolutionState,
    report: &IterationReport,
) -> Result<PathBuf, PersistError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let dir = iteration_dir(root, state.iteration);
    let scratch = root.join(format!(".iteration_{}.partial", state.iteration));
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(io_err(&scratch))?;
    }
    fs::create_dir(&scratch).map_err(io_err(&scratch))?;
    write_json(
        &scratch.join(POPULATION_FILE),
        &population_to_json(&state.population, &state.library),
    )?;
    write_json(&scratch.join(LIBRARY_FILE), &state.library.to_json())?;
    write_json(&scratch.join(REPORT_FILE), report)?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    fs::rename(&scratch, &dir).map_err(io_err(&dir))?;
    Ok(dir)
}

pub fn load_iteration(
    root: &Path,
    k: usize,
) -> Result<(EvolutionState, IterationReport), PersistError> {
    let dir = iteration_dir(root, k);
    let library = load_library(&dir.join(LIBRARY_FILE))?;
    let population = load_population(&dir.join(POPULATION_FILE), &library)?;
    let report: IterationReport = read_json(&dir.join(REPORT_FILE))?;
    Ok((
        EvolutionState {
            iteration: k,
            library,
            population,
        },
        report,
    ))
}

/// The most recent persisted state, or `None` for a fresh directory.
pub fn load_latest(root: &Path) -> Result<Option<EvolutionState>, PersistError> {
    match iterations(root)?.last() {
        Some(&k) => Ok(Some(load_iteration(root, k)?.0)),
        None => Ok(None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Population,
    Library,
    Graph,
    EmbeddedGraph,
    Report,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub kind: FileKind,
    pub violations: Vec<String>,
}

fn classify(value: &serde_json::Value) -> FileKind {
    use serde_json::Value;
    match value {
        Value::Array(items) => match items.first() {
            None => FileKind::Population,
            Some(first) if first.get("body").is_some() => FileKind::Library,
            Some(_) => FileKind::Population,
        },
        Value::Object(map) if map.contains_key("features") => FileKind::EmbeddedGraph,
        Value::Object(map) if map.contains_key("nodes") => FileKind::Graph,
        Value::Object(map) if map.contains_key("ranked") => FileKind::Report,
        _ => FileKind::Unknown,
    }
}

fn graph_violations(graph: &GraphJson) -> Vec<String> {
    let mut elements = graph.elements();
    elements.sort_by_key(|e| e.id);
    FeatureGraph::violations_of(&elements)
        .iter()
        .map(ToString::to_string)
        .collect()
}

fn decode<T: for<'de> Deserialize<'de>>(value: serde_json::Value) -> Result<T, Vec<String>> {
    serde_json::from_value(value).map_err(|e| vec![format!("malformed: {e}")])
}

/// Library used to read programs in `path`: the `lib.json` beside it, else
/// the built-in one.
fn library_beside(path: &Path) -> Result<Library, String> {
    let lib_path = path.with_file_name(LIBRARY_FILE);
    if lib_path.is_file() && lib_path != path {
        load_library(&lib_path).map_err(|e| format!("companion library: {e}"))
    } else {
        Ok(Library::initial())
    }
}

fn check_value(
    path: &Path,
    kind: FileKind,
    value: serde_json::Value,
) -> Result<Vec<String>, Vec<String>> {
    Ok(match kind {
        FileKind::Graph => graph_violations(&decode::<GraphJson>(value)?),
        FileKind::EmbeddedGraph => {
            let eg: EmbeddedGraphJson = decode(value)?;
            let graph = GraphJson {
                nodes: eg.nodes.clone(),
                edges: eg.edges.clone(),
            };
            let mut out = graph_violations(&graph);
            let n = eg.nodes.len() + eg.edges.len();
            if eg.features.len() != n {
                out.push(format!(
                    "{} feature rows for {n} elements",
                    eg.features.len()
                ));
            }
            for (id, row) in eg.features.iter().enumerate() {
                if row.len() != eg.spec.q {
                    out.push(format!(
                        "features at id {id} have length {}, expected q = {}",
                        row.len(),
                        eg.spec.q
                    ));
                }
            }
            if let Err(e) = eg.spec.validate() {
                out.push(e.to_string());
            }
            out
        }
        FileKind::Library => {
            let entries: Vec<LibraryEntryJson> = decode(value)?;
            match Library::from_json(&entries) {
                Ok(_) => Vec::new(),
                Err(e) => vec![e.to_string()],
            }
        }
        FileKind::Population => {
            let entries: Vec<PopulationEntryJson> = decode(value)?;
            let lib = library_beside(path).map_err(|e| vec![e])?;
            entries
                .iter()
                .enumerate()
                .flat_map(|(i, e)| entry_violations(i, e, &lib))
                .collect()
        }
        FileKind::Report => {
            decode::<IterationReport>(value)?;
            Vec::new()
        }
        FileKind::Unknown => vec!["not a graph, population, library or report file".into()],
    })
}

/// Checks each file against the invariants of its format. Unreadable files
/// are an error; everything else is reported as violations.
pub fn validate_files(paths: &[PathBuf]) -> Result<Vec<FileReport>, PersistError> {
    let mut out = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let (kind, violations) = match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(value) => {
                let kind = classify(&value);
                let v = check_value(path, kind, value).unwrap_or_else(|e| e);
                (kind, v)
            }
            Err(e) => (FileKind::Unknown, vec![format!("not JSON: {e}")]),
        };
        out.push(FileReport {
            path: path.clone(),
            kind,
            violations,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct StatsRow {
    iteration: usize,
    population_size: usize,
    rank: usize,
    train_accuracy: f64,
    validation_accuracy: Option<f64>,
}

/// One CSV row per evaluated entry per iteration, best first within each
/// iteration. A missing validation accuracy is an empty cell.
pub fn export_stats(root: &Path) -> Result<String, PersistError> {
    let ks = iterations(root)?;
    if ks.is_empty() {
        return Err(PersistError::EmptyStateDir(root.to_path_buf()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PersistError::Invalid {
        path: root.to_path_buf(),
        message: e.to_string(),
    };
    for k in ks {
        let path = iteration_dir(root, k).join(REPORT_FILE);
        let report: IterationReport = read_json(&path)?;
        let mut ranked = report.ranked;
        ranked.sort_by(|a, b| {
            b.train_accuracy
                .total_cmp(&a.train_accuracy)
                .then(a.rank.cmp(&b.rank))
        });
        let n = ranked.len();
        for (i, e) in ranked.iter().enumerate() {
            w.serialize(StatsRow {
                iteration: k,
                population_size: n,
                rank: i + 1,
                train_accuracy: e.train_accuracy,
                validation_accuracy: e.validation_accuracy,
            })
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{run_iteration, EvolutionConfig, RankedEntry, SurrogateFitness};
    use crate::search::SearchLimit;

    fn config() -> EvolutionConfig {
        EvolutionConfig {
            search_limit: SearchLimit::Programs(20_000),
            ..EvolutionConfig::default()
        }
    }

    #[test]
    fn state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = EvolutionState::initial();
        for _ in 0..2 {
            let (next, report) = run_iteration(&state, &config(), &mut SurrogateFitness).unwrap();
            save_iteration(dir.path(), &next, &report).unwrap();
            state = next;
        }
        assert_eq!(iterations(dir.path()).unwrap(), vec![1, 2]);
        assert_eq!(load_latest(dir.path()).unwrap().unwrap(), state);
        let (_, report) = load_iteration(dir.path(), 2).unwrap();
        assert_eq!(report.iteration, 2);
        let files: Vec<PathBuf> = [POPULATION_FILE, LIBRARY_FILE, REPORT_FILE]
            .iter()
            .map(|f| iteration_dir(dir.path(), 2).join(f))
            .collect();
        let reports = validate_files(&files).unwrap();
        for r in reports {
            assert!(r.violations.is_empty(), "{:?}", r);
        }
    }

    #[test]
    fn fresh_directory_has_no_state() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_latest(&dir.path().join("missing")).unwrap(), None);
        assert!(matches!(
            export_stats(dir.path()),
            Err(PersistError::EmptyStateDir(_))
        ));
    }

    #[test]
    fn self_edge_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        fs::write(
            &path,
            r#"{"nodes":[{"id":0,"rank":0},{"id":1,"rank":0}],"edges":[{"id":2,"rank":1,"u":0,"v":1},{"id":3,"rank":2,"u":1,"v":1}]}"#,
        )
        .unwrap();
        let r = validate_files(&[path]).unwrap();
        assert_eq!(r[0].kind, FileKind::Graph);
        assert_eq!(r[0].violations, vec!["self-edge at id 3"]);
    }

    #[test]
    fn oversized_program_is_flagged() {
        let lib = Library::initial();
        let mut text = String::from("add_attached_node");
        for _ in 0..75 {
            text = format!("(compose identity {text})");
        }
        let program = Program::parse(&text, &lib).unwrap();
        assert_eq!(program.size(), 151);
        let entry = PopulationEntryJson {
            graph: GraphJson::from(&evaluate(&program, &lib).unwrap()),
            program: text,
            fitness: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.json");
        write_json(&path, &vec![entry]).unwrap();
        let r = validate_files(&[path]).unwrap();
        assert_eq!(r[0].kind, FileKind::Population);
        assert_eq!(r[0].violations.len(), 1);
        assert!(r[0].violations[0].contains("size limit"));
    }

    fn report(k: usize, ranked: Vec<RankedEntry>) -> IterationReport {
        IterationReport {
            iteration: k,
            population_before: ranked.len(),
            evaluated: ranked.len(),
            selection_applied: false,
            population_after_selection: ranked.len(),
            abstractions: Vec::new(),
            requested: 0,
            search: Default::default(),
            shortenings: 0,
            population_after: ranked.len(),
            ranked,
        }
    }

    #[test]
    fn stats_are_rank_sorted_with_blank_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let ranked = vec![
            RankedEntry {
                rank: 1,
                program: "identity".into(),
                train_accuracy: 0.6,
                validation_accuracy: None,
            },
            RankedEntry {
                rank: 2,
                program: "add_attached_node".into(),
                train_accuracy: 0.8,
                validation_accuracy: Some(0.75),
            },
        ];
        let state = EvolutionState {
            iteration: 1,
            ..EvolutionState::initial()
        };
        save_iteration(dir.path(), &state, &report(1, ranked)).unwrap();
        let csv = export_stats(dir.path()).unwrap();
        assert_eq!(
            csv,
            "iteration,population_size,rank,train_accuracy,validation_accuracy\n\
             1,2,1,0.8,0.75\n\
             1,2,2,0.6,\n"
        );
    }
}
