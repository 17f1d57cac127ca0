//! The evolutionary loop: evaluate, select, compress, reweight, search.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compression::{compress, Abstraction};
use crate::dsl::{DslError, Library, Program, MAX_PROGRAM_SIZE};
use crate::embedding::{EmbeddingError, EmbeddingSpec};
use crate::graph::{FeatureGraph, GraphJson};
use crate::search::{
    heap_search, infer_unigrams, reweight, Incumbent, SearchBudget, SearchLimit, SearchStats,
    DEFAULT_MAX_SPREAD,
};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("entry {0} has no fitness")]
    MissingFitness(usize),
    #[error("fitness backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub train_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
    pub evaluator_id: String,
}

impl FitnessRecord {
    fn check(&self) -> Result<(), String> {
        let ok = |a: f64| (0.0..=1.0).contains(&a);
        if !ok(self.train_accuracy) || !self.validation_accuracy.is_none_or(ok) {
            return Err(format!(
                "accuracy out of range: train {}, validation {:?}",
                self.train_accuracy, self.validation_accuracy
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationEntry {
    pub program: Program,
    pub graph: FeatureGraph,
    pub fitness: Option<FitnessRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heuristic {
    #[default]
    #[serde(rename = "rank-LTP-50")]
    RankLtp50,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessKind {
    #[default]
    Surrogate,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub pop_cap: usize,
    pub selection_threshold: usize,
    pub heuristic: Heuristic,
    pub search_limit: SearchLimit,
    pub max_size: usize,
    pub compression_rounds: usize,
    pub max_arity: usize,
    pub max_spread: f64,
    pub iterations: usize,
    pub fitness_backend: FitnessKind,
    /// Input dimension handed to the trainer; graphs with more elements than
    /// this are never admitted.
    pub embed_m: usize,
    pub embed_q: usize,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            pop_cap: 50,
            selection_threshold: 25,
            heuristic: Heuristic::RankLtp50,
            search_limit: SearchLimit::WallClock(Duration::from_secs(15)),
            max_size: MAX_PROGRAM_SIZE,
            compression_rounds: 3,
            max_arity: 2,
            max_spread: DEFAULT_MAX_SPREAD,
            iterations: 5,
            fitness_backend: FitnessKind::Surrogate,
            embed_m: 256,
            embed_q: 64,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: String| Err(EvolutionError::InvalidConfig(m));
        if self.selection_threshold == 0 || self.pop_cap < self.selection_threshold {
            return bad(format!(
                "need pop_cap >= selection_threshold >= 1, got {} and {}",
                self.pop_cap, self.selection_threshold
            ));
        }
        if self.max_size == 0 || self.max_size > MAX_PROGRAM_SIZE {
            return bad(format!("max_size must be in 1..={MAX_PROGRAM_SIZE}"));
        }
        if !(self.max_spread > 0.0 && self.max_spread.is_finite()) {
            return bad("max_spread must be positive".into());
        }
        // the smallest graph has d* = 1; larger ones are filtered by size
        EmbeddingSpec::new(self.embed_m, self.embed_q, 1, 1)?;
        Ok(())
    }
}

/// Derives an independent 64-bit seed for a named use of the run seed.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(stream.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Stable identifier of a graph: featured-isomorphic graphs share it.
pub fn graph_digest(g: &FeatureGraph) -> String {
    // Element ids pin the mapping between featured-isomorphic graphs, so the
    // id-sorted wire form is already canonical.
    let text = serde_json::to_string(&GraphJson::from(g)).expect("graph serializes");
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// What a fitness backend is asked to score.
#[derive(Clone, Debug, PartialEq)]
pub struct FitnessJob {
    pub id: String,
    pub graph: FeatureGraph,
    pub spec: EmbeddingSpec,
    pub seed: u64,
}

pub trait FitnessBackend {
    /// Scores every job, in order. An error leaves no partial results.
    fn evaluate(&mut self, jobs: &[FitnessJob]) -> Result<Vec<FitnessRecord>, EvolutionError>;
}

/// Deterministic stand-in for training: a hash of the graph and seed mapped
/// into `[0.5, 1.0)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SurrogateFitness;

fn unit(bytes: &[u8]) -> f64 {
    let bits = u64::from_le_bytes(bytes.try_into().expect("8 bytes"));
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

impl SurrogateFitness {
    pub fn score(job: &FitnessJob) -> FitnessRecord {
        let text = serde_json::to_string(&GraphJson::from(&job.graph)).expect("graph serializes");
        let digest = Sha256::new()
            .chain_update(job.seed.to_le_bytes())
            .chain_update(text.as_bytes())
            .finalize();
        FitnessRecord {
            train_accuracy: 0.5 + 0.5 * unit(&digest[..8]),
            validation_accuracy: Some(0.5 + 0.5 * unit(&digest[8..16])),
            evaluator_id: "surrogate".into(),
        }
    }
}

impl FitnessBackend for SurrogateFitness {
    fn evaluate(&mut self, jobs: &[FitnessJob]) -> Result<Vec<FitnessRecord>, EvolutionError> {
        Ok(jobs.iter().map(Self::score).collect())
    }
}

#[derive(Serialize, Deserialize)]
pub struct JobFile {
    pub graph: GraphJson,
    pub spec: EmbeddingSpec,
    pub seed: u64,
}

/// Hands jobs to an external trainer through `jobs/<id>/job.json` and waits
/// for `jobs/<id>/fitness.json`.
#[derive(Clone, Debug)]
pub struct ExternalFitness {
    pub jobs_dir: PathBuf,
    pub timeout: Duration,
    pub poll_interval: Duration,
}

impl ExternalFitness {
    pub fn new(jobs_dir: impl Into<PathBuf>, timeout: Duration) -> Self {
        ExternalFitness {
            jobs_dir: jobs_dir.into(),
            timeout,
            poll_interval: Duration::from_millis(200),
        }
    }

    fn write_job(&self, job: &FitnessJob) -> Result<(), EvolutionError> {
        let dir = self.jobs_dir.join(&job.id);
        let io = |e: std::io::Error| EvolutionError::Backend(format!("{}: {e}", dir.display()));
        fs::create_dir_all(&dir).map_err(io)?;
        let file = JobFile {
            graph: GraphJson::from(&job.graph),
            spec: job.spec,
            seed: job.seed,
        };
        let text = serde_json::to_string_pretty(&file).expect("job serializes");
        write_atomic(&dir.join("job.json"), text.as_bytes()).map_err(io)
    }

    fn read_result(&self, id: &str) -> Result<Option<FitnessRecord>, EvolutionError> {
        let dir = self.jobs_dir.join(id);
        if let Ok(msg) = fs::read_to_string(dir.join("error.json")) {
            return Err(EvolutionError::Backend(format!(
                "job {id} failed: {}",
                msg.trim()
            )));
        }
        let path = dir.join("fitness.json");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(EvolutionError::Backend(format!("{}: {e}", path.display()))),
        };
        let record: FitnessRecord = serde_json::from_str(&text)
            .map_err(|e| EvolutionError::Backend(format!("{}: {e}", path.display())))?;
        record
            .check()
            .map_err(|e| EvolutionError::Backend(format!("{}: {e}", path.display())))?;
        Ok(Some(record))
    }
}

impl FitnessBackend for ExternalFitness {
    fn evaluate(&mut self, jobs: &[FitnessJob]) -> Result<Vec<FitnessRecord>, EvolutionError> {
        for job in jobs {
            if self.read_result(&job.id)?.is_none() {
                self.write_job(job)?;
            }
        }
        let start = Instant::now();
        let mut results: Vec<Option<FitnessRecord>> = vec![None; jobs.len()];
        loop {
            for (slot, job) in results.iter_mut().zip(jobs) {
                if slot.is_none() {
                    *slot = self.read_result(&job.id)?;
                }
            }
            if results.iter().all(Option::is_some) {
                return Ok(results.into_iter().map(Option::unwrap).collect());
            }
            if start.elapsed() >= self.timeout {
                let pending = results.iter().filter(|r| r.is_none()).count();
                return Err(EvolutionError::Backend(format!(
                    "{pending} job(s) unfinished after {:?}",
                    self.timeout
                )));
            }
            std::thread::sleep(self.poll_interval);
        }
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Sorts entries best first: train accuracy descending, then smaller
/// program, then printed program.
pub fn rank_order(entries: &mut [PopulationEntry], lib: &Library) -> Result<(), EvolutionError> {
    if let Some(i) = entries.iter().position(|e| e.fitness.is_none()) {
        return Err(EvolutionError::MissingFitness(i));
    }
    let mut keyed: Vec<(f64, usize, String, usize)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let acc = e.fitness.as_ref().expect("checked above").train_accuracy;
            (acc, e.program.size(), e.program.to_sexpr(lib), i)
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let sorted: Vec<PopulationEntry> = keyed.iter().map(|k| entries[k.3].clone()).collect();
    entries.clone_from_slice(&sorted);
    Ok(())
}

/// Keeps the top `ceil(n/2)` entries by rank, in rank order.
pub fn select_rank_ltp_50(
    entries: &[PopulationEntry],
    lib: &Library,
) -> Result<Vec<PopulationEntry>, EvolutionError> {
    let mut ranked = entries.to_vec();
    rank_order(&mut ranked, lib)?;
    ranked.truncate(entries.len() - entries.len() / 2);
    Ok(ranked)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionState {
    /// Number of completed iterations.
    pub iteration: usize,
    pub library: Library,
    pub population: Vec<PopulationEntry>,
}

impl EvolutionState {
    pub fn initial() -> Self {
        EvolutionState {
            iteration: 0,
            library: Library::initial(),
            population: Vec::new(),
        }
    }
}

/// One evaluated entry as it stood when selection ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub program: String,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub population_before: usize,
    pub evaluated: usize,
    pub selection_applied: bool,
    pub population_after_selection: usize,
    pub abstractions: Vec<Abstraction>,
    pub requested: usize,
    pub search: SearchStats,
    pub shortenings: usize,
    pub population_after: usize,
    /// The evaluated population in rank order.
    pub ranked: Vec<RankedEntry>,
}

fn job_for(
    entry: &PopulationEntry,
    config: &EvolutionConfig,
) -> Result<FitnessJob, EvolutionError> {
    let id = graph_digest(&entry.graph);
    Ok(FitnessJob {
        seed: derive_seed(config.seed, &format!("fitness/{id}")),
        spec: EmbeddingSpec::for_graph(&entry.graph, config.embed_m, config.embed_q)?,
        graph: entry.graph.clone(),
        id,
    })
}

/// Runs one iteration. `state` is left untouched; on error nothing is
/// returned.
pub fn run_iteration(
    state: &EvolutionState,
    config: &EvolutionConfig,
    backend: &mut dyn FitnessBackend,
) -> Result<(EvolutionState, IterationReport), EvolutionError> {
    config.validate()?;
    let mut lib = state.library.clone();
    let mut population = state.population.clone();
    let population_before = population.len();

    // (1) fitness
    let pending: Vec<usize> = (0..population.len())
        .filter(|&i| population[i].fitness.is_none())
        .collect();
    let jobs = pending
        .iter()
        .map(|&i| job_for(&population[i], config))
        .collect::<Result<Vec<_>, _>>()?;
    let records = backend.evaluate(&jobs)?;
    if records.len() != jobs.len() {
        return Err(EvolutionError::Backend(format!(
            "{} records for {} jobs",
            records.len(),
            jobs.len()
        )));
    }
    for (&i, record) in pending.iter().zip(records) {
        record.check().map_err(EvolutionError::Backend)?;
        population[i].fitness = Some(record);
    }
    rank_order(&mut population, &lib)?;
    let ranked = population
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let f = e.fitness.as_ref().expect("evaluated");
            RankedEntry {
                rank: i + 1,
                program: e.program.to_sexpr(&lib),
                train_accuracy: f.train_accuracy,
                validation_accuracy: f.validation_accuracy,
            }
        })
        .collect();

    // (2) selection
    let selection_applied = population.len() >= config.selection_threshold;
    if selection_applied {
        population = select_rank_ltp_50(&population, &lib)?;
    }
    let population_after_selection = population.len();

    // (3) compression
    let corpus: Vec<Program> = population.iter().map(|e| e.program.clone()).collect();
    let compressed = compress(&corpus, &lib, config.compression_rounds, config.max_arity)?;
    lib = compressed.library;
    for (entry, program) in population.iter_mut().zip(compressed.corpus) {
        entry.program = program;
    }

    // (4) distribution
    let corpus: Vec<Program> = population.iter().map(|e| e.program.clone()).collect();
    let model = reweight(&infer_unigrams(&corpus, &lib), config.max_spread);
    lib.set_logp(model.logp.clone())?;

    // (5) search
    let requested = config.pop_cap.saturating_sub(population.len());
    let budget = SearchBudget {
        limit: config.search_limit,
        max_size: config.max_size,
        max_results: requested,
        max_elements: Some(config.embed_m),
    };
    let seen: Vec<FeatureGraph> = population.iter().map(|e| e.graph.clone()).collect();
    let incumbents: Vec<Incumbent> = population
        .iter()
        .map(|e| Incumbent {
            program: &e.program,
            graph: &e.graph,
        })
        .collect();
    let outcome = heap_search(&model, &lib, &budget, &seen, &incumbents);
    drop(incumbents);
    for s in &outcome.shortenings {
        population[s.incumbent].program = s.program.clone();
    }

    // (6) append
    population.extend(outcome.found.into_iter().map(|c| PopulationEntry {
        program: c.program,
        graph: c.graph,
        fitness: None,
    }));

    let report = IterationReport {
        iteration: state.iteration + 1,
        population_before,
        evaluated: pending.len(),
        selection_applied,
        population_after_selection,
        abstractions: compressed.abstractions,
        requested,
        search: outcome.stats,
        shortenings: outcome.shortenings.len(),
        population_after: population.len(),
        ranked,
    };
    let next = EvolutionState {
        iteration: state.iteration + 1,
        library: lib,
        population,
    };
    Ok((next, report))
}
