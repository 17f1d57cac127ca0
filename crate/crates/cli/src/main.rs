use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use gssnn_core::compression::compress;
use gssnn_core::dsl::{Library, Program};
use gssnn_core::embedding::{
    graph_map, EmbeddedGraphJson, EmbeddingSpec, PositionScale, ReorderMode,
};
use gssnn_core::evolution::{
    run_iteration, EvolutionConfig, EvolutionState, ExternalFitness, FitnessBackend, FitnessKind,
    SurrogateFitness,
};
use gssnn_core::graph::{FeatureGraph, GraphJson};
use gssnn_core::isomorphism::{isomorphic_featured, isomorphic_structure};
use gssnn_core::persist::{
    self, load_latest, population_to_json, read_json, save_iteration, validate_files, PersistError,
    PopulationEntryJson,
};
use gssnn_core::search::{
    heap_search, infer_unigrams, reweight, Incumbent, SearchBudget, SearchLimit,
};

#[derive(Parser)]
#[command(
    name = "gssnn",
    version,
    about = "Evolve graph-building programs and embed inputs into their graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run evolution iterations, resuming from the latest saved one.
    Evolve(EvolveArgs),
    /// Enumerate novel programs under the population's primitive distribution.
    Search(SearchArgs),
    /// Learn abstractions from a corpus and rewrite it.
    Compress(CompressArgs),
    /// Embed an input vector into a graph's element features.
    EmitEmbedding(EmbedArgs),
    /// Compare two graph files for isomorphism.
    Isocheck(IsoArgs),
    /// Check graph, population and library files.
    Validate(ValidateArgs),
    /// Export per-iteration fitness rankings as CSV.
    StatsCsv(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Fitness {
    Surrogate,
    External,
}

#[derive(clap::Args)]
struct Budget {
    /// Wall-clock search budget.
    #[arg(long, default_value_t = 15)]
    budget_secs: u64,
    /// Stop after enumerating this many programs instead (deterministic).
    #[arg(long, conflicts_with = "budget_secs")]
    budget_programs: Option<usize>,
    #[arg(long, default_value_t = 150)]
    max_size: usize,
}

impl Budget {
    fn limit(&self) -> SearchLimit {
        match self.budget_programs {
            Some(n) => SearchLimit::Programs(n),
            None => SearchLimit::WallClock(Duration::from_secs(self.budget_secs)),
        }
    }
}

#[derive(clap::Args)]
struct EvolveArgs {
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, value_enum, default_value_t = Fitness::Surrogate)]
    fitness: Fitness,
    #[arg(long, default_value = "jobs")]
    jobs_dir: PathBuf,
    /// How long to wait for an external trainer per iteration.
    #[arg(long, default_value_t = 3600)]
    job_timeout_secs: u64,
    #[arg(long, default_value_t = 50)]
    pop_cap: usize,
    #[arg(long, default_value_t = 25)]
    selection_threshold: usize,
    #[command(flatten)]
    budget: Budget,
    #[arg(long, default_value_t = 3)]
    compression_rounds: usize,
    #[arg(long, default_value_t = 2)]
    max_arity: usize,
    /// Input dimension m handed to the trainer.
    #[arg(long, default_value_t = 256)]
    embed_m: usize,
    /// Feature dimension q handed to the trainer.
    #[arg(long, default_value_t = 64)]
    embed_q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "GSSNN_STATE_DIR", default_value = "state")]
    state_dir: PathBuf,
}

#[derive(clap::Args)]
struct SearchArgs {
    #[command(flatten)]
    budget: Budget,
    /// Defaults to 50 minus the population size.
    #[arg(long)]
    max_results: Option<usize>,
    /// Library file; the built-in library if omitted.
    #[arg(long)]
    lib: Option<PathBuf>,
    /// Population file; empty if omitted.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    max_spread: f64,
}

#[derive(clap::Args)]
struct CompressArgs {
    /// A pop.json file or a JSON array of program strings.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    lib: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 2)]
    max_arity: usize,
    /// Write lib.json and the rewritten corpus here instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Literal,
    Normalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reorder {
    Interleaved,
    Simple,
}

#[derive(clap::Args)]
struct EmbedArgs {
    #[arg(long)]
    graph: PathBuf,
    /// JSON array of m numbers, or `zeros`.
    #[arg(long)]
    x: String,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    q: usize,
    #[arg(long, value_enum, default_value_t = Scale::Literal)]
    scale: Scale,
    #[arg(long, value_enum, default_value_t = Reorder::Interleaved)]
    reorder: Reorder,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct IsoArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(clap::Args)]
struct ValidateArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long, env = "GSSNN_STATE_DIR", default_value = "state")]
    state_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An input that broke a format rule; exits with status 1.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let invalid = err.chain().any(|e| {
        e.is::<Invalid>()
            || matches!(
                e.downcast_ref::<PersistError>(),
                Some(PersistError::Invalid { .. } | PersistError::Json { .. })
            )
    });
    if invalid {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evolve(a) => evolve(a),
        Command::Search(a) => search(a),
        Command::Compress(a) => compress_cmd(a),
        Command::EmitEmbedding(a) => emit_embedding(a),
        Command::Isocheck(a) => isocheck(a),
        Command::Validate(a) => validate(a),
        Command::StatsCsv(a) => stats_csv(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn load_graph(path: &Path) -> Result<FeatureGraph> {
    let json: GraphJson = read_json(path)?;
    FeatureGraph::try_from(json).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

fn load_library(path: Option<&Path>) -> Result<Library> {
    match path {
        Some(p) => Ok(persist::load_library(p)?),
        None => Ok(Library::initial()),
    }
}

fn evolve(a: EvolveArgs) -> Result<ExitCode> {
    let config = EvolutionConfig {
        pop_cap: a.pop_cap,
        selection_threshold: a.selection_threshold,
        search_limit: a.budget.limit(),
        max_size: a.budget.max_size,
        compression_rounds: a.compression_rounds,
        max_arity: a.max_arity,
        iterations: a.iterations,
        fitness_backend: match a.fitness {
            Fitness::Surrogate => FitnessKind::Surrogate,
            Fitness::External => FitnessKind::External,
        },
        embed_m: a.embed_m,
        embed_q: a.embed_q,
        seed: a.seed,
        ..EvolutionConfig::default()
    };
    config.validate().map_err(|e| Invalid(e.to_string()))?;
    let mut backend: Box<dyn FitnessBackend> = match config.fitness_backend {
        FitnessKind::Surrogate => Box::new(SurrogateFitness),
        FitnessKind::External => Box::new(ExternalFitness::new(
            &a.jobs_dir,
            Duration::from_secs(a.job_timeout_secs),
        )),
    };
    let mut state = load_latest(&a.state_dir)?.unwrap_or_else(EvolutionState::initial);
    for _ in 0..config.iterations {
        let (next, report) = run_iteration(&state, &config, backend.as_mut())
            .with_context(|| format!("iteration {}", state.iteration + 1))?;
        let dir = save_iteration(&a.state_dir, &next, &report)?;
        println!(
            "iteration {}: evaluated {}, population {} -> {} -> {}, {} abstraction(s), {} novel, {} shortening(s) [{}]",
            report.iteration,
            report.evaluated,
            report.population_before,
            report.population_after_selection,
            report.population_after,
            report.abstractions.len(),
            report.search.novel,
            report.shortenings,
            dir.display()
        );
        state = next;
    }
    Ok(ExitCode::SUCCESS)
}

fn search(a: SearchArgs) -> Result<ExitCode> {
    let lib = load_library(a.lib.as_deref())?;
    let population = match &a.population {
        Some(p) => persist::load_population(p, &lib)?,
        None => Vec::new(),
    };
    let programs: Vec<Program> = population.iter().map(|e| e.program.clone()).collect();
    let model = reweight(&infer_unigrams(&programs, &lib), a.max_spread);
    let budget = SearchBudget {
        limit: a.budget.limit(),
        max_size: a.budget.max_size,
        max_results: a
            .max_results
            .unwrap_or(50usize.saturating_sub(population.len())),
        max_elements: None,
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
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for c in &outcome.found {
        let line = json!({
            "program": c.program.to_sexpr(&lib),
            "logp": c.logp,
            "graph": GraphJson::from(&c.graph),
        });
        writeln!(out, "{line}")?;
    }
    eprintln!(
        "enumerated {}, novel {}, duplicates {}, diverged {}",
        outcome.stats.enumerated,
        outcome.stats.novel,
        outcome.stats.duplicates,
        outcome.stats.diverged
    );
    Ok(ExitCode::SUCCESS)
}

fn compress_cmd(a: CompressArgs) -> Result<ExitCode> {
    let lib = load_library(a.lib.as_deref())?;
    let value: serde_json::Value = read_json(&a.corpus)?;
    let population = if value
        .as_array()
        .is_some_and(|v| v.iter().all(|x| x.is_string()))
    {
        None
    } else {
        let entries: Vec<PopulationEntryJson> = serde_json::from_value(value.clone())
            .map_err(|e| Invalid(format!("{}: {e}", a.corpus.display())))?;
        Some(persist::population_from_json(&entries, &lib, &a.corpus)?)
    };
    let programs: Vec<Program> = match &population {
        Some(p) => p.iter().map(|e| e.program.clone()).collect(),
        None => value
            .as_array()
            .expect("checked above")
            .iter()
            .map(|t| {
                let t = t.as_str().expect("checked above");
                Program::parse(t, &lib).map_err(|e| Invalid(format!("`{t}`: {e}")))
            })
            .collect::<Result<_, _>>()?,
    };
    let out = compress(&programs, &lib, a.rounds, a.max_arity)?;
    let corpus = match population {
        Some(mut p) => {
            for (e, prog) in p.iter_mut().zip(&out.corpus) {
                e.program = prog.clone();
            }
            serde_json::to_value(population_to_json(&p, &out.library))?
        }
        None => json!(out
            .corpus
            .iter()
            .map(|p| p.to_sexpr(&out.library))
            .collect::<Vec<_>>()),
    };
    match a.out_dir {
        Some(dir) => {
            fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
            persist::write_json(&dir.join(persist::LIBRARY_FILE), &out.library.to_json())?;
            persist::write_json(&dir.join(persist::POPULATION_FILE), &corpus)?;
            for ab in &out.abstractions {
                eprintln!("{} = {} (utility {})", ab.name, ab.body, ab.utility);
            }
        }
        None => {
            let doc = json!({
                "abstractions": out.abstractions,
                "lib": out.library.to_json(),
                "corpus": corpus,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn emit_embedding(a: EmbedArgs) -> Result<ExitCode> {
    let graph = load_graph(&a.graph)?;
    let x: Vec<f64> = if a.x == "zeros" {
        vec![0.0; a.m]
    } else {
        read_json(Path::new(&a.x))?
    };
    let spec = EmbeddingSpec::for_graph(&graph, a.m, a.q)
        .map_err(|e| Invalid(e.to_string()))?
        .with_scale(match a.scale {
            Scale::Literal => PositionScale::Literal,
            Scale::Normalized => PositionScale::Normalized,
        })
        .with_reorder(match a.reorder {
            Reorder::Interleaved => ReorderMode::Interleaved,
            Reorder::Simple => ReorderMode::Simple,
        });
    let embedded = graph_map(&graph, &x, &spec).map_err(|e| Invalid(e.to_string()))?;
    let text = serde_json::to_string(&EmbeddedGraphJson::from(&embedded))?;
    match a.out {
        Some(path) => fs::write(&path, text + "\n").with_context(|| path.display().to_string())?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn isocheck(a: IsoArgs) -> Result<ExitCode> {
    let g1 = load_graph(&a.a)?;
    let g2 = load_graph(&a.b)?;
    let doc = json!({
        "structure": isomorphic_structure(&g1, &g2),
        "featured": isomorphic_featured(&g1, &g2),
    });
    println!("{doc}");
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let reports = validate_files(&a.paths)?;
    let mut failed = false;
    for r in &reports {
        if r.violations.is_empty() {
            println!("{}: ok", r.path.display());
        }
        for v in &r.violations {
            failed = true;
            println!("{}: {v}", r.path.display());
        }
    }
    Ok(if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn stats_csv(a: StatsArgs) -> Result<ExitCode> {
    let csv = persist::export_stats(&a.state_dir)?;
    match a.out {
        Some(path) => fs::write(&path, csv).with_context(|| path.display().to_string())?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}
