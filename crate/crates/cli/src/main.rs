//! `textflow`: ontology validation, workflow runs, indexing and the
//! annotation server behind one binary.
//!
//! Results go to stdout as tab-separated lines; diagnostics go to stderr.
//! Exit codes: 0 success, 1 operational error, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use textflow::pipeline::{assemble, PipelineError, ReaderError, Workflow};
use textflow::processors::{ProcessorConfig, Registry};
use textflow::retrieval::{
    hybrid_search, index_packs, search_symbolic, vector_search, IndexBundle, IndexField, RetrievalError,
};
use textflow::tensorize::{text_embedding, EmbeddingConfig};
use textflow::{DataPack, OntologyError, PackError, TypeOntology};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] textflow_service::StoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Pack { path: PathBuf, source: PackError },
    #[error("{path}: {source}")]
    Ontology { path: PathBuf, source: OntologyError },
    #[error("{0}")]
    Failed(String),
}

#[derive(Parser)]
#[command(name = "textflow", version, about = "Composable text-analysis workflows over stand-off annotated packs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ontology tools.
    #[command(subcommand)]
    Ontology(OntologyCmd),
    /// Run a workflow and write every processed pack to `--out`.
    Run {
        workflow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build or query retrieval indexes.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Serve the annotation REST API until interrupted.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, env = "TEXTFLOW_PORT", default_value_t = 8080)]
        port: u16,
        /// Allowed browser origin; any origin when omitted.
        #[arg(long, env = "TEXTFLOW_CORS_ORIGIN")]
        cors_origin: Option<String>,
    },
}

#[derive(Subcommand)]
enum OntologyCmd {
    /// Check an ontology file; prints "OK: <n> types" or one problem per line.
    Validate { file: PathBuf },
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Index every `*.json` pack in a directory.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `text` for whole packs, or a span type to index its entries.
        #[arg(long, default_value = "text")]
        field: String,
        /// Extra ontology files needed to read the packs.
        #[arg(long)]
        ontology: Vec<PathBuf>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Query an index; prints `<doc_id>\t<score>` lines, best first.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Mode::Symbolic)]
        mode: Mode,
        /// Stage-1 candidates for hybrid mode; defaults to 5k.
        #[arg(long)]
        k_coarse: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Symbolic,
    Vector,
    Hybrid,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn validate_ontology(file: &Path, out: &mut impl Write) -> Result<bool, CliError> {
    let source = read(file)?;
    let base = TypeOntology::with_defaults();
    match base.check(&source) {
        Ok(ont) => {
            let _ = writeln!(out, "OK: {} types", ont.user_types().count());
            eprintln!("note: {} built-in types are always available", base.len());
            Ok(true)
        }
        Err(errors) => {
            for e in errors {
                let _ = writeln!(out, "{e}");
            }
            Ok(false)
        }
    }
}

fn run_workflow(path: &Path, out_dir: &Path, out: &mut impl Write) -> Result<bool, CliError> {
    let mut workflow = Workflow::from_file(path)?;
    if !workflow.processors.iter().any(|p| p.name == "pack_writer") {
        workflow.processors.push(ProcessorConfig::new("pack_writer"));
    }
    let pipeline = assemble(&workflow, &Registry::standard(), Some(out_dir.to_path_buf()))?;
    let source = workflow.open_reader(pipeline.ontology().clone())?;
    let (mut ok, mut failed) = (0usize, 0usize);
    for outcome in pipeline.run(source) {
        let outcome = outcome?;
        match &outcome.result {
            Ok(_) => {
                ok += 1;
                let _ = writeln!(out, "{}\tok", outcome.pack_id);
            }
            Err(f) => {
                failed += 1;
                let _ = writeln!(out, "{}\tfailed", outcome.pack_id);
                eprintln!("{}: {}: {}", outcome.pack_id, f.processor, f.error);
            }
        }
    }
    let _ = writeln!(out, "summary\tok={ok}\tfailed={failed}");
    Ok(failed == 0)
}

fn load_packs(dir: &Path, ontology: Arc<TypeOntology>) -> Result<Vec<DataPack>, CliError> {
    let io = |source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()).map_err(io))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| {
            DataPack::from_json(&read(p)?, ontology.clone()).map_err(|source| CliError::Pack {
                path: p.clone(),
                source,
            })
        })
        .collect()
}

fn build_index(
    input: &Path,
    index: &Path,
    field: &str,
    ontologies: &[PathBuf],
    cfg: EmbeddingConfig,
) -> Result<usize, CliError> {
    if cfg.dim == 0 {
        return Err(CliError::Failed("--dim must be positive".into()));
    }
    let mut ont = TypeOntology::with_defaults();
    for path in ontologies {
        ont.load(&read(path)?).map_err(|source| CliError::Ontology {
            path: path.clone(),
            source,
        })?;
    }
    let packs = load_packs(input, Arc::new(ont))?;
    let field = match field {
        "text" => IndexField::WholeText,
        ty => IndexField::SpanType(ty.to_string()),
    };
    let (inverted, vector) = index_packs(&packs, &field, &cfg)?;
    let docs = inverted.doc_count();
    IndexBundle {
        embedding: cfg,
        inverted,
        vector,
    }
    .save(index)?;
    Ok(docs)
}

fn search(index: &Path, query: &str, k: usize, mode: Mode, k_coarse: Option<usize>, out: &mut impl Write) -> Result<(), CliError> {
    let bundle = IndexBundle::load(index)?;
    let hits = match mode {
        Mode::Symbolic => search_symbolic(&bundle.inverted, query, k)?,
        Mode::Vector => vector_search(&bundle.vector, &text_embedding(query, &bundle.embedding), k)?,
        Mode::Hybrid => hybrid_search(
            &bundle.inverted,
            &bundle.vector,
            query,
            k_coarse.unwrap_or(k.saturating_mul(5)),
            k,
            &bundle.embedding,
        )?,
    };
    for h in hits {
        let _ = writeln!(out, "{}\t{:.6}", h.doc_id, h.score);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Ontology(OntologyCmd::Validate { file }) => validate_ontology(&file, &mut out),
        Command::Run { workflow, out: dir } => run_workflow(&workflow, &dir, &mut out),
        Command::Index(IndexCmd::Build {
            input,
            out: index,
            field,
            ontology,
            dim,
            seed,
        }) => {
            let docs = build_index(&input, &index, &field, &ontology, EmbeddingConfig { dim, seed })?;
            eprintln!("indexed {docs} documents into {}", index.display());
            Ok(true)
        }
        Command::Index(IndexCmd::Search {
            index,
            query,
            k,
            mode,
            k_coarse,
        }) => search(&index, &query, k, mode, k_coarse, &mut out).map(|_| true),
        Command::Serve {
            root,
            port,
            cors_origin,
        } => {
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
                path: root.clone(),
                source,
            })?;
            rt.block_on(textflow_service::serve(root, port, cors_origin))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
