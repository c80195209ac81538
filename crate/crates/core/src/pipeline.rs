//! Workflow assembly and execution.
//!
//! A [`Workflow`] names ontology files, a reader and an ordered processor
//! list. [`assemble`] builds the processors and checks that every declared
//! requirement is produced by an earlier stage. [`Pipeline::run`] streams
//! packs from a reader through the processors, isolating per-pack failures
//! unless `fail_fast` is set. With `parallelism > 1` distinct packs are
//! processed on a thread pool; results are re-emitted in reader order.

use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use globset::GlobBuilder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::datapack::DataPack;
use crate::ontology::{OntologyError, TypeOntology};
use crate::processors::{
    check_declarations, BuildContext, ConfigError, Processor, ProcessorConfig, Registry,
};

#[derive(Debug, Error)]
pub enum ReaderError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: file is not valid UTF-8")]
    NonUtf8File(PathBuf),
    #[error("line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },
    #[error("duplicate pack id `{0}`")]
    DuplicatePackId(String),
    #[error("invalid glob `{pattern}`: {detail}")]
    BadGlob { pattern: String, detail: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed workflow: {0}")]
    MalformedWorkflow(String),
    #[error("ontology {path}: {source}")]
    Ontology {
        path: PathBuf,
        #[source]
        source: OntologyError,
    },
    #[error("unknown processor `{0}`")]
    UnknownProcessor(String),
    #[error("processor `{processor}` requires `{ty}`, which no earlier stage produces")]
    UnsatisfiedRequirement { processor: String, ty: String },
    #[error("invalid config for `{processor}`: {detail}")]
    InvalidConfig { processor: String, detail: String },
    #[error(transparent)]
    Reader(#[from] ReaderError),
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::UnknownProcessor(n) => PipelineError::UnknownProcessor(n),
            ConfigError::InvalidConfig { processor, detail } => {
                PipelineError::InvalidConfig { processor, detail }
            }
        }
    }
}

/// A stream of packs.
pub type PackSource = Box<dyn Iterator<Item = Result<DataPack, ReaderError>> + Send>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReaderSpec {
    Dir {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        glob: Option<String>,
    },
    Jsonl {
        path: PathBuf,
    },
}

fn default_parallelism() -> usize {
    1
}

/// Declarative pipeline description, as stored in workflow JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workflow {
    #[serde(default)]
    pub ontology: Vec<PathBuf>,
    pub reader: ReaderSpec,
    #[serde(default)]
    pub processors: Vec<ProcessorConfig>,
    #[serde(default)]
    pub fail_fast: bool,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Directory relative paths resolve against; the workflow file's own
    /// directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Workflow {
    pub fn from_json(source: &str, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let mut wf: Workflow =
            serde_json::from_str(source).map_err(|e| PipelineError::MalformedWorkflow(e.to_string()))?;
        if wf.parallelism == 0 {
            return Err(PipelineError::MalformedWorkflow("parallelism must be at least 1".into()));
        }
        wf.base_dir = base_dir.into();
        Ok(wf)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let source = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&source, base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() || self.base_dir.as_os_str().is_empty() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Built-in types extended by each listed file in order.
    pub fn load_ontology(&self) -> Result<Arc<TypeOntology>, PipelineError> {
        let mut ont = TypeOntology::with_defaults();
        for p in &self.ontology {
            let path = self.resolve(p);
            let source = std::fs::read_to_string(&path).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            ont.load(&source)
                .map_err(|source| PipelineError::Ontology { path, source })?;
        }
        Ok(Arc::new(ont))
    }

    pub fn open_reader(&self, ontology: Arc<TypeOntology>) -> Result<PackSource, ReaderError> {
        match &self.reader {
            ReaderSpec::Dir { path, glob } => {
                directory_reader(&self.resolve(path), glob.as_deref().unwrap_or("*.txt"), ontology)
            }
            ReaderSpec::Jsonl { path } => jsonl_reader(&self.resolve(path), ontology),
        }
    }
}

/// Fails the stream at the first repeated pack id.
pub fn unique_ids<I>(inner: I) -> PackSource
where
    I: Iterator<Item = Result<DataPack, ReaderError>> + Send + 'static,
{
    let mut seen = HashSet::new();
    Box::new(inner.map(move |r| {
        let pack = r?;
        if !seen.insert(pack.pack_id().to_string()) {
            return Err(ReaderError::DuplicatePackId(pack.pack_id().to_string()));
        }
        Ok(pack)
    }))
}

/// Packs already in memory.
pub fn memory_reader(packs: Vec<DataPack>) -> PackSource {
    unique_ids(packs.into_iter().map(Ok))
}

/// Files under `root` whose `/`-separated relative path matches `glob`, in
/// lexicographic order of that path. Pack id is the file stem.
pub fn directory_reader(root: &Path, glob: &str, ontology: Arc<TypeOntology>) -> Result<PackSource, ReaderError> {
    let matcher = GlobBuilder::new(glob)
        .literal_separator(true)
        .build()
        .map_err(|e| ReaderError::BadGlob {
            pattern: glob.to_string(),
            detail: e.to_string(),
        })?
        .compile_matcher();
    let meta = std::fs::metadata(root).map_err(|source| ReaderError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    if !meta.is_dir() {
        return Err(ReaderError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        });
    }
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for item in WalkDir::new(root).min_depth(1) {
        let item = item.map_err(|e| ReaderError::Io {
            path: e.path().unwrap_or(root).to_path_buf(),
            source: e.into(),
        })?;
        if !item.file_type().is_file() {
            continue;
        }
        let rel = item
            .path()
            .strip_prefix(root)
            .expect("walk stays under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if matcher.is_match(&rel) {
            files.push((rel, item.into_path()));
        }
    }
    files.sort();
    let iter = files.into_iter().map(move |(_, path)| {
        let bytes = std::fs::read(&path).map_err(|source| ReaderError::Io {
            path: path.clone(),
            source,
        })?;
        let text = String::from_utf8(bytes).map_err(|_| ReaderError::NonUtf8File(path.clone()))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(DataPack::new(id, text, ontology.clone()))
    });
    Ok(unique_ids(iter))
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
}

/// One pack per non-blank line of `{"id": ..., "text": ...}`.
pub fn jsonl_reader(path: &Path, ontology: Arc<TypeOntology>) -> Result<PackSource, ReaderError> {
    let file = File::open(path).map_err(|source| ReaderError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let path = path.to_path_buf();
    let iter = BufReader::new(file)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| {
            let line = match line {
                Ok(l) => l,
                Err(source) => {
                    return Some(Err(ReaderError::Io {
                        path: path.clone(),
                        source,
                    }))
                }
            };
            if line.trim().is_empty() {
                return None;
            }
            Some(
                serde_json::from_str::<JsonlRecord>(&line)
                    .map(|r| DataPack::new(r.id, r.text, ontology.clone()))
                    .map_err(|e| ReaderError::MalformedLine {
                        line: i + 1,
                        detail: e.to_string(),
                    }),
            )
        });
    Ok(unique_ids(iter))
}

/// The processor that failed on a pack, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackFailure {
    pub processor: String,
    pub error: String,
}

#[derive(Debug)]
pub struct PackOutcome {
    pub pack_id: String,
    pub result: Result<DataPack, PackFailure>,
}

impl PackOutcome {
    pub fn is_ok(&self) -> bool {
        self.result.is_ok()
    }
}

/// Assembled, runnable processor chain.
pub struct Pipeline {
    ontology: Arc<TypeOntology>,
    processors: Vec<Box<dyn Processor>>,
    fail_fast: bool,
    parallelism: usize,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("processors", &self.processor_names())
            .field("fail_fast", &self.fail_fast)
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

/// Builds the workflow's processors against its ontology and checks their
/// dependencies. `out_dir` is the default destination for `pack_writer`.
pub fn assemble(workflow: &Workflow, registry: &Registry, out_dir: Option<PathBuf>) -> Result<Pipeline, PipelineError> {
    let ontology = workflow.load_ontology()?;
    let ctx = BuildContext {
        base_dir: workflow.base_dir.clone(),
        out_dir,
        ontology: ontology.clone(),
    };
    let processors = workflow
        .processors
        .iter()
        .map(|cfg| registry.build(cfg, &ctx))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Pipeline::new(ontology, processors)?
        .fail_fast(workflow.fail_fast)
        .parallelism(workflow.parallelism))
}

impl Pipeline {
    /// Checks that each processor's requirements are met by the types
    /// produced before it (a subtype satisfies its ancestors).
    pub fn new(ontology: Arc<TypeOntology>, processors: Vec<Box<dyn Processor>>) -> Result<Self, PipelineError> {
        let mut available: Vec<String> = Vec::new();
        for p in &processors {
            check_declarations(p.as_ref(), &ontology).map_err(|detail| PipelineError::InvalidConfig {
                processor: p.name().to_string(),
                detail,
            })?;
            for req in p.requires() {
                let met = available
                    .iter()
                    .any(|have| ontology.is_subtype(have, &req).unwrap_or(false));
                if !met {
                    return Err(PipelineError::UnsatisfiedRequirement {
                        processor: p.name().to_string(),
                        ty: req,
                    });
                }
            }
            available.extend(p.produces());
        }
        Ok(Self {
            ontology,
            processors,
            fail_fast: false,
            parallelism: 1,
        })
    }

    pub fn fail_fast(mut self, on: bool) -> Self {
        self.fail_fast = on;
        self
    }

    pub fn parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn ontology(&self) -> &Arc<TypeOntology> {
        &self.ontology
    }

    pub fn processor_names(&self) -> Vec<&str> {
        self.processors.iter().map(|p| p.name()).collect()
    }

    /// Runs every processor over one pack, stopping at the first failure.
    pub fn process(&self, mut pack: DataPack) -> PackOutcome {
        let pack_id = pack.pack_id().to_string();
        for p in &self.processors {
            if let Err(e) = p.process(&mut pack) {
                return PackOutcome {
                    pack_id,
                    result: Err(PackFailure {
                        processor: p.name().to_string(),
                        error: e.to_string(),
                    }),
                };
            }
        }
        PackOutcome {
            pack_id,
            result: Ok(pack),
        }
    }

    /// Streams processed packs in reader order. A reader error is yielded
    /// once and ends the stream.
    pub fn run(&self, source: PackSource) -> Run<'_> {
        let pool = (self.parallelism > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.parallelism)
                .build()
                .expect("thread pool")
        });
        Run {
            pipeline: self,
            source,
            pool,
            ready: VecDeque::new(),
            pending_error: None,
            done: false,
        }
    }
}

/// Iterator returned by [`Pipeline::run`].
pub struct Run<'a> {
    pipeline: &'a Pipeline,
    source: PackSource,
    pool: Option<rayon::ThreadPool>,
    ready: VecDeque<PackOutcome>,
    pending_error: Option<ReaderError>,
    done: bool,
}

impl Run<'_> {
    fn fill(&mut self) {
        let window = self.pipeline.parallelism * 4;
        let mut batch = Vec::new();
        while batch.len() < window {
            match self.source.next() {
                Some(Ok(p)) => batch.push(p),
                Some(Err(e)) => {
                    self.pending_error = Some(e);
                    break;
                }
                None => break,
            }
            if self.pool.is_none() {
                break;
            }
        }
        if batch.is_empty() && self.pending_error.is_none() {
            self.done = true;
            return;
        }
        let outcomes: Vec<PackOutcome> = match &self.pool {
            Some(pool) => pool.install(|| batch.into_par_iter().map(|p| self.pipeline.process(p)).collect()),
            None => batch.into_iter().map(|p| self.pipeline.process(p)).collect(),
        };
        self.ready.extend(outcomes);
    }
}

impl Iterator for Run<'_> {
    type Item = Result<PackOutcome, ReaderError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(outcome) = self.ready.pop_front() {
                if self.pipeline.fail_fast && !outcome.is_ok() {
                    self.ready.clear();
                    self.done = true;
                    self.pending_error = None;
                }
                return Some(Ok(outcome));
            }
            if let Some(e) = self.pending_error.take() {
                self.done = true;
                return Some(Err(e));
            }
            if self.done {
                return None;
            }
            self.fill();
        }
    }
}
