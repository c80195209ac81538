//! File-backed project store.
//!
//! Layout under the root directory:
//!
//! ```text
//! <project>/ontology.json          optional user types
//! <project>/packs/<id>.json        canonical pack snapshots
//! <project>/journal/<id>.log       append-only edit journal per pack
//! <project>/multipacks/<m>.json
//! <project>/suggestions/<m>.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde_json::Value;
use textflow::fsutil::write_atomic;
use textflow::processors::validate_pack_id;
use textflow::tensorize::EmbeddingConfig;
use textflow::{DataPack, MultiPack, TypeOntology};

use crate::error::StoreError;
use crate::journal::{self, digest, CrashSite, Failpoint, Op, OpOutcome, Record};
use crate::suggest::{suggest_cross_doc_links, Status, Suggestion, SuggestionBook};

fn check_name(name: &str) -> Result<(), StoreError> {
    validate_pack_id(name).map_err(|_| StoreError::InvalidName(name.to_string()))
}

/// Stems of `*.json` files in `dir`, sorted. Temporary files are skipped.
fn json_stems(dir: &Path) -> Result<Vec<String>, StoreError> {
    let mut out = Vec::new();
    let rd = match std::fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    for item in rd {
        let path = item?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if path.extension().is_some_and(|x| x == "json") && !stem.starts_with('.') {
            out.push(stem.to_string());
        }
    }
    out.sort();
    Ok(out)
}

/// The latest durable state of one pack.
#[derive(Debug)]
pub struct Committed {
    pub pack: DataPack,
    pub json: String,
    pub revision: u64,
}

struct PackSlot {
    write: Mutex<()>,
    committed: RwLock<Arc<Committed>>,
    snapshot: PathBuf,
    journal: PathBuf,
}

struct MultiState {
    mp: MultiPack,
    book: SuggestionBook,
    mp_path: PathBuf,
    book_path: PathBuf,
}

/// Parameters of one suggestion request.
#[derive(Debug, Clone)]
pub struct SuggestQuery {
    pub link_type: String,
    pub span_type: String,
    pub threshold: f64,
    pub attributes: BTreeMap<String, Value>,
    pub embedding: EmbeddingConfig,
}

pub struct Project {
    name: String,
    dir: PathBuf,
    ontology: Arc<TypeOntology>,
    packs: RwLock<BTreeMap<String, Arc<PackSlot>>>,
    multipacks: RwLock<BTreeMap<String, Arc<Mutex<MultiState>>>>,
    failpoint: Option<Failpoint>,
}

impl std::fmt::Debug for Project {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Project").field("name", &self.name).finish()
    }
}

impl Project {
    fn open(dir: PathBuf, failpoint: Option<Failpoint>) -> Result<Self, StoreError> {
        let name = dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let mut ont = TypeOntology::with_defaults();
        let ont_path = dir.join("ontology.json");
        if ont_path.exists() {
            ont.load(&std::fs::read_to_string(&ont_path)?)?;
        }
        let ontology = Arc::new(ont);
        for sub in ["packs", "journal", "multipacks", "suggestions"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let mut packs = BTreeMap::new();
        for id in json_stems(&dir.join("packs"))? {
            let snapshot = dir.join("packs").join(format!("{id}.json"));
            let journal = dir.join("journal").join(format!("{id}.log"));
            let r = journal::recover(&snapshot, &journal, ontology.clone())?;
            packs.insert(
                id,
                Arc::new(PackSlot {
                    write: Mutex::new(()),
                    committed: RwLock::new(Arc::new(Committed {
                        pack: r.pack,
                        json: r.json,
                        revision: r.revision,
                    })),
                    snapshot,
                    journal,
                }),
            );
        }
        let mut multipacks = BTreeMap::new();
        for m in json_stems(&dir.join("multipacks"))? {
            let mp_path = dir.join("multipacks").join(format!("{m}.json"));
            let book_path = dir.join("suggestions").join(format!("{m}.json"));
            let mp = MultiPack::from_json(&std::fs::read_to_string(&mp_path)?, ontology.clone())?;
            let book = match std::fs::read_to_string(&book_path) {
                Ok(s) => serde_json::from_str(&s).map_err(|e| StoreError::Corrupt {
                    path: book_path.clone(),
                    detail: e.to_string(),
                })?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => SuggestionBook::default(),
                Err(e) => return Err(e.into()),
            };
            multipacks.insert(
                m,
                Arc::new(Mutex::new(MultiState {
                    mp,
                    book,
                    mp_path,
                    book_path,
                })),
            );
        }
        Ok(Self {
            name,
            dir,
            ontology,
            packs: RwLock::new(packs),
            multipacks: RwLock::new(multipacks),
            failpoint,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ontology(&self) -> &Arc<TypeOntology> {
        &self.ontology
    }

    pub fn pack_ids(&self) -> Vec<String> {
        self.packs.read().keys().cloned().collect()
    }

    fn slot(&self, id: &str) -> Result<Arc<PackSlot>, StoreError> {
        self.packs
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownPack(id.to_string()))
    }

    /// The latest committed state; never blocks on writers.
    pub fn snapshot(&self, id: &str) -> Result<Arc<Committed>, StoreError> {
        Ok(self.slot(id)?.committed.read().clone())
    }

    /// Adds a pack given in the pack JSON format. It is validated against
    /// the project ontology and stored canonically at revision 0.
    pub fn import_pack(&self, source: &str) -> Result<Arc<Committed>, StoreError> {
        let pack = DataPack::from_json(source, self.ontology.clone())?;
        let id = pack.pack_id().to_string();
        check_name(&id)?;
        let mut packs = self.packs.write();
        if packs.contains_key(&id) {
            return Err(StoreError::PackExists(id));
        }
        let snapshot = self.dir.join("packs").join(format!("{id}.json"));
        let journal = self.dir.join("journal").join(format!("{id}.log"));
        let json = pack.to_json();
        journal::reset(&journal)?;
        write_atomic(&snapshot, json.as_bytes())?;
        let committed = Arc::new(Committed {
            pack,
            json,
            revision: 0,
        });
        packs.insert(
            id,
            Arc::new(PackSlot {
                write: Mutex::new(()),
                committed: RwLock::new(committed.clone()),
                snapshot,
                journal,
            }),
        );
        Ok(committed)
    }

    /// Applies `op` if the pack is still at `revision`. The journal record
    /// is durable before the snapshot is replaced.
    pub fn apply(&self, id: &str, revision: u64, op: Op) -> Result<(OpOutcome, Arc<Committed>), StoreError> {
        let slot = self.slot(id)?;
        let _guard = slot.write.lock();
        let cur = slot.committed.read().clone();
        if cur.revision != revision {
            return Err(StoreError::RevisionConflict {
                requested: revision,
                current: cur.revision,
            });
        }
        let mut pack = cur.pack.clone();
        let outcome = op.apply(&mut pack)?;
        let json = pack.to_json();
        let record = Record {
            after: digest(json.as_bytes()),
            before: digest(cur.json.as_bytes()),
            op,
            rev: cur.revision + 1,
        };
        journal::append(&slot.journal, &record, self.failpoint.as_ref())?;
        write_atomic(&slot.snapshot, json.as_bytes())?;
        if self.failpoint.as_ref().is_some_and(|fp| fp(CrashSite::SnapshotWritten)) {
            return Err(StoreError::Crashed);
        }
        let next = Arc::new(Committed {
            pack,
            json,
            revision: record.rev,
        });
        *slot.committed.write() = next.clone();
        Ok((outcome, next))
    }

    pub fn multipack_names(&self) -> Vec<String> {
        self.multipacks.read().keys().cloned().collect()
    }

    fn multi(&self, name: &str) -> Result<Arc<Mutex<MultiState>>, StoreError> {
        self.multipacks
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| StoreError::UnknownMultipack(name.to_string()))
    }

    pub fn import_multipack(&self, source: &str) -> Result<String, StoreError> {
        let mp = MultiPack::from_json(source, self.ontology.clone())?;
        let name = mp.name().to_string();
        check_name(&name)?;
        let mut all = self.multipacks.write();
        if all.contains_key(&name) {
            return Err(StoreError::MultipackExists(name));
        }
        let mp_path = self.dir.join("multipacks").join(format!("{name}.json"));
        let book_path = self.dir.join("suggestions").join(format!("{name}.json"));
        let book = SuggestionBook::default();
        write_atomic(&book_path, serde_json::to_string(&book).expect("book serializes").as_bytes())?;
        write_atomic(&mp_path, mp.to_json().as_bytes())?;
        all.insert(
            name.clone(),
            Arc::new(Mutex::new(MultiState {
                mp,
                book,
                mp_path,
                book_path,
            })),
        );
        Ok(name)
    }

    pub fn multipack_json(&self, name: &str) -> Result<String, StoreError> {
        Ok(self.multi(name)?.lock().mp.to_json())
    }

    /// Regenerates and persists the pending queue for one link type.
    pub fn suggestions(&self, name: &str, q: &SuggestQuery) -> Result<Vec<Suggestion>, StoreError> {
        let m = self.multi(name)?;
        let mut st = m.lock();
        if !self.ontology.is_subtype(&q.link_type, "Link").unwrap_or(false) {
            return Err(StoreError::BadRequest(format!("`{}` is not a link type", q.link_type)));
        }
        let candidates = suggest_cross_doc_links(&st.mp, &q.span_type, q.threshold, &q.embedding)?;
        let queue = st.book.refresh(&q.link_type, &q.attributes, candidates);
        write_atomic(
            &st.book_path,
            serde_json::to_string(&st.book).expect("book serializes").as_bytes(),
        )?;
        Ok(queue)
    }

    /// Accepts (materializing the link) or rejects a pending suggestion.
    pub fn decide(&self, name: &str, sid: u64, accept: bool) -> Result<Suggestion, StoreError> {
        let m = self.multi(name)?;
        let mut guard = m.lock();
        let st = &mut *guard;
        let s = st.book.get(sid).ok_or(StoreError::UnknownSuggestion(sid))?.clone();
        if s.status != Status::Pending {
            return Err(StoreError::AlreadyDecided(sid));
        }
        let mut entry_id = None;
        if accept {
            let mut mp = st.mp.clone();
            let id = mp.add_cross_link(&s.type_name, s.parent.clone(), s.child.clone(), s.attributes.clone())?;
            write_atomic(&st.mp_path, mp.to_json().as_bytes())?;
            st.mp = mp;
            entry_id = Some(id);
        }
        let item = st.book.get_mut(sid).expect("looked up above");
        item.status = if accept { Status::Accepted } else { Status::Rejected };
        item.entry_id = entry_id;
        let decided = item.clone();
        write_atomic(
            &st.book_path,
            serde_json::to_string(&st.book).expect("book serializes").as_bytes(),
        )?;
        Ok(decided)
    }
}

/// All projects under one root directory.
pub struct ProjectStore {
    root: PathBuf,
    projects: RwLock<BTreeMap<String, Arc<Project>>>,
    failpoint: Option<Failpoint>,
}

impl std::fmt::Debug for ProjectStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectStore").field("root", &self.root).finish()
    }
}

impl ProjectStore {
    /// Opens (creating if needed) a store and recovers every pack.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::open_with_failpoint(root, None)
    }

    pub fn open_with_failpoint(root: impl Into<PathBuf>, failpoint: Option<Failpoint>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut projects = BTreeMap::new();
        for item in std::fs::read_dir(&root)? {
            let item = item?;
            let name = item.file_name().to_string_lossy().into_owned();
            if item.file_type()?.is_dir() && check_name(&name).is_ok() {
                projects.insert(name, Arc::new(Project::open(item.path(), failpoint.clone())?));
            }
        }
        Ok(Self {
            root,
            projects: RwLock::new(projects),
            failpoint,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn project_names(&self) -> Vec<String> {
        self.projects.read().keys().cloned().collect()
    }

    pub fn project(&self, name: &str) -> Result<Arc<Project>, StoreError> {
        self.projects
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| StoreError::UnknownProject(name.to_string()))
    }

    /// Creates a project, optionally with an ontology document.
    pub fn create_project(&self, name: &str, ontology: Option<&str>) -> Result<Arc<Project>, StoreError> {
        check_name(name)?;
        let mut all = self.projects.write();
        if all.contains_key(name) {
            return Err(StoreError::ProjectExists(name.to_string()));
        }
        if let Some(src) = ontology {
            TypeOntology::parse(src)?;
        }
        let dir = self.root.join(name);
        std::fs::create_dir_all(&dir)?;
        if let Some(src) = ontology {
            write_atomic(&dir.join("ontology.json"), src.as_bytes())?;
        }
        let project = Arc::new(Project::open(dir, self.failpoint.clone())?);
        all.insert(name.to_string(), project.clone());
        Ok(project)
    }
}
