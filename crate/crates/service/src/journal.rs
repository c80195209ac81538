//! Append-only edit journal and crash recovery.
//!
//! Every accepted mutation is appended as one JSON line before the pack
//! snapshot is rewritten. Each record carries the SHA-256 of the canonical
//! pack JSON before and after the edit, so recovery can tell whether the
//! snapshot on disk already reflects the last record or still needs it
//! replayed. A torn trailing line (crash mid-append) is truncated away.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use textflow::fsutil::write_atomic;
use textflow::{DataPack, EntryId, EntryUpdate, NewEntry, PackError, Span, TypeOntology};

use crate::error::StoreError;

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Wire form of a new entry: the pack JSON entry shape without an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryBody {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub begin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child: Option<EntryId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<EntryId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<EntryId>,
    #[serde(rename = "type")]
    pub type_name: String,
}

impl EntryBody {
    pub fn to_new_entry(&self) -> Result<NewEntry, StoreError> {
        let mut e = NewEntry::generic(self.type_name.clone());
        e.span = match (self.begin, self.end) {
            (Some(b), Some(en)) => Some(Span::new(b, en)),
            (None, None) => None,
            _ => return Err(StoreError::BadRequest("`begin` and `end` must be given together".into())),
        };
        e.link = match (self.parent, self.child) {
            (Some(parent), Some(child)) => Some(textflow::LinkEnds { parent, child }),
            (None, None) => None,
            _ => return Err(StoreError::BadRequest("`parent` and `child` must be given together".into())),
        };
        e.members = self.members.clone();
        e.attributes = self.attributes.clone();
        e.embedding = self.embedding.clone();
        Ok(e)
    }
}

/// One pack mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    Add {
        entry: EntryBody,
    },
    Update {
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        attributes: BTreeMap<String, Option<Value>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        begin: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        end: Option<usize>,
        id: EntryId,
    },
    Delete {
        cascade: bool,
        id: EntryId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpOutcome {
    Added(EntryId),
    Updated(EntryId),
    Deleted(Vec<EntryId>),
}

impl Op {
    pub fn apply(&self, pack: &mut DataPack) -> Result<OpOutcome, StoreError> {
        match self {
            Op::Add { entry } => Ok(OpOutcome::Added(pack.add_entry(entry.to_new_entry()?)?)),
            Op::Update {
                id,
                begin,
                end,
                attributes,
            } => {
                let span = match (begin, end) {
                    (None, None) => None,
                    _ => {
                        let cur = pack
                            .entry(*id)
                            .ok_or(PackError::UnknownEntry(*id))?
                            .span
                            .ok_or(PackError::NotASpan(*id))?;
                        Some(Span::new(begin.unwrap_or(cur.begin), end.unwrap_or(cur.end)))
                    }
                };
                let update = EntryUpdate {
                    span,
                    attributes: attributes.clone(),
                };
                pack.update_entry(*id, update)?;
                Ok(OpOutcome::Updated(*id))
            }
            Op::Delete { id, cascade } => Ok(OpOutcome::Deleted(pack.delete_entry(*id, *cascade)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub after: String,
    pub before: String,
    pub op: Op,
    pub rev: u64,
}

impl Record {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("records always serialize");
        line.push('\n');
        line
    }
}

/// Where a simulated crash may strike during a mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashSite {
    /// Part of the journal line reached disk.
    TornJournal,
    /// The journal line is complete; the snapshot is still the old one.
    JournalAppended,
    /// Snapshot rewritten; in-memory state not yet updated.
    SnapshotWritten,
}

/// Test hook consulted at each [`CrashSite`]; returning `true` aborts the
/// mutation at that point as if the process had died.
pub type Failpoint = Arc<dyn Fn(CrashSite) -> bool + Send + Sync>;

pub fn append(path: &Path, record: &Record, failpoint: Option<&Failpoint>) -> Result<(), StoreError> {
    let line = record.to_line();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if failpoint.is_some_and(|fp| fp(CrashSite::TornJournal)) {
        f.write_all(&line.as_bytes()[..line.len() / 2])?;
        f.sync_data()?;
        return Err(StoreError::Crashed);
    }
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    if failpoint.is_some_and(|fp| fp(CrashSite::JournalAppended)) {
        return Err(StoreError::Crashed);
    }
    Ok(())
}

/// A recovered pack and its revision (the number of journal records).
#[derive(Debug)]
pub struct Recovered {
    pub pack: DataPack,
    pub json: String,
    pub revision: u64,
    /// True when the last record had to be replayed onto the snapshot.
    pub replayed: bool,
    /// Bytes cut from a torn journal tail.
    pub truncated: usize,
}

/// Loads a snapshot, repairs the journal tail and replays the last record
/// if the snapshot predates it.
pub fn recover(snapshot: &Path, journal: &Path, ontology: Arc<TypeOntology>) -> Result<Recovered, StoreError> {
    let corrupt = |detail: String| StoreError::Corrupt {
        path: journal.to_path_buf(),
        detail,
    };
    let snap_json = std::fs::read_to_string(snapshot)?;
    let mut pack = DataPack::from_json(&snap_json, ontology).map_err(|e| StoreError::Corrupt {
        path: snapshot.to_path_buf(),
        detail: e.to_string(),
    })?;
    let raw = match std::fs::read(journal) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut records: Vec<Record> = Vec::new();
    let mut good_len = 0usize;
    let mut truncated = 0usize;
    let mut rest = &raw[..];
    while !rest.is_empty() {
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            // Unterminated tail: an append that never finished.
            truncated = rest.len();
            break;
        };
        let line = &rest[..nl];
        match serde_json::from_slice::<Record>(line) {
            Ok(r) => {
                if r.rev != records.len() as u64 + 1 {
                    return Err(corrupt(format!("record {} out of sequence", r.rev)));
                }
                records.push(r);
                good_len += nl + 1;
                rest = &rest[nl + 1..];
            }
            Err(_) if rest.len() == nl + 1 => {
                // A complete but garbled final line is also a torn write.
                truncated = rest.len();
                break;
            }
            Err(e) => return Err(corrupt(format!("line {}: {e}", records.len() + 1))),
        }
    }
    if truncated > 0 {
        let f = OpenOptions::new().write(true).open(journal)?;
        f.set_len(good_len as u64)?;
        f.sync_all()?;
    }
    let mut json = snap_json;
    let mut replayed = false;
    if let Some(last) = records.last() {
        let have = digest(json.as_bytes());
        if have == last.after {
            // Snapshot is current.
        } else if have == last.before {
            last.op.apply(&mut pack)?;
            json = pack.to_json();
            if digest(json.as_bytes()) != last.after {
                return Err(corrupt(format!("replay of record {} does not reproduce its digest", last.rev)));
            }
            write_atomic(snapshot, json.as_bytes())?;
            replayed = true;
        } else {
            return Err(corrupt("snapshot matches neither side of the last record".into()));
        }
    }
    Ok(Recovered {
        pack,
        json,
        revision: records.len() as u64,
        replayed,
        truncated,
    })
}

/// Empties (or creates) a journal file.
pub fn reset(path: &Path) -> Result<(), StoreError> {
    let f = File::create(path)?;
    f.sync_all()?;
    Ok(())
}
