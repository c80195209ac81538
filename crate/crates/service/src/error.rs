use std::path::PathBuf;

use textflow::{OntologyError, PackError};
use thiserror::Error;

use crate::suggest::SuggestError;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown project `{0}`")]
    UnknownProject(String),
    #[error("unknown pack `{0}`")]
    UnknownPack(String),
    #[error("unknown multipack `{0}`")]
    UnknownMultipack(String),
    #[error("unknown suggestion {0}")]
    UnknownSuggestion(u64),
    #[error("project `{0}` already exists")]
    ProjectExists(String),
    #[error("pack `{0}` already exists")]
    PackExists(String),
    #[error("multipack `{0}` already exists")]
    MultipackExists(String),
    #[error("revision conflict: request is based on {requested}, pack is at {current}")]
    RevisionConflict { requested: u64, current: u64 },
    #[error("suggestion {0} has already been decided")]
    AlreadyDecided(u64),
    #[error("{0}")]
    BadRequest(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Suggest(#[from] SuggestError),
    #[error("{path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("simulated crash")]
    Crashed,
}
