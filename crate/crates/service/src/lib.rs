//! Annotation service: a file-backed project store with an edit journal,
//! optimistic concurrency and a REST API.

pub mod api;
pub mod error;
pub mod journal;
pub mod store;
pub mod suggest;

pub use api::{router, serve};
pub use error::StoreError;
pub use store::{Committed, Project, ProjectStore, SuggestQuery};
