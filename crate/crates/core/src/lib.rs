//! Stand-off text annotation: an extensible type system, document packs with
//! indexed entries, deterministic analysis processors composed into
//! pipelines, and symbolic/vector retrieval over the results.

pub mod datapack;
pub mod fsutil;
pub mod ontology;
pub mod pipeline;
pub mod processors;
pub mod retrieval;
pub mod tensorize;

pub use datapack::{
    deserialize_pack, serialize_pack, CrossLink, DataPack, Entry, EntryId, EntryUpdate, LinkEnds,
    MultiPack, NewEntry, PackError, PackRef, Span,
};
pub use ontology::{
    parse_ontology, AttrKind, AttributeSpec, OntologyError, Root, TypeOntology, TypeSpec,
    Violation,
};
