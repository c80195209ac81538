//! Documents and their stand-off entries.
//!
//! A [`DataPack`] owns one immutable text and every entry laid over it.
//! Offsets count Unicode scalar values, not bytes. Span entries are kept in a
//! sorted index ordered by `(begin asc, end desc, id asc)`, so containers
//! come before the entries they contain and range queries are a binary
//! search plus a short scan.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ontology::{AttrKind, Root, TypeOntology, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn new(begin: usize, end: usize) -> Self {
        Self { begin, end }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.begin <= other.begin && other.end <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkEnds {
    pub parent: EntryId,
    pub child: EntryId,
}

/// One markup instance. Exactly the structural field matching the type's
/// root is populated.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: EntryId,
    pub type_name: String,
    pub span: Option<Span>,
    pub link: Option<LinkEnds>,
    pub members: Option<Vec<EntryId>>,
    pub attributes: BTreeMap<String, Value>,
    pub embedding: Option<Vec<f32>>,
}

impl Entry {
    pub fn attr(&self, name: &str) -> Option<&Value> {
        self.attributes.get(name)
    }
}

/// Builder for entries not yet stored in a pack.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEntry {
    pub type_name: String,
    pub span: Option<Span>,
    pub link: Option<LinkEnds>,
    pub members: Option<Vec<EntryId>>,
    pub attributes: BTreeMap<String, Value>,
    pub embedding: Option<Vec<f32>>,
}

impl NewEntry {
    pub fn generic(type_name: impl Into<String>) -> Self {
        Self {
            type_name: type_name.into(),
            span: None,
            link: None,
            members: None,
            attributes: BTreeMap::new(),
            embedding: None,
        }
    }

    pub fn span(type_name: impl Into<String>, begin: usize, end: usize) -> Self {
        Self {
            span: Some(Span::new(begin, end)),
            ..Self::generic(type_name)
        }
    }

    pub fn link(type_name: impl Into<String>, parent: EntryId, child: EntryId) -> Self {
        Self {
            link: Some(LinkEnds { parent, child }),
            ..Self::generic(type_name)
        }
    }

    pub fn group(type_name: impl Into<String>, members: Vec<EntryId>) -> Self {
        Self {
            members: Some(members),
            ..Self::generic(type_name)
        }
    }

    pub fn attr(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.attributes.insert(name.into(), value.into());
        self
    }

    pub fn with_embedding(mut self, embedding: Vec<f32>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    fn into_entry(self, id: EntryId) -> Entry {
        Entry {
            id,
            type_name: self.type_name,
            span: self.span,
            link: self.link,
            members: self.members,
            attributes: self.attributes,
            embedding: self.embedding,
        }
    }
}

/// Changes applied by [`DataPack::update_entry`]. An attribute mapped to
/// `None` is removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryUpdate {
    pub span: Option<Span>,
    pub attributes: BTreeMap<String, Option<Value>>,
}

impl EntryUpdate {
    pub fn set(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.attributes.insert(name.into(), Some(value.into()));
        self
    }

    pub fn remove(mut self, name: impl Into<String>) -> Self {
        self.attributes.insert(name.into(), None);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PackError {
    #[error("entry failed validation: {}", join_violations(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("reference to missing entry {0}")]
    DanglingReference(EntryId),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("unknown entry {0}")]
    UnknownEntry(EntryId),
    #[error("entry {0} is not a span")]
    NotASpan(EntryId),
    #[error("type `{0}` is not span-rooted")]
    NotASpanType(String),
    #[error("type `{0}` is not link-rooted")]
    NotALinkType(String),
    #[error("entry is referenced by {}", join_ids(.0))]
    ReferencedEntry(Vec<EntryId>),
    #[error("range {begin}..{end} out of bounds for text of length {len}")]
    OutOfBounds { begin: usize, end: usize, len: usize },
    #[error("malformed pack JSON: {0}")]
    MalformedJson(String),
    #[error("unknown pack alias `{0}`")]
    UnknownAlias(String),
    #[error("pack alias `{0}` already present")]
    DuplicateAlias(String),
}

fn join_violations(vs: &[Violation]) -> String {
    vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn join_ids(ids: &[EntryId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

type SpanKey = (usize, Reverse<usize>, EntryId);

fn span_key(id: EntryId, span: Span) -> SpanKey {
    (span.begin, Reverse(span.end), id)
}

/// One document's text plus its entries.
#[derive(Debug, Clone)]
pub struct DataPack {
    pack_id: String,
    text: String,
    /// Byte offset of every scalar value, plus `text.len()` at the end.
    char_starts: Vec<usize>,
    next_id: u64,
    entries: BTreeMap<EntryId, Entry>,
    span_index: Vec<SpanKey>,
    type_index: BTreeMap<String, BTreeSet<EntryId>>,
    ontology: Arc<TypeOntology>,
}

impl PartialEq for DataPack {
    fn eq(&self, other: &Self) -> bool {
        self.pack_id == other.pack_id
            && self.text == other.text
            && self.next_id == other.next_id
            && self.entries == other.entries
    }
}

impl DataPack {
    pub fn new(pack_id: impl Into<String>, text: impl Into<String>, ontology: Arc<TypeOntology>) -> Self {
        let text = text.into();
        let mut char_starts: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
        char_starts.push(text.len());
        Self {
            pack_id: pack_id.into(),
            text,
            char_starts,
            next_id: 0,
            entries: BTreeMap::new(),
            span_index: Vec::new(),
            type_index: BTreeMap::new(),
            ontology,
        }
    }

    pub fn pack_id(&self) -> &str {
        &self.pack_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Text length in scalar values.
    pub fn text_len(&self) -> usize {
        self.char_starts.len() - 1
    }

    pub fn ontology(&self) -> &Arc<TypeOntology> {
        &self.ontology
    }

    pub fn next_id(&self) -> EntryId {
        EntryId(self.next_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: EntryId) -> Option<&Entry> {
        self.entries.get(&id)
    }

    /// All entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = &Entry> {
        self.entries.values()
    }

    /// Span entry ids in index order.
    pub fn span_order(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.span_index.iter().map(|k| k.2)
    }

    pub fn get_text(&self, begin: usize, end: usize) -> Result<&str, PackError> {
        if begin > end || end > self.text_len() {
            return Err(PackError::OutOfBounds {
                begin,
                end,
                len: self.text_len(),
            });
        }
        Ok(&self.text[self.char_starts[begin]..self.char_starts[end]])
    }

    /// Covered text of a span entry.
    pub fn span_text(&self, id: EntryId) -> Result<&str, PackError> {
        let span = self.span_of(id)?;
        self.get_text(span.begin, span.end)
    }

    fn span_of(&self, id: EntryId) -> Result<Span, PackError> {
        self.entries
            .get(&id)
            .ok_or(PackError::UnknownEntry(id))?
            .span
            .ok_or(PackError::NotASpan(id))
    }

    /// Ids an entry points at: link endpoints, group members and `EntryRef`
    /// attributes.
    fn references(&self, entry: &Entry) -> Vec<EntryId> {
        let mut out = Vec::new();
        if let Some(l) = entry.link {
            out.push(l.parent);
            out.push(l.child);
        }
        if let Some(m) = &entry.members {
            out.extend(m.iter().copied());
        }
        for (name, value) in &entry.attributes {
            if let Some(id) = self.entry_ref_attr(&entry.type_name, name, value) {
                out.push(id);
            }
        }
        out
    }

    fn entry_ref_attr(&self, type_name: &str, attr: &str, value: &Value) -> Option<EntryId> {
        let spec = self.ontology.attribute(type_name, attr)?;
        (spec.kind == AttrKind::EntryRef)
            .then(|| value.as_u64().map(EntryId))
            .flatten()
    }

    /// Full validity check against the ontology, the text bounds and the
    /// current entry set.
    fn check_entry(&self, entry: &Entry) -> Result<(), PackError> {
        let mut violations = match self.ontology.validate_entry(entry) {
            Ok(()) => Vec::new(),
            Err(v) => v,
        };
        if let Some(span) = entry.span {
            if span.end > self.text_len() {
                violations.push(Violation::SpanOutOfBounds {
                    end: span.end,
                    len: self.text_len(),
                });
            }
        }
        if !violations.is_empty() {
            return Err(PackError::ValidationFailed(violations));
        }
        for target in self.references(entry) {
            if target == entry.id || !self.entries.contains_key(&target) {
                return Err(PackError::DanglingReference(target));
            }
        }
        Ok(())
    }

    fn index(&mut self, entry: &Entry) {
        if let Some(span) = entry.span {
            let key = span_key(entry.id, span);
            let pos = self.span_index.partition_point(|k| *k < key);
            self.span_index.insert(pos, key);
        }
        self.type_index
            .entry(entry.type_name.clone())
            .or_default()
            .insert(entry.id);
    }

    fn unindex(&mut self, entry: &Entry) {
        if let Some(span) = entry.span {
            let key = span_key(entry.id, span);
            if let Ok(pos) = self.span_index.binary_search(&key) {
                self.span_index.remove(pos);
            }
        }
        if let Some(ids) = self.type_index.get_mut(&entry.type_name) {
            ids.remove(&entry.id);
            if ids.is_empty() {
                self.type_index.remove(&entry.type_name);
            }
        }
    }

    pub fn add_entry(&mut self, new: NewEntry) -> Result<EntryId, PackError> {
        let id = EntryId(self.next_id);
        let entry = new.into_entry(id);
        self.check_entry(&entry)?;
        self.index(&entry);
        self.entries.insert(id, entry);
        self.next_id += 1;
        Ok(id)
    }

    pub fn update_entry(&mut self, id: EntryId, update: EntryUpdate) -> Result<(), PackError> {
        let old = self.entries.get(&id).ok_or(PackError::UnknownEntry(id))?;
        let mut new = old.clone();
        if let Some(span) = update.span {
            if new.span.is_none() {
                return Err(PackError::NotASpan(id));
            }
            new.span = Some(span);
        }
        for (name, value) in update.attributes {
            match value {
                Some(v) => new.attributes.insert(name, v),
                None => new.attributes.remove(&name),
            };
        }
        self.check_entry(&new)?;
        self.replace(new);
        Ok(())
    }

    pub fn set_embedding(&mut self, id: EntryId, embedding: Option<Vec<f32>>) -> Result<(), PackError> {
        self.entries
            .get_mut(&id)
            .ok_or(PackError::UnknownEntry(id))?
            .embedding = embedding;
        Ok(())
    }

    fn replace(&mut self, new: Entry) {
        let old = self.entries.remove(&new.id).expect("replaced entry exists");
        self.unindex(&old);
        self.index(&new);
        self.entries.insert(new.id, new);
    }

    /// Entries that reference `id`, in id order.
    pub fn referrers(&self, id: EntryId) -> Vec<EntryId> {
        self.entries
            .values()
            .filter(|e| self.references(e).contains(&id))
            .map(|e| e.id)
            .collect()
    }

    /// Deletes an entry. Without `cascade`, fails if anything refers to it.
    /// With `cascade`, links touching a deleted entry are deleted too (
    /// transitively), group memberships are dropped and `EntryRef`
    /// attributes pointing at it are removed. Returns the deleted ids.
    pub fn delete_entry(&mut self, id: EntryId, cascade: bool) -> Result<Vec<EntryId>, PackError> {
        if !self.entries.contains_key(&id) {
            return Err(PackError::UnknownEntry(id));
        }
        let referrers = self.referrers(id);
        if !cascade && !referrers.is_empty() {
            return Err(PackError::ReferencedEntry(referrers));
        }
        let mut removed = Vec::new();
        let mut queue = vec![id];
        while let Some(target) = queue.pop() {
            let Some(entry) = self.entries.remove(&target) else {
                continue;
            };
            self.unindex(&entry);
            removed.push(target);
            for rid in self.referrers(target) {
                let mut referrer = self.entries[&rid].clone();
                if referrer
                    .link
                    .is_some_and(|l| l.parent == target || l.child == target)
                {
                    queue.push(rid);
                    continue;
                }
                if let Some(members) = referrer.members.as_mut() {
                    members.retain(|m| *m != target);
                }
                let type_name = referrer.type_name.clone();
                referrer.attributes.retain(|name, value| {
                    self.entry_ref_attr(&type_name, name, value) != Some(target)
                });
                self.replace(referrer);
            }
        }
        removed.sort();
        Ok(removed)
    }

    fn type_set(&self, type_name: &str, include_subtypes: bool) -> Result<BTreeSet<String>, PackError> {
        if include_subtypes {
            self.ontology
                .subtypes(type_name)
                .map_err(|_| PackError::UnknownType(type_name.to_string()))
        } else if self.ontology.contains(type_name) {
            Ok(BTreeSet::from([type_name.to_string()]))
        } else {
            Err(PackError::UnknownType(type_name.to_string()))
        }
    }

    /// Entries of a type. Span-rooted results come in span order, others in
    /// id order.
    pub fn get_entries(&self, type_name: &str, include_subtypes: bool) -> Result<Vec<&Entry>, PackError> {
        let types = self.type_set(type_name, include_subtypes)?;
        let root = self
            .ontology
            .root_of(type_name)
            .map_err(|_| PackError::UnknownType(type_name.to_string()))?;
        if root == Root::Span {
            return Ok(self
                .span_index
                .iter()
                .map(|k| &self.entries[&k.2])
                .filter(|e| types.contains(&e.type_name))
                .collect());
        }
        let ids: BTreeSet<EntryId> = types
            .iter()
            .filter_map(|t| self.type_index.get(t))
            .flatten()
            .copied()
            .collect();
        Ok(ids.into_iter().map(|id| &self.entries[&id]).collect())
    }

    /// Entries of a type that lie inside a span entry.
    ///
    /// Spans are covered when `container.begin <= begin && end <=
    /// container.end`. Links are covered when both endpoints are covered
    /// spans; groups when every member is a covered span. Generic entries
    /// are never covered.
    pub fn get_covered(
        &self,
        container: EntryId,
        type_name: &str,
        include_subtypes: bool,
    ) -> Result<Vec<&Entry>, PackError> {
        let outer = self.span_of(container)?;
        let types = self.type_set(type_name, include_subtypes)?;
        let root = self
            .ontology
            .root_of(type_name)
            .map_err(|_| PackError::UnknownType(type_name.to_string()))?;
        let inside = |id: &EntryId| {
            self.entries
                .get(id)
                .and_then(|e| e.span)
                .is_some_and(|s| outer.contains(&s))
        };
        Ok(match root {
            Root::Span => {
                let start = self.span_index.partition_point(|k| k.0 < outer.begin);
                self.span_index[start..]
                    .iter()
                    .take_while(|k| k.0 <= outer.end)
                    .filter(|k| k.1 .0 <= outer.end)
                    .map(|k| &self.entries[&k.2])
                    .filter(|e| types.contains(&e.type_name))
                    .collect()
            }
            Root::Link => self
                .get_entries(type_name, include_subtypes)?
                .into_iter()
                .filter(|e| e.link.is_some_and(|l| inside(&l.parent) && inside(&l.child)))
                .collect(),
            Root::Group => self
                .get_entries(type_name, include_subtypes)?
                .into_iter()
                .filter(|e| {
                    e.members
                        .as_ref()
                        .is_some_and(|m| !m.is_empty() && m.iter().all(inside))
                })
                .collect(),
            Root::Generic => Vec::new(),
        })
    }

    /// Canonical JSON: object keys sorted, entries in id order, compact.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("pack JSON is always serializable")
    }

    pub fn from_json(source: &str, ontology: Arc<TypeOntology>) -> Result<Self, PackError> {
        let raw: RawPack =
            serde_json::from_str(source).map_err(|e| PackError::MalformedJson(e.to_string()))?;
        Self::from_raw(raw, ontology)
    }

    fn to_raw(&self) -> RawPack {
        RawPack {
            entries: self.entries.values().map(RawEntry::from).collect(),
            next_id: self.next_id,
            pack_id: self.pack_id.clone(),
            text: self.text.clone(),
        }
    }

    fn from_raw(raw: RawPack, ontology: Arc<TypeOntology>) -> Result<Self, PackError> {
        let mut pack = DataPack::new(raw.pack_id, raw.text, ontology);
        pack.next_id = raw.next_id;
        let mut entries = Vec::with_capacity(raw.entries.len());
        for re in raw.entries {
            let entry = re.into_entry()?;
            if entry.id.0 >= raw.next_id {
                return Err(PackError::MalformedJson(format!(
                    "entry id {} not below next_id {}",
                    entry.id, raw.next_id
                )));
            }
            if pack.entries.insert(entry.id, entry.clone()).is_some() {
                return Err(PackError::MalformedJson(format!("duplicate entry id {}", entry.id)));
            }
            entries.push(entry);
        }
        // References may point forward once attributes were updated, so
        // check against the complete entry set.
        for entry in &entries {
            pack.check_entry(entry)?;
            pack.index(entry);
        }
        Ok(pack)
    }
}

pub fn serialize_pack(pack: &DataPack) -> String {
    pack.to_json()
}

pub fn deserialize_pack(source: &str, ontology: Arc<TypeOntology>) -> Result<DataPack, PackError> {
    DataPack::from_json(source, ontology)
}

// Field order is alphabetical so derived serialization emits sorted keys.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPack {
    entries: Vec<RawEntry>,
    next_id: u64,
    pack_id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(default)]
    attributes: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    begin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    child: Option<EntryId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
    id: EntryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    members: Option<Vec<EntryId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<EntryId>,
    #[serde(rename = "type")]
    type_name: String,
}

impl From<&Entry> for RawEntry {
    fn from(e: &Entry) -> Self {
        RawEntry {
            attributes: e.attributes.clone(),
            begin: e.span.map(|s| s.begin),
            child: e.link.map(|l| l.child),
            embedding: e.embedding.clone(),
            end: e.span.map(|s| s.end),
            id: e.id,
            members: e.members.clone(),
            parent: e.link.map(|l| l.parent),
            type_name: e.type_name.clone(),
        }
    }
}

impl RawEntry {
    fn into_entry(self) -> Result<Entry, PackError> {
        let half = |what: &str| PackError::MalformedJson(format!("entry {}: {what}", self.id));
        let span = match (self.begin, self.end) {
            (Some(begin), Some(end)) => Some(Span { begin, end }),
            (None, None) => None,
            _ => return Err(half("begin and end must appear together")),
        };
        let link = match (self.parent, self.child) {
            (Some(parent), Some(child)) => Some(LinkEnds { parent, child }),
            (None, None) => None,
            _ => return Err(half("parent and child must appear together")),
        };
        Ok(Entry {
            id: self.id,
            type_name: self.type_name,
            span,
            link,
            members: self.members,
            attributes: self.attributes,
            embedding: self.embedding,
        })
    }
}

/// `(pack alias, entry id)`, serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PackRef(pub String, pub EntryId);

impl PackRef {
    pub fn new(alias: impl Into<String>, id: EntryId) -> Self {
        Self(alias.into(), id)
    }

    pub fn alias(&self) -> &str {
        &self.0
    }

    pub fn id(&self) -> EntryId {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossLink {
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
    pub child: PackRef,
    pub id: EntryId,
    pub parent: PackRef,
    #[serde(rename = "type")]
    pub type_name: String,
}

/// Several packs under aliases, plus links whose endpoints live in
/// different packs.
#[derive(Debug, Clone)]
pub struct MultiPack {
    name: String,
    packs: BTreeMap<String, DataPack>,
    cross_links: BTreeMap<EntryId, CrossLink>,
    next_id: u64,
    ontology: Arc<TypeOntology>,
}

impl PartialEq for MultiPack {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.packs == other.packs
            && self.cross_links == other.cross_links
            && self.next_id == other.next_id
    }
}

impl MultiPack {
    pub fn new(name: impl Into<String>, ontology: Arc<TypeOntology>) -> Self {
        Self {
            name: name.into(),
            packs: BTreeMap::new(),
            cross_links: BTreeMap::new(),
            next_id: 0,
            ontology,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ontology(&self) -> &Arc<TypeOntology> {
        &self.ontology
    }

    pub fn add_pack(&mut self, alias: impl Into<String>, pack: DataPack) -> Result<(), PackError> {
        let alias = alias.into();
        if self.packs.contains_key(&alias) {
            return Err(PackError::DuplicateAlias(alias));
        }
        self.packs.insert(alias, pack);
        Ok(())
    }

    pub fn pack(&self, alias: &str) -> Option<&DataPack> {
        self.packs.get(alias)
    }

    /// Packs in alias order.
    pub fn packs(&self) -> impl Iterator<Item = (&str, &DataPack)> {
        self.packs.iter().map(|(a, p)| (a.as_str(), p))
    }

    pub fn cross_links(&self) -> impl Iterator<Item = &CrossLink> {
        self.cross_links.values()
    }

    pub fn cross_link(&self, id: EntryId) -> Option<&CrossLink> {
        self.cross_links.get(&id)
    }

    fn resolve(&self, end: &PackRef) -> Result<(), PackError> {
        let pack = self
            .packs
            .get(end.alias())
            .ok_or_else(|| PackError::UnknownAlias(end.alias().to_string()))?;
        pack.entry(end.id())
            .map(|_| ())
            .ok_or(PackError::DanglingReference(end.id()))
    }

    pub fn add_cross_link(
        &mut self,
        type_name: &str,
        parent: PackRef,
        child: PackRef,
        attributes: BTreeMap<String, Value>,
    ) -> Result<EntryId, PackError> {
        match self.ontology.root_of(type_name) {
            Ok(Root::Link) => {}
            Ok(_) => return Err(PackError::NotALinkType(type_name.to_string())),
            Err(_) => return Err(PackError::UnknownType(type_name.to_string())),
        }
        self.resolve(&parent)?;
        self.resolve(&child)?;
        let id = EntryId(self.next_id);
        // Attribute kinds are checked the same way as for in-pack links;
        // the endpoint ids here are placeholders.
        let probe = Entry {
            id,
            type_name: type_name.to_string(),
            span: None,
            link: Some(LinkEnds {
                parent: parent.id(),
                child: child.id(),
            }),
            members: None,
            attributes: attributes.clone(),
            embedding: None,
        };
        self.ontology
            .validate_entry(&probe)
            .map_err(PackError::ValidationFailed)?;
        self.cross_links.insert(
            id,
            CrossLink {
                attributes,
                child,
                id,
                parent,
                type_name: type_name.to_string(),
            },
        );
        self.next_id += 1;
        Ok(id)
    }

    pub fn to_json(&self) -> String {
        let raw = RawMultiPack {
            cross_links: self.cross_links.values().cloned().collect(),
            name: self.name.clone(),
            next_id: self.next_id,
            packs: self.packs.iter().map(|(a, p)| (a.clone(), p.to_raw())).collect(),
        };
        serde_json::to_string(&raw).expect("multipack JSON is always serializable")
    }

    pub fn from_json(source: &str, ontology: Arc<TypeOntology>) -> Result<Self, PackError> {
        let raw: RawMultiPack =
            serde_json::from_str(source).map_err(|e| PackError::MalformedJson(e.to_string()))?;
        let mut mp = MultiPack::new(raw.name, ontology.clone());
        for (alias, rp) in raw.packs {
            mp.packs.insert(alias, DataPack::from_raw(rp, ontology.clone())?);
        }
        for link in raw.cross_links {
            if link.id.0 >= raw.next_id {
                return Err(PackError::MalformedJson(format!(
                    "cross link id {} not below next_id {}",
                    link.id, raw.next_id
                )));
            }
            if mp.cross_links.contains_key(&link.id) {
                return Err(PackError::MalformedJson(format!("duplicate cross link id {}", link.id)));
            }
            mp.next_id = link.id.0;
            let id = mp.add_cross_link(
                &link.type_name,
                link.parent,
                link.child,
                link.attributes,
            )?;
            debug_assert_eq!(id, link.id);
        }
        mp.next_id = raw.next_id;
        Ok(mp)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMultiPack {
    cross_links: Vec<CrossLink>,
    name: String,
    next_id: u64,
    packs: BTreeMap<String, RawPack>,
}
