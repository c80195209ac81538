//! Annotation type system.
//!
//! Every type descends from one of four roots: `Generic`, `Span`, `Link` and
//! `Group`. The roots fix the structural fields of an entry (offsets, link
//! endpoints, group members); descendants only add typed attributes. User
//! types are declared in JSON files of the form
//!
//! ```json
//! {"types": [{"name": "ft.Dependency", "parent": "Link",
//!             "attributes": [{"name": "dep_type", "type": "Str"}]}]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datapack::Entry;

/// The closed set of attribute kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttrKind {
    Int,
    Float,
    Str,
    Bool,
    StrList,
    FloatList,
    EntryRef,
}

impl AttrKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttrKind::Int => "Int",
            AttrKind::Float => "Float",
            AttrKind::Str => "Str",
            AttrKind::Bool => "Bool",
            AttrKind::StrList => "StrList",
            AttrKind::FloatList => "FloatList",
            AttrKind::EntryRef => "EntryRef",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Int" => AttrKind::Int,
            "Float" => AttrKind::Float,
            "Str" => AttrKind::Str,
            "Bool" => AttrKind::Bool,
            "StrList" => AttrKind::StrList,
            "FloatList" => AttrKind::FloatList,
            "EntryRef" => AttrKind::EntryRef,
            _ => return None,
        })
    }

    /// Whether a JSON value is a well-typed instance of this kind.
    ///
    /// `Float` accepts integral numbers as well; `EntryRef` must be a
    /// non-negative integer (target existence is checked by the pack).
    pub fn accepts(self, value: &Value) -> bool {
        match self {
            AttrKind::Int => value.is_i64() || value.is_u64(),
            AttrKind::Float => value.is_number(),
            AttrKind::Str => value.is_string(),
            AttrKind::Bool => value.is_boolean(),
            AttrKind::StrList => value
                .as_array()
                .is_some_and(|xs| xs.iter().all(Value::is_string)),
            AttrKind::FloatList => value
                .as_array()
                .is_some_and(|xs| xs.iter().all(Value::is_number)),
            AttrKind::EntryRef => value.is_u64(),
        }
    }
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Short name of a JSON value's shape, for error messages.
fn json_kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "Bool",
        Value::Number(n) if n.is_f64() => "Float",
        Value::Number(_) => "Int",
        Value::String(_) => "Str",
        Value::Array(_) => "List",
        Value::Object(_) => "Object",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Root {
    Generic,
    Span,
    Link,
    Group,
}

impl Root {
    pub const ALL: [Root; 4] = [Root::Generic, Root::Span, Root::Link, Root::Group];

    pub fn name(self) -> &'static str {
        match self {
            Root::Generic => "Generic",
            Root::Span => "Span",
            Root::Link => "Link",
            Root::Group => "Group",
        }
    }

    /// Structural fields an entry of this root carries, with their kinds.
    pub fn template_fields(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Root::Generic => &[],
            Root::Span => &[("begin", "Int"), ("end", "Int")],
            Root::Link => &[("parent", "EntryRef"), ("child", "EntryRef")],
            Root::Group => &[("members", "List[EntryRef]")],
        }
    }
}

/// Names reserved for structural fields; attributes may not shadow them.
const TEMPLATE_FIELD_NAMES: [&str; 7] =
    ["id", "type", "begin", "end", "parent", "child", "members"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: AttrKind,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, kind: AttrKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// A declared type. Roots have no parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSpec {
    pub name: String,
    pub parent: Option<String>,
    pub attributes: Vec<AttributeSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OntologyError {
    #[error("malformed ontology JSON: {0}")]
    MalformedJson(String),
    #[error("type `{ty}` has unknown parent `{parent}`")]
    UnknownParent { ty: String, parent: String },
    #[error("inheritance cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("type `{ty}` declares attribute `{attr}` more than once or shadows an inherited field")]
    DuplicateAttribute { ty: String, attr: String },
    #[error("type `{0}` redefines a built-in or previously loaded type")]
    ReservedName(String),
    #[error("type `{0}` is declared more than once")]
    DuplicateType(String),
    #[error("invalid identifier `{0}`")]
    InvalidName(String),
    #[error("unknown attribute type `{kind}` on `{ty}.{attr}`")]
    UnknownAttrKind {
        ty: String,
        attr: String,
        kind: String,
    },
    #[error("unknown type `{0}`")]
    UnknownType(String),
}

/// A single reason an entry does not conform to its type.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is not allowed for this type's root")]
    UnexpectedField(&'static str),
    #[error("inverted span: begin {begin} > end {end}")]
    InvertedSpan { begin: usize, end: usize },
    #[error("span end {end} exceeds text length {len}")]
    SpanOutOfBounds { end: usize, len: usize },
    #[error("undeclared attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute `{name}` expects {expected}, found {found}")]
    AttributeKindMismatch {
        name: String,
        expected: AttrKind,
        found: &'static str,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyFile {
    types: Vec<RawType>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawType {
    name: String,
    parent: String,
    #[serde(default)]
    attributes: Vec<RawAttribute>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttribute {
    name: String,
    #[serde(rename = "type")]
    kind: String,
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_qualified_name(s: &str) -> bool {
    s.split('.').all(is_identifier)
}

/// Registry of annotation types.
///
/// Immutable once built; share it behind an `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeOntology {
    types: BTreeMap<String, TypeSpec>,
    /// Types added from ontology files, in load order.
    user_types: Vec<String>,
    /// Memoized root per type.
    roots: HashMap<String, Root>,
}

impl Default for TypeOntology {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl TypeOntology {
    /// The four roots plus the bundled standard library.
    pub fn with_defaults() -> Self {
        use AttrKind::*;
        let mut ont = TypeOntology {
            types: BTreeMap::new(),
            user_types: Vec::new(),
            roots: HashMap::new(),
        };
        for root in Root::ALL {
            ont.types.insert(
                root.name().to_string(),
                TypeSpec {
                    name: root.name().to_string(),
                    parent: None,
                    attributes: Vec::new(),
                },
            );
            ont.roots.insert(root.name().to_string(), root);
        }
        let std_types: [(&str, Root, &[(&str, AttrKind)]); 10] = [
            ("Token", Root::Span, &[("pos", Str), ("lemma", Str)]),
            ("Sentence", Root::Span, &[("sentiment", Float)]),
            ("Document", Root::Span, &[]),
            ("EntityMention", Root::Span, &[("ner_type", Str)]),
            ("PredicateMention", Root::Span, &[]),
            ("EventMention", Root::Span, &[("event_type", Str)]),
            ("Utterance", Root::Span, &[("speaker", Str)]),
            ("Relation", Root::Link, &[("rel_type", Str)]),
            ("Dependency", Root::Link, &[("dep_type", Str)]),
            ("CrossDocLink", Root::Link, &[("rel_type", Str)]),
        ];
        for (name, root, attrs) in std_types {
            ont.types.insert(
                name.to_string(),
                TypeSpec {
                    name: name.to_string(),
                    parent: Some(root.name().to_string()),
                    attributes: attrs
                        .iter()
                        .map(|(n, k)| AttributeSpec::new(*n, *k))
                        .collect(),
                },
            );
            ont.roots.insert(name.to_string(), root);
        }
        ont
    }

    /// Whether a name belongs to a root or the standard library.
    pub fn is_builtin(&self, name: &str) -> bool {
        self.types.contains_key(name) && !self.user_types.iter().any(|t| t == name)
    }

    /// Parses one ontology document on top of the defaults.
    pub fn parse(source: &str) -> Result<Self, OntologyError> {
        let mut ont = Self::with_defaults();
        ont.load(source)?;
        Ok(ont)
    }

    /// Extends this ontology with another file. The whole document is
    /// rejected (and `self` left untouched) if any type in it is invalid.
    pub fn load(&mut self, source: &str) -> Result<(), OntologyError> {
        match self.check(source) {
            Ok(extended) => {
                *self = extended;
                Ok(())
            }
            Err(mut errors) => Err(errors.remove(0)),
        }
    }

    /// Like [`TypeOntology::load`] but reports every problem found.
    pub fn check(&self, source: &str) -> Result<TypeOntology, Vec<OntologyError>> {
        let file: OntologyFile = serde_json::from_str(source)
            .map_err(|e| vec![OntologyError::MalformedJson(e.to_string())])?;
        let mut errors = Vec::new();

        // Pass 1: names and attribute kinds.
        let mut local: BTreeMap<String, &RawType> = BTreeMap::new();
        for raw in &file.types {
            if !is_qualified_name(&raw.name) {
                errors.push(OntologyError::InvalidName(raw.name.clone()));
                continue;
            }
            if self.types.contains_key(&raw.name) {
                errors.push(OntologyError::ReservedName(raw.name.clone()));
                continue;
            }
            if local.insert(raw.name.clone(), raw).is_some() {
                errors.push(OntologyError::DuplicateType(raw.name.clone()));
            }
        }
        let mut specs: BTreeMap<String, TypeSpec> = BTreeMap::new();
        for (name, raw) in &local {
            let mut attributes = Vec::new();
            for attr in &raw.attributes {
                if !is_identifier(&attr.name) {
                    errors.push(OntologyError::InvalidName(format!("{name}.{}", attr.name)));
                    continue;
                }
                match AttrKind::parse(&attr.kind) {
                    Some(kind) => attributes.push(AttributeSpec::new(attr.name.clone(), kind)),
                    None => errors.push(OntologyError::UnknownAttrKind {
                        ty: name.clone(),
                        attr: attr.name.clone(),
                        kind: attr.kind.clone(),
                    }),
                }
            }
            let parent = match self.resolve_reference(&raw.parent, &local) {
                Some(p) => p,
                None => {
                    errors.push(OntologyError::UnknownParent {
                        ty: name.clone(),
                        parent: raw.parent.clone(),
                    });
                    continue;
                }
            };
            specs.insert(
                name.clone(),
                TypeSpec {
                    name: name.clone(),
                    parent: Some(parent),
                    attributes,
                },
            );
        }

        // Pass 2: cycles. Existing types never point into the new file, so
        // any cycle is made of new types only.
        let mut acyclic: BTreeSet<String> = BTreeSet::new();
        let mut reported: BTreeSet<String> = BTreeSet::new();
        for start in specs.keys() {
            let mut path: Vec<String> = Vec::new();
            let mut cur = start.clone();
            loop {
                if acyclic.contains(&cur) || self.types.contains_key(&cur) {
                    acyclic.extend(path.drain(..));
                    break;
                }
                if let Some(pos) = path.iter().position(|p| *p == cur) {
                    let mut cycle = path[pos..].to_vec();
                    let fresh = cycle.iter().all(|c| !reported.contains(c));
                    reported.extend(cycle.iter().cloned());
                    cycle.push(cur.clone());
                    if fresh {
                        errors.push(OntologyError::CycleDetected(cycle));
                    }
                    break;
                }
                let Some(spec) = specs.get(&cur) else {
                    // Parent failed to resolve in pass 1; already reported.
                    break;
                };
                path.push(cur.clone());
                cur = spec.parent.clone().expect("user types have parents");
            }
        }

        // Pass 3: attribute collisions, walking each new type top-down.
        // Only types whose ancestry resolved take part, so problems there
        // are reported alongside any from the earlier passes.
        let mut extended = self.clone();
        let mut pending: Vec<String> = specs.keys().filter(|k| acyclic.contains(*k)).cloned().collect();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|name| {
                let spec = &specs[name];
                let parent = spec.parent.as_deref().unwrap_or_default();
                if !extended.types.contains_key(parent) {
                    return true;
                }
                let mut seen: BTreeSet<String> = extended
                    .all_attributes(parent)
                    .into_iter()
                    .map(|a| a.name)
                    .collect();
                seen.extend(TEMPLATE_FIELD_NAMES.iter().map(|s| s.to_string()));
                for attr in &spec.attributes {
                    if !seen.insert(attr.name.clone()) {
                        errors.push(OntologyError::DuplicateAttribute {
                            ty: name.clone(),
                            attr: attr.name.clone(),
                        });
                    }
                }
                let root = extended.roots[parent];
                extended.roots.insert(name.clone(), root);
                extended.types.insert(name.clone(), spec.clone());
                false
            });
            assert!(pending.len() < before, "acyclic graph must make progress");
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        // Preserve the file's declaration order for serialization.
        extended
            .user_types
            .extend(file.types.iter().map(|t| t.name.clone()));
        Ok(extended)
    }

    /// Built-ins first, then exact names, then unqualified names matched
    /// against the last segment of file-local types.
    fn resolve_reference(&self, name: &str, local: &BTreeMap<String, &RawType>) -> Option<String> {
        if self.types.contains_key(name) || local.contains_key(name) {
            return Some(name.to_string());
        }
        if name.contains('.') {
            return None;
        }
        let mut hits = local
            .keys()
            .filter(|k| k.rsplit('.').next() == Some(name));
        let first = hits.next()?;
        if hits.next().is_some() {
            return None;
        }
        Some(first.clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.types.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&TypeSpec> {
        self.types.get(name)
    }

    pub fn type_names(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    /// User-declared types in load order.
    pub fn user_types(&self) -> impl Iterator<Item = &TypeSpec> {
        self.user_types.iter().map(|n| &self.types[n])
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn root_of(&self, name: &str) -> Result<Root, OntologyError> {
        self.roots
            .get(name)
            .copied()
            .ok_or_else(|| OntologyError::UnknownType(name.to_string()))
    }

    /// Reflexive ancestor test.
    pub fn is_subtype(&self, child: &str, ancestor: &str) -> Result<bool, OntologyError> {
        if !self.types.contains_key(ancestor) {
            return Err(OntologyError::UnknownType(ancestor.to_string()));
        }
        let mut cur = self
            .types
            .get(child)
            .ok_or_else(|| OntologyError::UnknownType(child.to_string()))?;
        loop {
            if cur.name == ancestor {
                return Ok(true);
            }
            match &cur.parent {
                Some(p) => cur = &self.types[p],
                None => return Ok(false),
            }
        }
    }

    /// `name` and every type that descends from it.
    pub fn subtypes(&self, name: &str) -> Result<BTreeSet<String>, OntologyError> {
        if !self.types.contains_key(name) {
            return Err(OntologyError::UnknownType(name.to_string()));
        }
        Ok(self
            .types
            .keys()
            .filter(|t| self.is_subtype(t, name).unwrap_or(false))
            .cloned()
            .collect())
    }

    /// Declared plus inherited attributes, ancestors first.
    pub fn all_attributes(&self, name: &str) -> Vec<AttributeSpec> {
        let mut chain = Vec::new();
        let mut cur = self.types.get(name);
        while let Some(spec) = cur {
            chain.push(spec);
            cur = spec.parent.as_ref().and_then(|p| self.types.get(p));
        }
        chain
            .into_iter()
            .rev()
            .flat_map(|s| s.attributes.iter().cloned())
            .collect()
    }

    pub fn attribute(&self, ty: &str, attr: &str) -> Option<AttributeSpec> {
        self.all_attributes(ty).into_iter().find(|a| a.name == attr)
    }

    /// Checks an entry against its type: structural fields for its root,
    /// span order, and attribute kinds. Never panics.
    pub fn validate_entry(&self, entry: &Entry) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let Ok(root) = self.root_of(&entry.type_name) else {
            return Err(vec![Violation::UnknownType(entry.type_name.clone())]);
        };
        let wants = |r: Root| root == r;
        match (&entry.span, wants(Root::Span)) {
            (Some(span), true) if span.begin > span.end => out.push(Violation::InvertedSpan {
                begin: span.begin,
                end: span.end,
            }),
            (None, true) => out.push(Violation::MissingField("begin/end")),
            (Some(_), false) => out.push(Violation::UnexpectedField("begin/end")),
            _ => {}
        }
        match (&entry.link, wants(Root::Link)) {
            (None, true) => out.push(Violation::MissingField("parent/child")),
            (Some(_), false) => out.push(Violation::UnexpectedField("parent/child")),
            _ => {}
        }
        match (&entry.members, wants(Root::Group)) {
            (None, true) => out.push(Violation::MissingField("members")),
            (Some(_), false) => out.push(Violation::UnexpectedField("members")),
            _ => {}
        }
        let declared = self.all_attributes(&entry.type_name);
        for (name, value) in &entry.attributes {
            match declared.iter().find(|a| a.name == *name) {
                None => out.push(Violation::UnknownAttribute(name.clone())),
                Some(spec) if !spec.kind.accepts(value) => {
                    out.push(Violation::AttributeKindMismatch {
                        name: name.clone(),
                        expected: spec.kind,
                        found: json_kind(value),
                    })
                }
                Some(_) => {}
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Serializes the user-declared types in the ontology file format.
    pub fn to_json(&self) -> String {
        let types: Vec<Value> = self.user_types().map(type_to_json).collect();
        serde_json::to_string_pretty(&serde_json::json!({ "types": types }))
            .expect("ontology JSON is always serializable")
    }

    /// Every type, built-in ones included, plus the root template fields.
    /// This is what annotation clients consume.
    pub fn describe(&self) -> Value {
        let roots: Vec<Value> = Root::ALL
            .iter()
            .map(|r| {
                let fields: Vec<Value> = r
                    .template_fields()
                    .iter()
                    .map(|(n, k)| serde_json::json!({"name": n, "type": k}))
                    .collect();
                serde_json::json!({"name": r.name(), "fields": fields})
            })
            .collect();
        let types: Vec<Value> = self
            .types
            .values()
            .filter(|t| t.parent.is_some())
            .map(|t| {
                let mut v = type_to_json(t);
                v["root"] = Value::from(self.roots[&t.name].name());
                v["builtin"] = Value::from(self.is_builtin(&t.name));
                v
            })
            .collect();
        serde_json::json!({ "roots": roots, "types": types })
    }
}

fn type_to_json(spec: &TypeSpec) -> Value {
    let attrs: Vec<Value> = spec
        .attributes
        .iter()
        .map(|a| serde_json::json!({"name": a.name, "type": a.kind.as_str()}))
        .collect();
    serde_json::json!({
        "name": spec.name,
        "parent": spec.parent,
        "attributes": attrs,
    })
}

/// Parses an ontology document on top of the built-in types.
pub fn parse_ontology(source: &str) -> Result<TypeOntology, OntologyError> {
    TypeOntology::parse(source)
}
