//! Bundled processors and the registry that builds them from workflow
//! configuration.
//!
//! Every processor reads a pack and writes results back into it. Each one
//! declares the types it `requires` and `produces` so pipelines can be
//! checked before any data flows. The NER, relation and sentiment
//! processors are rule-based stand-ins (gazetteer matching, sentence
//! co-occurrence, keyword averaging) for learned models.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datapack::{DataPack, EntryUpdate, NewEntry, PackError};
use crate::fsutil::write_atomic;
use crate::ontology::{Root, TypeOntology};

#[derive(Debug, Error)]
pub enum ProcessorError {
    #[error("required entries of type `{0}` are missing")]
    MissingDependency(String),
    #[error("invalid pack id `{0}`")]
    InvalidPackId(String),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown processor `{0}`")]
    UnknownProcessor(String),
    #[error("invalid config for `{processor}`: {detail}")]
    InvalidConfig { processor: String, detail: String },
}

/// A pipeline stage.
pub trait Processor: Send + Sync {
    fn name(&self) -> &str;

    /// Types that must be present before this processor runs.
    fn requires(&self) -> Vec<String> {
        Vec::new()
    }

    /// Types of the entries this processor adds.
    fn produces(&self) -> Vec<String> {
        Vec::new()
    }

    /// `(type, attribute)` pairs this processor may set on existing entries.
    fn writes_attributes(&self) -> Vec<(String, String)> {
        Vec::new()
    }

    fn process(&self, pack: &mut DataPack) -> Result<(), ProcessorError>;
}

impl fmt::Debug for dyn Processor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Processor({})", self.name())
    }
}

/// Name and parameters of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorConfig {
    pub name: String,
    #[serde(default = "empty_params")]
    pub params: Value,
}

fn empty_params() -> Value {
    Value::Object(Default::default())
}

impl ProcessorConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: empty_params(),
        }
    }

    pub fn with_params(name: impl Into<String>, params: Value) -> Self {
        Self {
            name: name.into(),
            params,
        }
    }
}

/// Token boundaries: each maximal run of alphanumerics is a token and every
/// other non-whitespace character is a token of its own. Offsets are in
/// scalar values.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_alphanumeric() {
            run_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = run_start.take() {
            out.push((s, i));
        }
        if !c.is_whitespace() {
            out.push((i, i + 1));
        }
    }
    if let Some(s) = run_start {
        out.push((s, n));
    }
    out
}

/// Sentence boundaries: a sentence ends after `.`, `!` or `?` followed by
/// whitespace or the end of the text. Sentences are trimmed and never
/// empty.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut push_trimmed = |from: usize, to: usize| {
        let mut b = from;
        let mut e = to;
        while b < e && chars[b].is_whitespace() {
            b += 1;
        }
        while e > b && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if b < e {
            out.push((b, e));
        }
    };
    let mut start = 0;
    for i in 0..chars.len() {
        let terminal = matches!(chars[i], '.' | '!' | '?');
        let at_break = chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if terminal && at_break {
            push_trimmed(start, i + 1);
            start = i + 1;
        }
    }
    push_trimmed(start, chars.len());
    out
}

#[derive(Debug, Error)]
#[error("lexicon line {line}: {detail}")]
pub struct LexiconError {
    pub line: usize,
    pub detail: String,
}

/// Surface-string lookup table. Surfaces are normalized with the token rule
/// (tokens joined by one space) and lowercased unless case-sensitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon<V> {
    entries: BTreeMap<String, V>,
    case_sensitive: bool,
    max_tokens: usize,
}

impl<V> Lexicon<V> {
    pub fn new(case_sensitive: bool) -> Self {
        Self {
            entries: BTreeMap::new(),
            case_sensitive,
            max_tokens: 0,
        }
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest surface, in tokens.
    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn normalize(&self, surface: &str) -> String {
        let joined = token_spans(surface)
            .into_iter()
            .map(|(b, e)| surface.chars().skip(b).take(e - b).collect::<String>())
            .collect::<Vec<_>>()
            .join(" ");
        if self.case_sensitive {
            joined
        } else {
            joined.to_lowercase()
        }
    }

    /// Adds a surface; returns false if it normalizes to nothing.
    pub fn insert(&mut self, surface: &str, value: V) -> bool {
        let key = self.normalize(surface);
        if key.is_empty() {
            return false;
        }
        self.max_tokens = self.max_tokens.max(key.split(' ').count());
        self.entries.insert(key, value);
        true
    }

    /// Looks up an already normalized key.
    pub fn get(&self, key: &str) -> Option<&V> {
        self.entries.get(key)
    }

    pub fn from_pairs<'a, I>(pairs: I, case_sensitive: bool) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (&'a str, V)>,
    {
        let mut lex = Self::new(case_sensitive);
        for (i, (surface, value)) in pairs.into_iter().enumerate() {
            if !lex.insert(surface, value) {
                return Err(LexiconError {
                    line: i + 1,
                    detail: "empty surface".into(),
                });
            }
        }
        Ok(lex)
    }
}

impl<V: FromStr> Lexicon<V>
where
    V::Err: fmt::Display,
{
    /// Parses `surface<TAB>value` lines; blank lines and `#` comments are
    /// skipped.
    pub fn parse_tsv(source: &str, case_sensitive: bool) -> Result<Self, LexiconError> {
        let mut lex = Self::new(case_sensitive);
        for (i, line) in source.lines().enumerate() {
            let err = |detail: String| LexiconError { line: i + 1, detail };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, value) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `surface<TAB>value`".into()))?;
            let value = value
                .trim()
                .parse::<V>()
                .map_err(|e| err(format!("bad value `{}`: {e}", value.trim())))?;
            if !lex.insert(surface, value) {
                return Err(err("empty surface".into()));
            }
        }
        Ok(lex)
    }
}

fn ensure_present(pack: &DataPack, ty: &str) -> Result<(), ProcessorError> {
    // Token and Sentence coverage is total over non-blank text, so their
    // absence means an upstream stage never ran.
    if pack.text().trim().is_empty() {
        return Ok(());
    }
    if pack.get_entries(ty, true)?.is_empty() {
        return Err(ProcessorError::MissingDependency(ty.to_string()));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct Tokenizer;

impl Processor for Tokenizer {
    fn name(&self) -> &str {
        "tokenize"
    }

    fn produces(&self) -> Vec<String> {
        vec!["Token".into()]
    }

    fn process(&self, pack: &mut DataPack) -> Result<(), ProcessorError> {
        for (b, e) in token_spans(pack.text()) {
            pack.add_entry(NewEntry::span("Token", b, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct SentenceSplitter;

impl Processor for SentenceSplitter {
    fn name(&self) -> &str {
        "split_sentences"
    }

    fn produces(&self) -> Vec<String> {
        vec!["Sentence".into()]
    }

    fn process(&self, pack: &mut DataPack) -> Result<(), ProcessorError> {
        for (b, e) in sentence_spans(pack.text()) {
            pack.add_entry(NewEntry::span("Sentence", b, e))?;
        }
        Ok(())
    }
}

/// Greedy left-to-right longest-match gazetteer tagger.
#[derive(Debug)]
pub struct LexiconNer {
    lexicon: Lexicon<String>,
    entity_type: String,
}

impl LexiconNer {
    pub fn new(lexicon: Lexicon<String>) -> Self {
        Self {
            lexicon,
            entity_type: "EntityMention".into(),
        }
    }

    /// Emits mentions of a subtype of `EntityMention` instead.
    pub fn with_entity_type(mut self, ty: impl Into<String>) -> Self {
        self.entity_type = ty.into();
        self
    }
}

impl Processor for LexiconNer {
    fn name(&self) -> &str {
        "lexicon_ner"
    }

    fn requires(&self) -> Vec<String> {
        vec!["Token".into()]
    }

    fn produces(&self) -> Vec<String> {
        vec![self.entity_type.clone()]
    }

    fn process(&self, pack: &mut DataPack) -> Result<(), ProcessorError> {
        ensure_present(pack, "Token")?;
        let tokens: Vec<(usize, usize, String)> = pack
            .get_entries("Token", true)?
            .into_iter()
            .map(|e| {
                let s = e.span.expect("tokens are spans");
                let text = pack.get_text(s.begin, s.end).expect("indexed spans are in bounds");
                let text = if self.lexicon.case_sensitive() {
                    text.to_string()
                } else {
                    text.to_lowercase()
                };
                (s.begin, s.end, text)
            })
            .collect();
        let mut matches = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.lexicon.max_tokens().min(tokens.len() - i);
            let hit = (1..=longest).rev().find_map(|n| {
                let key = tokens[i..i + n]
                    .iter()
                    .map(|t| t.2.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                self.lexicon.get(&key).map(|label| (n, label.clone()))
            });
            match hit {
                Some((n, label)) => {
                    matches.push((tokens[i].0, tokens[i + n - 1].1, label));
                    i += n;
                }
                None => i += 1,
            }
        }
        for (b, e, label) in matches {
            pack.add_entry(NewEntry::span(self.entity_type.clone(), b, e).attr("ner_type", label))?;
        }
        Ok(())
    }
}

/// Links every ordered pair of mentions that share a sentence.
#[derive(Debug)]
pub struct CooccurrenceRelations {
    rel_type: String,
    mention_type: String,
    relation_type: String,
}

impl CooccurrenceRelations {
    pub fn new(rel_type: impl Into<String>) -> Self {
        Self {
            rel_type: rel_type.into(),
            mention_type: "EntityMention".into(),
            relation_type: "Relation".into(),
        }
    }
}

impl Processor for CooccurrenceRelations {
    fn name(&self) -> &str {
        "cooccurrence_relations"
    }

    fn requires(&self) -> Vec<String> {
        vec!["Sentence".into(), self.mention_type.clone()]
    }

    fn produces(&self) -> Vec<String> {
        vec![self.relation_type.clone()]
    }

    fn process(&self, pack: &mut DataPack) -> Result<(), ProcessorError> {
        ensure_present(pack, "Sentence")?;
        let mut pairs = Vec::new();
        for sentence in pack.get_entries("Sentence", true)? {
            let mentions: Vec<_> = pack
                .get_covered(sentence.id, &self.mention_type, true)?
                .into_iter()
                .map(|m| (m.id, m.span.expect("mentions are spans").begin))
                .collect();
            for (i, a) in mentions.iter().enumerate() {
                for b in &mentions[i + 1..] {
                    if a.1 < b.1 {
                        pairs.push((a.0, b.0));
                    }
                }
            }
        }
        for (parent, child) in pairs {
            pack.add_entry(
                NewEntry::link(self.relation_type.clone(), parent, child)
                    .attr("rel_type", self.rel_type.clone()),
            )?;
        }
        Ok(())
    }
}

/// Sets `Sentence.sentiment` to the mean polarity of lexicon-matched
/// tokens (0.0 when nothing matches).
#[derive(Debug)]
pub struct KeywordSentiment {
    lexicon: Lexicon<f64>,
}

impl KeywordSentiment {
    /// Keys are matched against lowercased single tokens, so the lexicon is
    /// forced case-insensitive.
    pub fn new(lexicon: Lexicon<f64>) -> Self {
        let mut folded = Lexicon::new(false);
        for (k, v) in lexicon.entries {
            folded.insert(&k, v);
        }
        Self { lexicon: folded }
    }
}

impl Processor for KeywordSentiment {
    fn name(&self) -> &str {
        "keyword_sentiment"
    }

    fn requires(&self) -> Vec<String> {
        vec!["Sentence".into(), "Token".into()]
    }

    fn writes_attributes(&self) -> Vec<(String, String)> {
        vec![("Sentence".into(), "sentiment".into())]
    }

    fn process(&self, pack: &mut DataPack) -> Result<(), ProcessorError> {
        ensure_present(pack, "Sentence")?;
        ensure_present(pack, "Token")?;
        let mut scores = Vec::new();
        for sentence in pack.get_entries("Sentence", true)? {
            let mut sum = 0.0;
            let mut matched = 0usize;
            for token in pack.get_covered(sentence.id, "Token", true)? {
                let text = pack.span_text(token.id)?.to_lowercase();
                if let Some(p) = self.lexicon.get(&text) {
                    sum += p;
                    matched += 1;
                }
            }
            scores.push((sentence.id, sum / matched.max(1) as f64));
        }
        for (id, score) in scores {
            pack.update_entry(id, EntryUpdate::default().set("sentiment", score))?;
        }
        Ok(())
    }
}

/// Pack ids become file names, so they must be plain names.
pub fn validate_pack_id(id: &str) -> Result<(), ProcessorError> {
    let bad = id.is_empty()
        || id == "."
        || id == ".."
        || id.contains(['/', '\\', '\0'])
        || id.starts_with('.');
    if bad {
        Err(ProcessorError::InvalidPackId(id.to_string()))
    } else {
        Ok(())
    }
}

/// Writes `<out_dir>/<pack_id>.json` atomically.
pub fn write_pack(pack: &DataPack, out_dir: &Path) -> Result<PathBuf, ProcessorError> {
    validate_pack_id(pack.pack_id())?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{}.json", pack.pack_id()));
    write_atomic(&path, pack.to_json().as_bytes())?;
    Ok(path)
}

#[derive(Debug)]
pub struct PackWriter {
    out_dir: PathBuf,
}

impl PackWriter {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
        }
    }
}

impl Processor for PackWriter {
    fn name(&self) -> &str {
        "pack_writer"
    }

    fn process(&self, pack: &mut DataPack) -> Result<(), ProcessorError> {
        write_pack(pack, &self.out_dir).map(|_| ())
    }
}

/// Environment a processor is built in.
#[derive(Debug, Clone)]
pub struct BuildContext {
    /// Relative paths in params resolve against this directory.
    pub base_dir: PathBuf,
    /// Default destination for `pack_writer`.
    pub out_dir: Option<PathBuf>,
    pub ontology: Arc<TypeOntology>,
}

impl BuildContext {
    pub fn new(ontology: Arc<TypeOntology>) -> Self {
        Self {
            base_dir: PathBuf::from("."),
            out_dir: None,
            ontology,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub type Factory =
    Box<dyn Fn(&Value, &BuildContext) -> Result<Box<dyn Processor>, String> + Send + Sync>;

/// Named processor factories.
pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.factories.keys()).finish()
    }
}

fn params<T: DeserializeOwned>(v: &Value) -> Result<T, String> {
    let v = if v.is_null() { empty_params() } else { v.clone() };
    serde_json::from_value(v).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconParams<V> {
    lexicon: Option<PathBuf>,
    entries: Option<BTreeMap<String, V>>,
    #[serde(default)]
    case_sensitive: bool,
    entity_type: Option<String>,
}

fn load_lexicon<V>(p: &LexiconParams<V>, ctx: &BuildContext) -> Result<Lexicon<V>, String>
where
    V: FromStr + Clone,
    V::Err: fmt::Display,
{
    match (&p.lexicon, &p.entries) {
        (Some(path), None) => {
            let path = ctx.resolve(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| format!("cannot read lexicon {}: {e}", path.display()))?;
            Lexicon::parse_tsv(&text, p.case_sensitive).map_err(|e| e.to_string())
        }
        (None, Some(entries)) => Lexicon::from_pairs(
            entries.iter().map(|(k, v)| (k.as_str(), v.clone())),
            p.case_sensitive,
        )
        .map_err(|e| e.to_string()),
        _ => Err("exactly one of `lexicon` or `entries` is required".into()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationParams {
    #[serde(default = "default_rel_type")]
    rel_type: String,
}

fn default_rel_type() -> String {
    "cooccur".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WriterParams {
    out_dir: Option<PathBuf>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::standard()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// The bundled processors.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register("tokenize", |v, _| {
            params::<NoParams>(v)?;
            Ok(Box::new(Tokenizer))
        });
        r.register("split_sentences", |v, _| {
            params::<NoParams>(v)?;
            Ok(Box::new(SentenceSplitter))
        });
        r.register("lexicon_ner", |v, ctx| {
            let p: LexiconParams<String> = params(v)?;
            let mut ner = LexiconNer::new(load_lexicon(&p, ctx)?);
            if let Some(ty) = p.entity_type {
                match ctx.ontology.is_subtype(&ty, "EntityMention") {
                    Ok(true) => ner = ner.with_entity_type(ty),
                    _ => return Err(format!("`{ty}` is not a subtype of EntityMention")),
                }
            }
            Ok(Box::new(ner))
        });
        r.register("cooccurrence_relations", |v, _| {
            let p: RelationParams = params(v)?;
            Ok(Box::new(CooccurrenceRelations::new(p.rel_type)))
        });
        r.register("keyword_sentiment", |v, ctx| {
            let p: LexiconParams<f64> = params(v)?;
            if p.entity_type.is_some() {
                return Err("unknown field `entity_type`".into());
            }
            Ok(Box::new(KeywordSentiment::new(load_lexicon(&p, ctx)?)))
        });
        r.register("pack_writer", |v, ctx| {
            let p: WriterParams = params(v)?;
            let dir = match (p.out_dir, &ctx.out_dir) {
                (Some(d), _) => ctx.resolve(&d),
                (None, Some(d)) => d.clone(),
                (None, None) => return Err("`out_dir` is required".into()),
            };
            Ok(Box::new(PackWriter::new(dir)))
        });
        r
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&Value, &BuildContext) -> Result<Box<dyn Processor>, String> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, cfg: &ProcessorConfig, ctx: &BuildContext) -> Result<Box<dyn Processor>, ConfigError> {
        let factory = self
            .factories
            .get(&cfg.name)
            .ok_or_else(|| ConfigError::UnknownProcessor(cfg.name.clone()))?;
        factory(&cfg.params, ctx).map_err(|detail| ConfigError::InvalidConfig {
            processor: cfg.name.clone(),
            detail,
        })
    }
}

/// Checks that every produced type exists and matches the declared root.
pub(crate) fn check_declarations(p: &dyn Processor, ont: &TypeOntology) -> Result<(), String> {
    for ty in p.requires().iter().chain(p.produces().iter()) {
        if !ont.contains(ty) {
            return Err(format!("unknown type `{ty}`"));
        }
    }
    for (ty, attr) in p.writes_attributes() {
        if ont.attribute(&ty, &attr).is_none() {
            return Err(format!("type `{ty}` has no attribute `{attr}`"));
        }
        if ont.root_of(&ty).ok() == Some(Root::Generic) {
            return Err(format!("cannot annotate generic type `{ty}`"));
        }
    }
    Ok(())
}
