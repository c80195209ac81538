//! Symbolic and dense retrieval.
//!
//! [`InvertedIndex`] scores documents by cosine similarity of TF-IDF vectors
//! with smoothed idf `ln((1 + N) / (1 + df)) + 1`. [`VectorIndex`] is an exact
//! brute-force cosine index. [`hybrid_search`] takes the symbolic top
//! candidates and re-ranks them by embedding similarity.
//!
//! All rankings order by score descending, then doc id ascending. Sums are
//! always accumulated in ascending term order so scores are reproducible.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapack::DataPack;
use crate::ontology::Root;
use crate::tensorize::{text_embedding, EmbeddingConfig};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("document `{0}` is already indexed")]
    DuplicateDoc(String),
    #[error("vector has {found} dimensions, index expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid result sizes: k={k}, k_coarse={k_coarse}")]
    InvalidK { k: usize, k_coarse: usize },
    #[error("document `{0}` has no vector")]
    MissingVector(String),
    #[error("unknown or non-span type `{0}`")]
    UnknownType(String),
    #[error("malformed index file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub doc_id: String,
    pub score: f64,
}

fn rank(mut hits: Vec<ScoredHit>, k: usize) -> Vec<ScoredHit> {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    hits.truncate(k);
    hits
}

/// Lowercased runs of alphanumeric characters.
pub fn index_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn term_counts(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for t in index_terms(text) {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

pub fn smoothed_idf(doc_count: usize, df: usize) -> f64 {
    ((1.0 + doc_count as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: usize,
    tf: u32,
}

/// TF-IDF inverted index. Additions need `&mut`; searches take `&self` and
/// may run concurrently.
#[derive(Debug, Default)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    positions: HashMap<String, usize>,
    postings: BTreeMap<String, Vec<Posting>>,
    /// Per-document L2 norms, rebuilt on first search after an addition.
    norms: OnceLock<Vec<f64>>,
}

impl Clone for InvertedIndex {
    fn clone(&self) -> Self {
        Self {
            doc_ids: self.doc_ids.clone(),
            positions: self.positions.clone(),
            postings: self.postings.clone(),
            norms: OnceLock::new(),
        }
    }
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// `(doc_id, tf)` pairs for a term, in insertion order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| ps.iter().map(|p| (self.doc_ids[p.doc].as_str(), p.tf)).collect())
            .unwrap_or_default()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        smoothed_idf(self.doc_count(), self.df(term))
    }

    pub fn add(&mut self, doc_id: impl Into<String>, text: &str) -> Result<(), RetrievalError> {
        let doc_id = doc_id.into();
        if self.positions.contains_key(&doc_id) {
            return Err(RetrievalError::DuplicateDoc(doc_id));
        }
        let doc = self.doc_ids.len();
        for (term, tf) in term_counts(text) {
            self.postings.entry(term).or_default().push(Posting { doc, tf });
        }
        self.positions.insert(doc_id.clone(), doc);
        self.doc_ids.push(doc_id);
        self.norms = OnceLock::new();
        Ok(())
    }

    fn norms(&self) -> &[f64] {
        self.norms.get_or_init(|| {
            let mut sq = vec![0.0f64; self.doc_ids.len()];
            for (term, ps) in &self.postings {
                let idf = self.idf(term);
                for p in ps {
                    let w = f64::from(p.tf) * idf;
                    sq[p.doc] += w * w;
                }
            }
            sq.into_iter().map(f64::sqrt).collect()
        })
    }

    /// L2 norm of a document's TF-IDF vector.
    pub fn doc_norm(&self, doc_id: &str) -> Option<f64> {
        self.positions.get(doc_id).map(|&i| self.norms()[i])
    }

    /// Top-`k` documents by TF-IDF cosine with the query. Query terms
    /// outside the vocabulary are ignored; zero scores are dropped.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK { k, k_coarse: k });
        }
        let weights: Vec<(&[Posting], f64, f64)> = term_counts(query)
            .into_iter()
            .filter_map(|(term, tf)| {
                let ps = self.postings.get(&term)?;
                let idf = self.idf(&term);
                Some((ps.as_slice(), f64::from(tf) * idf, idf))
            })
            .collect();
        let qnorm = weights.iter().map(|(_, w, _)| w * w).sum::<f64>().sqrt();
        if qnorm == 0.0 {
            return Ok(Vec::new());
        }
        let norms = self.norms();
        let mut dots: BTreeMap<usize, f64> = BTreeMap::new();
        for (ps, qw, idf) in &weights {
            for p in *ps {
                *dots.entry(p.doc).or_insert(0.0) += qw * (f64::from(p.tf) * idf);
            }
        }
        let hits = dots
            .into_iter()
            .map(|(doc, dot)| ScoredHit {
                doc_id: self.doc_ids[doc].clone(),
                score: dot / (qnorm * norms[doc]),
            })
            .filter(|h| h.score > 0.0)
            .collect();
        Ok(rank(hits, k))
    }

    fn to_raw(&self) -> RawInvertedIndex {
        RawInvertedIndex {
            doc_count: self.doc_count(),
            doc_ids: self.doc_ids.clone(),
            doc_norms: self.norms().to_vec(),
            postings: self
                .postings
                .iter()
                .map(|(t, ps)| {
                    let list = ps.iter().map(|p| (self.doc_ids[p.doc].clone(), p.tf)).collect();
                    (t.clone(), list)
                })
                .collect(),
        }
    }

    fn from_raw(raw: RawInvertedIndex) -> Result<Self, RetrievalError> {
        if raw.doc_count != raw.doc_ids.len() || raw.doc_norms.len() != raw.doc_ids.len() {
            return Err(RetrievalError::Malformed("document counts disagree".into()));
        }
        let mut idx = InvertedIndex::new();
        for (i, d) in raw.doc_ids.iter().enumerate() {
            if idx.positions.insert(d.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateDoc(d.clone()));
            }
        }
        idx.doc_ids = raw.doc_ids;
        for (term, list) in raw.postings {
            let mut ps = Vec::with_capacity(list.len());
            for (doc_id, tf) in list {
                let doc = *idx
                    .positions
                    .get(&doc_id)
                    .ok_or_else(|| RetrievalError::Malformed(format!("posting for unknown doc `{doc_id}`")))?;
                ps.push(Posting { doc, tf });
            }
            idx.postings.insert(term, ps);
        }
        for (stored, fresh) in raw.doc_norms.iter().zip(idx.norms()) {
            if (stored - fresh).abs() > 1e-9 * fresh.max(1.0) {
                return Err(RetrievalError::Malformed("doc_norms inconsistent with postings".into()));
            }
        }
        Ok(idx)
    }
}

#[derive(Serialize, Deserialize)]
struct RawInvertedIndex {
    doc_count: usize,
    doc_ids: Vec<String>,
    doc_norms: Vec<f64>,
    postings: BTreeMap<String, Vec<(String, u32)>>,
}

/// Exact cosine index over unit vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<(String, Vec<f32>)>,
    #[serde(skip)]
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }

    pub fn vector(&self, doc_id: &str) -> Option<&[f32]> {
        self.positions.get(doc_id).map(|&i| self.entries[i].1.as_slice())
    }

    fn check_dim(&self, v: &[f32]) -> Result<(), RetrievalError> {
        if v.len() == self.dim {
            Ok(())
        } else {
            Err(RetrievalError::DimMismatch {
                expected: self.dim,
                found: v.len(),
            })
        }
    }

    /// Stores the normalized vector (zero vectors are kept as zero).
    pub fn add(&mut self, doc_id: impl Into<String>, vector: &[f32]) -> Result<(), RetrievalError> {
        let doc_id = doc_id.into();
        self.check_dim(vector)?;
        if self.positions.contains_key(&doc_id) {
            return Err(RetrievalError::DuplicateDoc(doc_id));
        }
        let norm = vector.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let unit = vector
            .iter()
            .map(|x| if norm > 0.0 { (f64::from(*x) / norm) as f32 } else { 0.0 })
            .collect();
        self.positions.insert(doc_id.clone(), self.entries.len());
        self.entries.push((doc_id, unit));
        Ok(())
    }

    fn cosine(&self, unit_query: &[f64], stored: &[f32]) -> f64 {
        unit_query.iter().zip(stored).map(|(q, x)| q * f64::from(*x)).sum()
    }

    fn unit_query(&self, query: &[f32]) -> Result<Vec<f64>, RetrievalError> {
        self.check_dim(query)?;
        let q: Vec<f64> = query.iter().map(|x| f64::from(*x)).collect();
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(if norm > 0.0 { q.iter().map(|x| x / norm).collect() } else { q })
    }

    /// Exact top-`k` by cosine similarity.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK { k, k_coarse: k });
        }
        let q = self.unit_query(query)?;
        let hits = self
            .entries
            .iter()
            .map(|(d, v)| ScoredHit {
                doc_id: d.clone(),
                score: self.cosine(&q, v),
            })
            .collect();
        Ok(rank(hits, k))
    }

    /// Cosine scores for the given documents only.
    pub fn score_subset(&self, query: &[f32], doc_ids: &[&str]) -> Result<Vec<ScoredHit>, RetrievalError> {
        let q = self.unit_query(query)?;
        doc_ids
            .iter()
            .map(|d| {
                let v = self
                    .vector(d)
                    .ok_or_else(|| RetrievalError::MissingVector(d.to_string()))?;
                Ok(ScoredHit {
                    doc_id: d.to_string(),
                    score: self.cosine(&q, v),
                })
            })
            .collect()
    }

    fn reindex(&mut self) -> Result<(), RetrievalError> {
        self.positions.clear();
        for (i, (d, v)) in self.entries.iter().enumerate() {
            if v.len() != self.dim {
                return Err(RetrievalError::DimMismatch {
                    expected: self.dim,
                    found: v.len(),
                });
            }
            if self.positions.insert(d.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateDoc(d.clone()));
            }
        }
        Ok(())
    }
}

pub fn search_symbolic(idx: &InvertedIndex, query: &str, k: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
    idx.search(query, k)
}

pub fn vector_search(idx: &VectorIndex, query: &[f32], k: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
    idx.search(query, k)
}

/// Coarse TF-IDF retrieval of `k_coarse` candidates, re-ranked by cosine
/// between the query's text embedding and the stored document vectors. The
/// embedding score replaces the symbolic score.
pub fn hybrid_search(
    inv: &InvertedIndex,
    vec: &VectorIndex,
    query: &str,
    k_coarse: usize,
    k_final: usize,
    cfg: &EmbeddingConfig,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if k_final == 0 || k_final > k_coarse {
        return Err(RetrievalError::InvalidK {
            k: k_final,
            k_coarse,
        });
    }
    let candidates = inv.search(query, k_coarse)?;
    let ids: Vec<&str> = candidates.iter().map(|h| h.doc_id.as_str()).collect();
    let qv = text_embedding(query, cfg);
    let rescored = vec.score_subset(&qv, &ids)?;
    Ok(rank(rescored, k_final))
}

/// What becomes a retrieval document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexField {
    /// One document per pack, id = pack id.
    WholeText,
    /// One document per entry of a span type, id = `<pack_id>#<entry_id>`.
    SpanType(String),
}

pub fn index_packs(
    packs: &[DataPack],
    field: &IndexField,
    cfg: &EmbeddingConfig,
) -> Result<(InvertedIndex, VectorIndex), RetrievalError> {
    let mut inv = InvertedIndex::new();
    let mut vec = VectorIndex::new(cfg.dim);
    for pack in packs {
        match field {
            IndexField::WholeText => {
                inv.add(pack.pack_id(), pack.text())?;
                vec.add(pack.pack_id(), &text_embedding(pack.text(), cfg))?;
            }
            IndexField::SpanType(ty) => {
                if pack.ontology().root_of(ty).ok() != Some(Root::Span) {
                    return Err(RetrievalError::UnknownType(ty.clone()));
                }
                let entries = pack
                    .get_entries(ty, true)
                    .map_err(|_| RetrievalError::UnknownType(ty.clone()))?;
                for e in entries {
                    let id = format!("{}#{}", pack.pack_id(), e.id);
                    let text = pack.span_text(e.id).expect("span entries have text");
                    inv.add(id.clone(), text)?;
                    vec.add(id, &text_embedding(text, cfg))?;
                }
            }
        }
    }
    Ok((inv, vec))
}

/// Both indexes plus the embedding settings used to build them; the unit of
/// index persistence.
#[derive(Debug, Clone)]
pub struct IndexBundle {
    pub embedding: EmbeddingConfig,
    pub inverted: InvertedIndex,
    pub vector: VectorIndex,
}

#[derive(Serialize, Deserialize)]
struct RawBundle {
    embedding: EmbeddingConfig,
    inverted: RawInvertedIndex,
    vector: VectorIndex,
}

impl IndexBundle {
    pub fn to_json(&self) -> String {
        let raw = RawBundle {
            embedding: self.embedding,
            inverted: self.inverted.to_raw(),
            vector: self.vector.clone(),
        };
        serde_json::to_string(&raw).expect("index JSON is always serializable")
    }

    pub fn from_json(source: &str) -> Result<Self, RetrievalError> {
        let raw: RawBundle =
            serde_json::from_str(source).map_err(|e| RetrievalError::Malformed(e.to_string()))?;
        let mut vector = raw.vector;
        vector.reindex()?;
        if vector.dim != raw.embedding.dim {
            return Err(RetrievalError::DimMismatch {
                expected: raw.embedding.dim,
                found: vector.dim,
            });
        }
        Ok(Self {
            embedding: raw.embedding,
            inverted: InvertedIndex::from_raw(raw.inverted)?,
            vector,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        crate::fsutil::write_atomic(path, self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::datapack::NewEntry;
    use crate::ontology::TypeOntology;

    fn corpus(docs: &[(&str, &str)]) -> InvertedIndex {
        let mut idx = InvertedIndex::new();
        for (id, text) in docs {
            idx.add(*id, text).unwrap();
        }
        idx
    }

    #[test]
    fn postings_count_terms() {
        let idx = corpus(&[("d", "cat cat dog")]);
        assert_eq!(idx.postings("cat"), vec![("d", 2)]);
        assert_eq!(idx.postings("dog"), vec![("d", 1)]);
        assert_eq!(idx.vocabulary().collect::<Vec<_>>(), vec!["cat", "dog"]);
    }

    #[test]
    fn duplicate_doc_is_rejected() {
        let mut idx = corpus(&[("d", "x")]);
        assert!(matches!(idx.add("d", "y"), Err(RetrievalError::DuplicateDoc(_))));
    }

    #[test]
    fn idf_by_hand() {
        let idx = corpus(&[("a", "cat"), ("b", "cat dog"), ("c", "dog")]);
        assert_eq!(idx.df("cat"), 2);
        assert!((idx.idf("cat") - ((4.0f64 / 3.0).ln() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        assert_eq!(index_terms("Don't STOP-me now!"), vec!["don", "t", "stop", "me", "now"]);
        assert!(index_terms("  ...  ").is_empty());
    }

    #[test]
    fn out_of_vocabulary_query_is_empty() {
        let idx = corpus(&[("a", "cat")]);
        assert!(idx.search("zebra", 3).unwrap().is_empty());
        assert!(InvertedIndex::new().search("cat", 3).unwrap().is_empty());
    }

    #[test]
    fn cat_query_matches_exhaustive_cosine() {
        let idx = corpus(&[("d1", "cat dog"), ("d2", "cat cat"), ("d3", "bird")]);
        let hits = idx.search("cat", 10).unwrap();
        // Hand computation: idf(cat) = ln(4/3)+1, idf(dog) = ln(2)+1.
        let ic = (4.0f64 / 3.0).ln() + 1.0;
        let id = 2.0f64.ln() + 1.0;
        let d1 = ic / (ic * ic + id * id).sqrt();
        let d2 = 1.0;
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].doc_id, "d2");
        assert!((hits[0].score - d2).abs() < 1e-12);
        assert_eq!(hits[1].doc_id, "d1");
        assert!((hits[1].score - d1).abs() < 1e-12);
    }

    #[test]
    fn k_limits_results() {
        let idx = corpus(&[("a", "x"), ("b", "x y"), ("c", "z")]);
        assert_eq!(idx.search("x", 1).unwrap().len(), 1);
        assert_eq!(idx.search("x", 100).unwrap().len(), 2);
        assert!(matches!(idx.search("x", 0), Err(RetrievalError::InvalidK { .. })));
    }

    #[test]
    fn vector_search_examples() {
        let mut v = VectorIndex::new(3);
        v.add("b", &[0.0, 2.0, 0.0]).unwrap();
        v.add("a", &[1.0, 0.0, 0.0]).unwrap();
        v.add("c", &[0.0, 0.0, 1.0]).unwrap();
        let hits = v.search(&[1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(hits[0].doc_id, "a");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        // Orthogonal: all zero, ordered by id.
        let mut o = VectorIndex::new(2);
        o.add("z", &[1.0, 0.0]).unwrap();
        o.add("m", &[1.0, 0.0]).unwrap();
        let hits = o.search(&[0.0, 1.0], 5).unwrap();
        assert_eq!(
            hits.iter().map(|h| (h.doc_id.as_str(), h.score)).collect::<Vec<_>>(),
            vec![("m", 0.0), ("z", 0.0)]
        );
        assert!(matches!(v.search(&[1.0], 1), Err(RetrievalError::DimMismatch { .. })));
        assert!(matches!(v.add("d", &[1.0]), Err(RetrievalError::DimMismatch { .. })));
    }

    fn cfg() -> EmbeddingConfig {
        EmbeddingConfig { dim: 32, seed: 3 }
    }

    fn packs(texts: &[(&str, &str)]) -> Vec<DataPack> {
        let o = Arc::new(TypeOntology::with_defaults());
        texts.iter().map(|(id, t)| DataPack::new(*id, *t, o.clone())).collect()
    }

    #[test]
    fn hybrid_with_full_coarse_stage_is_vector_rescoring() {
        let ps = packs(&[
            ("a", "great movie"),
            ("b", "terrible movie plot"),
            ("c", "a book"),
            ("d", "movie movie"),
        ]);
        let (inv, vec) = index_packs(&ps, &IndexField::WholeText, &cfg()).unwrap();
        let got = hybrid_search(&inv, &vec, "movie", 4, 4, &cfg()).unwrap();
        let stage1 = inv.search("movie", 4).unwrap();
        let matched: Vec<&str> = stage1.iter().map(|h| h.doc_id.as_str()).collect();
        let want: Vec<ScoredHit> = vec
            .search(&text_embedding("movie", &cfg()), 4)
            .unwrap()
            .into_iter()
            .filter(|h| matched.contains(&h.doc_id.as_str()))
            .collect();
        assert_eq!(got, want);
        assert!(!got.iter().any(|h| h.doc_id == "c"));
    }

    #[test]
    fn hybrid_top_one_is_rescored_symbolic_winner() {
        let ps = packs(&[("a", "cat"), ("b", "cat dog"), ("c", "dog")]);
        let (inv, vec) = index_packs(&ps, &IndexField::WholeText, &cfg()).unwrap();
        let got = hybrid_search(&inv, &vec, "cat", 1, 1, &cfg()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].doc_id, inv.search("cat", 1).unwrap()[0].doc_id);
        assert!((got[0].score - 1.0).abs() < 1e-6);
        assert!(matches!(
            hybrid_search(&inv, &vec, "cat", 1, 2, &cfg()),
            Err(RetrievalError::InvalidK { .. })
        ));
    }

    #[test]
    fn index_packs_by_field() {
        let ps = packs(&[("p1", "x"), ("p2", "y"), ("p3", "z")]);
        let (inv, vec) = index_packs(&ps, &IndexField::WholeText, &cfg()).unwrap();
        assert_eq!(inv.doc_ids(), &["p1", "p2", "p3"]);
        assert_eq!(vec.doc_ids().collect::<Vec<_>>(), vec!["p1", "p2", "p3"]);

        let mut ps = packs(&[("p", "A. B. C. D.")]);
        for i in 0..4 {
            ps[0].add_entry(NewEntry::span("Sentence", 3 * i, 3 * i + 2)).unwrap();
        }
        let field = IndexField::SpanType("Sentence".into());
        let (inv, _) = index_packs(&ps, &field, &cfg()).unwrap();
        assert_eq!(inv.doc_count(), ps[0].get_entries("Sentence", true).unwrap().len());
        assert_eq!(inv.doc_ids()[0], "p#0");

        let (inv, vec) = index_packs(&[], &IndexField::WholeText, &cfg()).unwrap();
        assert_eq!((inv.doc_count(), vec.len()), (0, 0));
        assert!(matches!(
            index_packs(&ps, &IndexField::SpanType("Relation".into()), &cfg()),
            Err(RetrievalError::UnknownType(_))
        ));
    }

    #[test]
    fn bundle_round_trip() {
        let ps = packs(&[("a", "red fish"), ("b", "blue fish"), ("c", "one fish two fish")]);
        let (inverted, vector) = index_packs(&ps, &IndexField::WholeText, &cfg()).unwrap();
        let bundle = IndexBundle {
            embedding: cfg(),
            inverted,
            vector,
        };
        let back = IndexBundle::from_json(&bundle.to_json()).unwrap();
        assert_eq!(back.to_json(), bundle.to_json());
        assert_eq!(
            back.inverted.search("fish", 3).unwrap(),
            bundle.inverted.search("fish", 3).unwrap()
        );
        assert!(IndexBundle::from_json("{}").is_err());
    }
}
