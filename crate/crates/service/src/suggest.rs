//! Machine-assisted cross-document link suggestions.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use textflow::tensorize::{span_embedding, EmbeddingConfig};
use textflow::{EntryId, MultiPack, PackRef, Root};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuggestError {
    #[error("suggestions need exactly two packs, found {0}")]
    WrongPackCount(usize),
    #[error("`{0}` is not a span type")]
    NotASpanType(String),
    #[error("`{0}` is not a link type")]
    NotALinkType(String),
}

/// A scored cross-pack pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub parent: PackRef,
    pub child: PackRef,
    pub score: f64,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Every pair of `span_type` entries across the two packs whose embedding
/// cosine reaches `threshold`, best first. Pairs already joined by a cross
/// link (in either direction) are skipped. The first pack in alias order is
/// the parent side.
pub fn suggest_cross_doc_links(
    mp: &MultiPack,
    span_type: &str,
    threshold: f64,
    cfg: &EmbeddingConfig,
) -> Result<Vec<Candidate>, SuggestError> {
    let packs: Vec<_> = mp.packs().collect();
    if packs.len() != 2 {
        return Err(SuggestError::WrongPackCount(packs.len()));
    }
    if mp.ontology().root_of(span_type).ok() != Some(Root::Span) {
        return Err(SuggestError::NotASpanType(span_type.to_string()));
    }
    let linked: HashSet<(PackRef, PackRef)> = mp
        .cross_links()
        .flat_map(|l| [(l.parent.clone(), l.child.clone()), (l.child.clone(), l.parent.clone())])
        .collect();
    let side = |(alias, pack): (&str, &textflow::DataPack)| -> Vec<(PackRef, Vec<f32>)> {
        pack.get_entries(span_type, true)
            .expect("type checked above")
            .into_iter()
            .map(|e| {
                let v = span_embedding(pack, e.id, cfg).expect("span entries embed");
                (PackRef::new(alias, e.id), v)
            })
            .collect()
    };
    let left = side(packs[0]);
    let right = side(packs[1]);
    let mut out = Vec::new();
    for (l, lv) in &left {
        for (r, rv) in &right {
            if linked.contains(&(l.clone(), r.clone())) {
                continue;
            }
            let score = cosine(lv, rv);
            if score >= threshold {
                out.push(Candidate {
                    parent: l.clone(),
                    child: r.clone(),
                    score,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.parent.id().cmp(&b.parent.id()))
            .then(a.child.id().cmp(&b.child.id()))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub attributes: BTreeMap<String, Value>,
    pub child: PackRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_id: Option<EntryId>,
    pub id: u64,
    pub parent: PackRef,
    pub score: f64,
    pub status: Status,
    #[serde(rename = "type")]
    pub type_name: String,
}

impl Suggestion {
    fn key(&self) -> (String, PackRef, PackRef) {
        (self.type_name.clone(), self.parent.clone(), self.child.clone())
    }
}

/// The persisted suggestion queue of one multipack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuggestionBook {
    pub next_id: u64,
    pub suggestions: Vec<Suggestion>,
}

impl SuggestionBook {
    /// Replaces the pending suggestions of `type_name` with `candidates`,
    /// keeping ids stable for pairs that were already pending and dropping
    /// pairs that have been decided. Returns the pending queue.
    pub fn refresh(
        &mut self,
        type_name: &str,
        attributes: &BTreeMap<String, Value>,
        candidates: Vec<Candidate>,
    ) -> Vec<Suggestion> {
        let decided: HashSet<(PackRef, PackRef)> = self
            .suggestions
            .iter()
            .filter(|s| s.status != Status::Pending)
            .map(|s| (s.parent.clone(), s.child.clone()))
            .collect();
        let previous: BTreeMap<_, u64> = self
            .suggestions
            .iter()
            .filter(|s| s.status == Status::Pending && s.type_name == type_name)
            .map(|s| (s.key(), s.id))
            .collect();
        self.suggestions
            .retain(|s| s.status != Status::Pending || s.type_name != type_name);
        let mut queue = Vec::new();
        for c in candidates {
            if decided.contains(&(c.parent.clone(), c.child.clone())) {
                continue;
            }
            let key = (type_name.to_string(), c.parent.clone(), c.child.clone());
            let id = previous.get(&key).copied().unwrap_or_else(|| {
                let id = self.next_id;
                self.next_id += 1;
                id
            });
            queue.push(Suggestion {
                attributes: attributes.clone(),
                child: c.child,
                entry_id: None,
                id,
                parent: c.parent,
                score: c.score,
                status: Status::Pending,
                type_name: type_name.to_string(),
            });
        }
        self.suggestions.extend(queue.iter().cloned());
        queue
    }

    pub fn get(&self, id: u64) -> Option<&Suggestion> {
        self.suggestions.iter().find(|s| s.id == id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Suggestion> {
        self.suggestions.iter_mut().find(|s| s.id == id)
    }
}
