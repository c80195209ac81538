use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use textflow::tensorize::{hashed_embedding, EmbeddingConfig};
use textflow::{DataPack, EntryId, MultiPack, NewEntry, PackRef, TypeOntology};
use textflow_service::suggest::suggest_cross_doc_links;

const VOCAB: &[&str] = &["bomb", "attack", "blast", "summit", "talks", "flood", "storm", "riot", "vote", "deal"];

fn random_pack(rng: &mut StdRng, id: &str, ont: &Arc<TypeOntology>) -> DataPack {
    let n = rng.random_range(1..15);
    let words: Vec<&str> = (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
    let text = words.join(" ");
    let mut starts = Vec::new();
    let mut at = 0;
    for w in &words {
        starts.push((at, at + w.len()));
        at += w.len() + 1;
    }
    let mut pack = DataPack::new(id, text, ont.clone());
    for _ in 0..rng.random_range(0..8) {
        let i = rng.random_range(0..starts.len());
        let j = rng.random_range(i..starts.len().min(i + 3));
        let ty = if rng.random_bool(0.8) { "EventMention" } else { "EntityMention" };
        pack.add_entry(NewEntry::span(ty, starts[i].0, starts[j].1)).unwrap();
    }
    pack
}

/// Normalized mean of per-word hash vectors, computed from scratch.
fn oracle_embedding(text: &str, cfg: &EmbeddingConfig) -> Vec<f64> {
    let mut acc = vec![0.0f64; cfg.dim];
    for w in text.split_whitespace() {
        for (a, x) in acc.iter_mut().zip(hashed_embedding(w, cfg)) {
            *a += f64::from(x);
        }
    }
    let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        acc.iter_mut().for_each(|x| *x /= n);
    }
    acc
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[test]
fn suggestions_match_exhaustive_pair_enumeration() {
    let ont = Arc::new(TypeOntology::with_defaults());
    for seed in 0..200u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let cfg = EmbeddingConfig {
            dim: rng.random_range(8..65),
            seed: rng.random(),
        };
        let threshold = rng.random_range(-0.2..1.0f64);
        let mut mp = MultiPack::new("m", ont.clone());
        mp.add_pack("left", random_pack(&mut rng, "l", &ont)).unwrap();
        mp.add_pack("right", random_pack(&mut rng, "r", &ont)).unwrap();

        let side = |alias: &str| -> Vec<(EntryId, Vec<f64>)> {
            let pack = mp.pack(alias).unwrap();
            pack.entries()
                .filter(|e| e.type_name == "EventMention")
                .map(|e| (e.id, oracle_embedding(pack.span_text(e.id).unwrap(), &cfg)))
                .collect()
        };
        let (left, right) = (side("left"), side("right"));
        let mut linked = HashSet::new();
        if !left.is_empty() && !right.is_empty() && rng.random_bool(0.5) {
            let (l, r) = (left[rng.random_range(0..left.len())].0, right[rng.random_range(0..right.len())].0);
            let (p, c) = if rng.random_bool(0.5) {
                (PackRef::new("left", l), PackRef::new("right", r))
            } else {
                (PackRef::new("right", r), PackRef::new("left", l))
            };
            mp.add_cross_link("CrossDocLink", p, c, BTreeMap::new()).unwrap();
            linked.insert((l, r));
        }

        let mut expected = Vec::new();
        for (l, lv) in &left {
            for (r, rv) in &right {
                let s = cosine(lv, rv);
                if s >= threshold && !linked.contains(&(*l, *r)) {
                    expected.push((*l, *r, s));
                }
            }
        }
        let got = suggest_cross_doc_links(&mp, "EventMention", threshold, &cfg).unwrap();

        // Borderline scores may land on either side of the threshold.
        let near = |s: f64| (s - threshold).abs() <= 1e-6;
        let got_keys: HashSet<_> = got.iter().map(|c| (c.parent.id(), c.child.id())).collect();
        for (l, r, s) in &expected {
            assert!(got_keys.contains(&(*l, *r)) || near(*s), "seed {seed}: missing ({l},{r})");
        }
        for c in &got {
            assert_eq!((c.parent.alias(), c.child.alias()), ("left", "right"));
            let want = cosine(
                &left.iter().find(|x| x.0 == c.parent.id()).unwrap().1,
                &right.iter().find(|x| x.0 == c.child.id()).unwrap().1,
            );
            assert!((c.score - want).abs() <= 1e-6, "seed {seed}: {} vs {want}", c.score);
            assert!(want >= threshold || near(want));
            assert!(!linked.contains(&(c.parent.id(), c.child.id())));
        }
        for w in got.windows(2) {
            let key = |c: &textflow_service::suggest::Candidate| (c.parent.id(), c.child.id());
            assert!(w[0].score > w[1].score || (w[0].score == w[1].score && key(&w[0]) < key(&w[1])));
        }
    }
}
