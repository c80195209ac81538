#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::Rng;
use serde_json::{json, Value};
use textflow::{DataPack, EntryId, TypeOntology};
use textflow_service::journal::{EntryBody, Op};
use textflow_service::{router, ProjectStore};

pub const WORDS: &[&str] = &["the", "storm", "hit", "Cairo", "talks", "ended", "in", "Sharm", "a", "deal"];

pub fn random_text(rng: &mut StdRng, words: usize) -> String {
    (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn seed_pack(id: &str, rng: &mut StdRng) -> DataPack {
    let n = rng.random_range(3..12);
    DataPack::new(id, random_text(rng, n), Arc::new(TypeOntology::with_defaults()))
}

fn span_body(ty: &str, begin: usize, end: usize, attributes: BTreeMap<String, Value>) -> EntryBody {
    EntryBody {
        attributes,
        begin: Some(begin),
        child: None,
        embedding: None,
        end: Some(end),
        members: None,
        parent: None,
        type_name: ty.into(),
    }
}

fn candidate(rng: &mut StdRng, pack: &DataPack) -> Op {
    let len = pack.text_len();
    let spans: Vec<EntryId> = pack.entries().filter(|e| e.span.is_some()).map(|e| e.id).collect();
    let all: Vec<EntryId> = pack.entries().map(|e| e.id).collect();
    let pick = |rng: &mut StdRng, ids: &[EntryId]| ids[rng.random_range(0..ids.len())];
    match rng.random_range(0..10) {
        0..4 => {
            let a = rng.random_range(0..=len);
            let b = rng.random_range(0..=len);
            let (ty, attrs) = match rng.random_range(0..4) {
                0 => ("Token", BTreeMap::new()),
                1 => ("EntityMention", BTreeMap::from([("ner_type".to_string(), json!("LOC"))])),
                2 => ("EventMention", BTreeMap::new()),
                _ => ("Sentence", BTreeMap::from([("sentiment".to_string(), json!(rng.random_range(-1.0..1.0f64)))])),
            };
            Op::Add { entry: span_body(ty, a.min(b), a.max(b), attrs) }
        }
        4..6 if !spans.is_empty() => {
            let mut body = span_body("Relation", 0, 0, BTreeMap::from([("rel_type".to_string(), json!("near"))]));
            body.begin = None;
            body.end = None;
            body.parent = Some(pick(rng, &spans));
            body.child = Some(pick(rng, &spans));
            Op::Add { entry: body }
        }
        6..8 if !spans.is_empty() => {
            let id = pick(rng, &spans);
            let e = pack.entry(id).unwrap();
            let mut attributes = BTreeMap::new();
            let (mut begin, mut end) = (None, None);
            if rng.random_bool(0.5) {
                let s = e.span.unwrap();
                begin = Some(rng.random_range(0..=s.begin));
                end = Some(rng.random_range(s.end..=len));
            } else if e.type_name == "EntityMention" {
                attributes.insert("ner_type".into(), if rng.random_bool(0.8) { Some(json!("ORG")) } else { None });
            } else if e.type_name == "EventMention" {
                attributes.insert("event_type".into(), Some(json!("attack")));
            }
            Op::Update { attributes, begin, end, id }
        }
        _ if !all.is_empty() => Op::Delete { cascade: rng.random_bool(0.7), id: pick(rng, &all) },
        _ => Op::Add { entry: span_body("Token", 0, 0, BTreeMap::new()) },
    }
}

/// A random op that succeeds on `pack`, and the resulting pack.
pub fn random_op(rng: &mut StdRng, pack: &DataPack) -> (Op, DataPack) {
    loop {
        let op = candidate(rng, pack);
        let mut next = pack.clone();
        if op.apply(&mut next).is_ok() {
            return (op, next);
        }
    }
}

/// Serves the store on an ephemeral port; returns the base URL.
pub async fn spawn(store: Arc<ProjectStore>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(store, None)).await.unwrap() });
    format!("http://{addr}")
}

/// Sends `op` over HTTP against `revision`.
pub async fn send_op(client: &reqwest::Client, base: &str, project: &str, pack: &str, revision: u64, op: &Op) -> reqwest::Response {
    let entries = format!("{base}/projects/{project}/packs/{pack}/entries");
    match op {
        Op::Add { entry } => client.post(&entries).json(&json!({"revision": revision, "entry": entry})),
        Op::Update { attributes, begin, end, id } => client
            .patch(format!("{entries}/{id}"))
            .json(&json!({"revision": revision, "begin": begin, "end": end, "attributes": attributes})),
        Op::Delete { cascade, id } => client.delete(format!("{entries}/{id}?cascade={cascade}&revision={revision}")),
    }
    .send()
    .await
    .unwrap()
}
