use std::sync::Arc;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;
use textflow::pipeline::{memory_reader, Pipeline};
use textflow::processors::{
    token_spans, BuildContext, CooccurrenceRelations, KeywordSentiment, Lexicon, LexiconNer, PackWriter,
    Processor, ProcessorConfig, ProcessorError, Registry, SentenceSplitter, Tokenizer,
};
use textflow::{DataPack, Entry, TypeOntology};

const WORDS: [&str; 12] = [
    "aspirin", "Aspirin", "new", "york", "good", "bad", "fine", "naïve", "rock", "the", "patient", "émile",
];
const PUNCT: [&str; 6] = [".", "!", "?", ",", ";", "-"];

fn random_text(rng: &mut StdRng) -> String {
    let mut out = String::new();
    for _ in 0..rng.random_range(0..40) {
        match rng.random_range(0..10) {
            0..=5 => out.push_str(WORDS[rng.random_range(0..WORDS.len())]),
            6 | 7 => out.push_str(PUNCT[rng.random_range(0..PUNCT.len())]),
            8 => out.push('\n'),
            _ => out.push_str("  "),
        }
        if rng.random_bool(0.7) {
            out.push(' ');
        }
    }
    out
}

fn ner_lexicon() -> Lexicon<String> {
    Lexicon::from_pairs(
        [("aspirin", "DRUG".to_string()), ("new york", "LOC".to_string()), ("york", "LOC".to_string()), ("naïve patient", "X".to_string())],
        false,
    )
    .unwrap()
}

fn sentiment_lexicon() -> Lexicon<f64> {
    Lexicon::from_pairs([("good", 1.0), ("bad", -1.0), ("fine", 0.5)], false).unwrap()
}

fn ontology() -> Arc<TypeOntology> {
    Arc::new(TypeOntology::with_defaults())
}

/// Checks that `after` differs from `before` only by entries of produced
/// types and by declared attribute writes.
fn assert_write_set(p: &dyn Processor, before: &DataPack, after: &DataPack) {
    let ont = before.ontology();
    for old in before.entries() {
        let new = after.entry(old.id).unwrap_or_else(|| panic!("{} deleted entry {}", p.name(), old.id));
        assert_eq!(
            (&old.type_name, old.span, old.link, &old.members, &old.embedding),
            (&new.type_name, new.span, new.link, &new.members, &new.embedding),
            "{} changed structure of {}",
            p.name(),
            old.id
        );
        let keys: std::collections::BTreeSet<&String> = old.attributes.keys().chain(new.attributes.keys()).collect();
        for k in keys {
            if old.attributes.get(k) != new.attributes.get(k) {
                let allowed = p
                    .writes_attributes()
                    .iter()
                    .any(|(ty, a)| a == k && ont.is_subtype(&old.type_name, ty).unwrap());
                assert!(allowed, "{} wrote undeclared {}.{}", p.name(), old.type_name, k);
            }
        }
    }
    for e in after.entries().filter(|e| before.entry(e.id).is_none()) {
        let declared = p.produces().iter().any(|ty| ont.is_subtype(&e.type_name, ty).unwrap());
        assert!(declared, "{} added undeclared {}", p.name(), e.type_name);
    }
    assert_eq!(before.text(), after.text());
}

fn chain() -> Vec<Box<dyn Processor>> {
    vec![
        Box::new(Tokenizer),
        Box::new(SentenceSplitter),
        Box::new(LexiconNer::new(ner_lexicon())),
        Box::new(CooccurrenceRelations::new("cooccur")),
        Box::new(KeywordSentiment::new(sentiment_lexicon())),
    ]
}

fn texts(e: &[&Entry], pack: &DataPack) -> Vec<String> {
    e.iter().map(|x| pack.span_text(x.id).unwrap().to_string()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn processors_stay_inside_their_write_sets(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut pack = DataPack::new("p", random_text(&mut rng), ontology());
        for p in chain() {
            let before = pack.clone();
            p.process(&mut pack).unwrap();
            assert_write_set(p.as_ref(), &before, &pack);
        }
        let dir = tempfile::tempdir().unwrap();
        let writer = PackWriter::new(dir.path());
        let before = pack.clone();
        writer.process(&mut pack).unwrap();
        assert_write_set(&writer, &before, &pack);
        let written = std::fs::read_to_string(dir.path().join("p.json")).unwrap();
        prop_assert_eq!(&DataPack::from_json(&written, ontology()).unwrap(), &pack);
    }

    #[test]
    fn tokens_are_disjoint_and_cover_all_non_whitespace(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let text = random_text(&mut rng);
        let chars: Vec<char> = text.chars().collect();
        let spans = token_spans(&text);
        let mut covered = vec![false; chars.len()];
        let mut last_end = 0;
        for &(b, e) in &spans {
            prop_assert!(b >= last_end && b < e);
            last_end = e;
            for c in covered.iter_mut().take(e).skip(b) {
                *c = true;
            }
            let tok: String = chars[b..e].iter().collect();
            let alnum = tok.chars().all(char::is_alphanumeric);
            prop_assert!(alnum || tok.chars().count() == 1, "token {:?}", tok);
        }
        for (i, c) in chars.iter().enumerate() {
            prop_assert_eq!(covered[i], !c.is_whitespace(), "char {} {:?}", i, c);
        }
        // Reconstruct the non-whitespace content from tokens.
        let joined: String = spans.iter().flat_map(|&(b, e)| chars[b..e].iter()).collect();
        let stripped: String = chars.iter().filter(|c| !c.is_whitespace()).collect();
        prop_assert_eq!(joined, stripped);
    }

    #[test]
    fn sentences_partition_non_whitespace(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut pack = DataPack::new("p", random_text(&mut rng), ontology());
        SentenceSplitter.process(&mut pack).unwrap();
        let chars: Vec<char> = pack.text().chars().collect();
        let mut owner = vec![0usize; chars.len()];
        for s in pack.get_entries("Sentence", false).unwrap() {
            let span = s.span.unwrap();
            prop_assert!(!chars[span.begin].is_whitespace() && !chars[span.end - 1].is_whitespace());
            for o in owner.iter_mut().take(span.end).skip(span.begin) {
                *o += 1;
            }
        }
        for (i, c) in chars.iter().enumerate() {
            if !c.is_whitespace() {
                prop_assert_eq!(owner[i], 1);
            }
        }
    }

    #[test]
    fn mentions_are_disjoint_lexicon_surfaces_and_relations_count(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut pack = DataPack::new("p", random_text(&mut rng), ontology());
        for p in chain() {
            p.process(&mut pack).unwrap();
        }
        let lex = ner_lexicon();
        let mentions = pack.get_entries("EntityMention", true).unwrap();
        let mut last_end = 0;
        for (m, surface) in mentions.iter().zip(texts(&mentions, &pack)) {
            let span = m.span.unwrap();
            prop_assert!(span.begin >= last_end);
            last_end = span.end;
            let label = lex.get(&lex.normalize(&surface)).unwrap();
            prop_assert_eq!(m.attr("ner_type").unwrap().as_str().unwrap(), label.as_str());
        }
        // Relation count equals sum over sentences of m(m-1)/2.
        let expected: usize = pack
            .get_entries("Sentence", true)
            .unwrap()
            .iter()
            .map(|s| {
                let m = pack.get_covered(s.id, "EntityMention", true).unwrap().len();
                m * m.saturating_sub(1) / 2
            })
            .sum();
        prop_assert_eq!(pack.get_entries("Relation", true).unwrap().len(), expected);
        // Sentiment is the mean over matched tokens.
        let lexs = sentiment_lexicon();
        for s in pack.get_entries("Sentence", true).unwrap() {
            let toks = pack.get_covered(s.id, "Token", true).unwrap();
            let vals: Vec<f64> = texts(&toks, &pack).iter().filter_map(|t| lexs.get(&t.to_lowercase()).copied()).collect();
            let want = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            prop_assert_eq!(s.attr("sentiment").unwrap().as_f64().unwrap(), want);
        }
    }

    #[test]
    fn processors_are_deterministic(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let text = random_text(&mut rng);
        let run = || {
            let mut pack = DataPack::new("p", text.clone(), ontology());
            for p in chain() {
                p.process(&mut pack).unwrap();
            }
            pack.to_json()
        };
        prop_assert_eq!(run(), run());
    }

    /// Any random processor list that assembles never hits a missing
    /// dependency at run time.
    #[test]
    fn assembled_pipelines_never_miss_dependencies(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let names = ["tokenize", "split_sentences", "lexicon_ner", "cooccurrence_relations", "keyword_sentiment"];
        let n = rng.random_range(0..6);
        let configs: Vec<ProcessorConfig> = (0..n)
            .map(|_| {
                let name = names[rng.random_range(0..names.len())];
                match name {
                    "lexicon_ner" => ProcessorConfig::with_params(name, json!({"entries": {"aspirin": "DRUG", "york": "LOC"}})),
                    "keyword_sentiment" => ProcessorConfig::with_params(name, json!({"entries": {"good": 1.0}})),
                    _ => ProcessorConfig::new(name),
                }
            })
            .collect();
        let ctx = BuildContext::new(ontology());
        let registry = Registry::standard();
        let procs: Vec<Box<dyn Processor>> = configs.iter().map(|c| registry.build(c, &ctx).unwrap()).collect();
        if let Ok(pipeline) = Pipeline::new(ontology(), procs) {
            let packs: Vec<DataPack> = (0..3).map(|i| DataPack::new(format!("p{i}"), random_text(&mut rng), ontology())).collect();
            for outcome in pipeline.run(memory_reader(packs)) {
                let outcome = outcome.unwrap();
                if let Err(f) = &outcome.result {
                    prop_assert!(!f.error.contains("missing"), "{:?}", f);
                }
            }
        }
    }
}

#[test]
fn hand_traced_examples() {
    let mut pack = DataPack::new("p", "Hello, world.", ontology());
    Tokenizer.process(&mut pack).unwrap();
    let spans: Vec<(usize, usize)> = pack
        .get_entries("Token", false)
        .unwrap()
        .iter()
        .map(|e| (e.span.unwrap().begin, e.span.unwrap().end))
        .collect();
    assert_eq!(spans, [(0, 5), (5, 6), (7, 12), (12, 13)]);

    let mut pack = DataPack::new("p", "new york", ontology());
    Tokenizer.process(&mut pack).unwrap();
    LexiconNer::new(ner_lexicon()).process(&mut pack).unwrap();
    let m = pack.get_entries("EntityMention", false).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!((m[0].span.unwrap().begin, m[0].span.unwrap().end), (0, 8));

    let mut pack = DataPack::new("p", "good good bad", ontology());
    Tokenizer.process(&mut pack).unwrap();
    SentenceSplitter.process(&mut pack).unwrap();
    KeywordSentiment::new(sentiment_lexicon()).process(&mut pack).unwrap();
    let s = pack.get_entries("Sentence", false).unwrap();
    assert_eq!(s[0].attr("sentiment").unwrap().as_f64().unwrap(), 1.0 / 3.0);

    let mut pack = DataPack::new("p", "aspirin", ontology());
    assert!(matches!(
        LexiconNer::new(ner_lexicon()).process(&mut pack),
        Err(ProcessorError::MissingDependency(_))
    ));

    let mut bad = DataPack::new("../evil", "x", ontology());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        PackWriter::new(dir.path()).process(&mut bad),
        Err(ProcessorError::InvalidPackId(_))
    ));
}
