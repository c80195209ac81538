use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};
use textflow::pipeline::{assemble, Workflow};
use textflow::processors::Registry;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn textflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textflow")).args(args).output().unwrap()
}

fn out(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn err(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// The clinical fixture with only the first `n` notes.
fn small_clinical(dst: &Path, n: usize) {
    let src = fixtures().join("clinical");
    for sub in ["corpus", "lexicons"] {
        std::fs::create_dir_all(dst.join(sub)).unwrap();
    }
    for f in ["workflow.json", "clinical_ontology.json", "lexicons/clinical_terms.tsv", "lexicons/sentiment.tsv"] {
        std::fs::copy(src.join(f), dst.join(f)).unwrap();
    }
    for i in 1..=n {
        let f = format!("corpus/note{i:02}.txt");
        std::fs::copy(src.join(&f), dst.join(&f)).unwrap();
    }
}

#[test]
fn ontology_validate_reports_count_or_problems() {
    let fig2 = fixtures().join("ontology/fig2_dependency.json");
    let o = textflow(&["ontology", "validate", fig2.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(out(&o), "OK: 1 types\n");
    assert!(err(&o).contains("built-in"));

    let broken = fixtures().join("ontology/broken.json");
    let o = textflow(&["ontology", "validate", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let lines: Vec<String> = out(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("cycle"));
    assert!(lines[1].contains("x.C") && lines[1].contains("begin"));
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["run"][..], &["frobnicate"], &["ontology", "validate", "a", "--bogus"], &["index", "search", "--index", "x", "--query", "q", "--mode", "fuzzy"]] {
        let o = textflow(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(out(&o).is_empty());
        assert!(err(&o).contains("Usage"), "{args:?}");
    }
    let o = textflow(&["run", "--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn missing_workflow_is_an_operational_error() {
    let o = textflow(&["run", "missing.json", "--out", "unused"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(out(&o).is_empty());
    assert!(err(&o).contains("missing.json"));
}

#[test]
fn run_writes_one_pack_per_document() {
    let tmp = tempfile::tempdir().unwrap();
    small_clinical(tmp.path(), 3);
    let wf = tmp.path().join("workflow.json");
    let dest = tmp.path().join("out");
    let o = textflow(&["run", wf.to_str().unwrap(), "--out", dest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", err(&o));
    assert_eq!(out(&o), "note01\tok\nnote02\tok\nnote03\tok\nsummary\tok=3\tfailed=0\n");

    // Oracle: the same workflow run in-process.
    let workflow = Workflow::from_file(&wf).unwrap();
    let pipeline = assemble(&workflow, &Registry::standard(), Some(tmp.path().join("lib-out"))).unwrap();
    let source = workflow.open_reader(pipeline.ontology().clone()).unwrap();
    let mut n = 0;
    for outcome in pipeline.run(source) {
        let pack = outcome.unwrap().result.unwrap();
        let written = std::fs::read_to_string(dest.join(format!("{}.json", pack.pack_id()))).unwrap();
        assert_eq!(written, pack.to_json());
        n += 1;
    }
    assert_eq!(n, 3);
    assert_eq!(std::fs::read_dir(&dest).unwrap().count(), 3);
}

#[test]
fn run_without_writer_gets_one_and_failures_are_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(tmp.path().join("docs")).unwrap();
    std::fs::write(tmp.path().join("docs/a.txt"), "Fine text.").unwrap();
    std::fs::write(tmp.path().join("docs/b.txt"), "More text.").unwrap();
    // A dot-prefixed pack id is refused by the writer, for that document only.
    std::fs::write(tmp.path().join("docs/.hidden.txt"), "Third.").unwrap();
    let wf = tmp.path().join("wf.json");
    std::fs::write(&wf, json!({"reader": {"kind": "dir", "path": "docs"}, "processors": [{"name": "tokenize"}]}).to_string())
        .unwrap();
    let dest = tmp.path().join("out");
    let o = textflow(&["run", wf.to_str().unwrap(), "--out", dest.to_str().unwrap()]);
    assert_eq!(out(&o), ".hidden\tfailed\na\tok\nb\tok\nsummary\tok=2\tfailed=1\n");
    assert_eq!(o.status.code(), Some(1));
    assert!(err(&o).contains("pack_writer"));
    assert!(dest.join("a.json").exists() && dest.join("b.json").exists());
}

#[test]
fn index_build_and_search_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    small_clinical(tmp.path(), 10);
    let wf = tmp.path().join("workflow.json");
    let packs = tmp.path().join("packs");
    assert_eq!(textflow(&["run", wf.to_str().unwrap(), "--out", packs.to_str().unwrap()]).status.code(), Some(0));
    let onto = tmp.path().join("clinical_ontology.json");
    let index = tmp.path().join("idx.json");
    let o = textflow(&[
        "index", "build", "--input", packs.to_str().unwrap(), "--out", index.to_str().unwrap(), "--field", "Sentence",
        "--ontology", onto.to_str().unwrap(), "--dim", "32", "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", err(&o));
    let bundle: Value = serde_json::from_str(&std::fs::read_to_string(&index).unwrap()).unwrap();
    assert_eq!(bundle["embedding"], json!({"dim": 32, "seed": 3}));

    for mode in ["symbolic", "vector", "hybrid"] {
        let o = textflow(&["index", "search", "--index", index.to_str().unwrap(), "--query", "metformin", "-k", "4", "--mode", mode]);
        assert_eq!(o.status.code(), Some(0), "{}", err(&o));
        let text = out(&o);
        let lines: Vec<&str> = text.lines().collect();
        assert!(!lines.is_empty() && lines.len() <= 4, "{mode}: {text}");
        for l in &lines {
            let (id, score) = l.split_once('\t').unwrap();
            assert!(id.contains('#'), "sentence ids look like pack#entry: {id}");
            assert_eq!(score.split_once('.').unwrap().1.len(), 6);
        }
        if mode != "vector" {
            assert!(lines[0].starts_with("note01#") || lines[0].starts_with("note06#"), "{mode}: {text}");
        }
        // Identical invocations print identical bytes.
        assert_eq!(out(&textflow(&["index", "search", "--index", index.to_str().unwrap(), "--query", "metformin", "-k", "4", "--mode", mode])), text);
    }
    // Without the ontology the packs cannot be read.
    let o = textflow(&["index", "build", "--input", packs.to_str().unwrap(), "--out", index.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = textflow(&["index", "search", "--index", "nope.json", "--query", "x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn serve_answers_and_honours_port_env() {
    let tmp = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_textflow"))
        .args(["serve", "--root", tmp.path().to_str().unwrap()])
        .env("TEXTFLOW_PORT", "0")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let client = reqwest::blocking::Client::new();
    let resp = client.get(format!("{base}/projects")).send().unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.json::<Value>().unwrap(), json!({"projects": []}));
    let resp = client
        .post(format!("{base}/projects"))
        .header("origin", "http://localhost:5173")
        .json(&json!({"name": "demo"}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), 201);
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(tmp.path().join("demo").is_dir());
}
