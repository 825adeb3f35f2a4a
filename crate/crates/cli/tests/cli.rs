use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn lignn() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lignn"));
    c.env("LIGNN_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    let out = lignn().args(args).output().expect("spawn lignn");
    assert!(out.status.success(), "lignn {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    serde_json::from_str(text.lines().last().expect("output line")).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Dataset {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Dataset {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("d");
        let out = run(&["build", "--synthetic", "bipartite", "--members", "120", "--items", "120", "--out", s(&root)]);
        assert_eq!(json(&out)["node_counts"]["0"], 120);
        Dataset { _dir: dir, root }
    }

    fn file(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }

    fn graph(&self) -> Vec<String> {
        ["--schema", "schema.txt", "--edges", "edges.tsv", "--nodes", "nodes.tsv"]
            .chunks(2)
            .flat_map(|c| [c[0].to_string(), self.file(c[1])])
            .collect()
    }
}

fn with(base: &[String], extra: &[&str]) -> Vec<String> {
    extra.iter().map(|s| s.to_string()).chain(base.iter().cloned()).collect()
}

fn run_owned(args: &[String]) -> Output {
    run(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn build_reports_rejected_rows_and_round_trips() {
    let d = Dataset::new();
    let out = run_owned(&with(&d.graph(), &["build"]));
    let report = json(&out);
    assert_eq!(report["rejected"].as_array().unwrap().len(), 0);

    let edges = std::fs::read_to_string(d.file("edges.tsv")).unwrap();
    std::fs::write(d.file("bad_edges.tsv"), format!("{edges}0\t1\t9\t1\t2\t1\t0\nnot a row\n")).unwrap();
    let out = run(&["build", "--schema", &d.file("schema.txt"), "--edges", &d.file("bad_edges.tsv")]);
    assert_eq!(json(&out)["rejected"].as_array().unwrap().len(), 2);
}

#[test]
fn densify_writes_edges_and_summary() {
    let d = Dataset::new();
    let nodes = std::fs::read_to_string(d.file("nodes.tsv")).unwrap();
    let mut emb = String::new();
    for line in nodes.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        let id: u64 = cols[1].parse().unwrap();
        emb.push_str(&format!("{}\t{}\t{},{}\n", cols[0], id, (id % 4) as f64, 1.0));
    }
    std::fs::write(d.file("emb.tsv"), emb).unwrap();
    let out_dir = d.root.join("dens");
    let args = with(&d.graph(), &["densify", "--embeddings", &d.file("emb.tsv"), "--k", "3", "--out", s(&out_dir)]);
    let summary = json(&run_owned(&args));
    let n = summary["artificial_edges"].as_u64().unwrap() as usize;
    assert!(n > 0);
    let written = std::fs::read_to_string(out_dir.join("artificial_edges.tsv")).unwrap();
    assert_eq!(written.lines().count(), n);
    assert!(written.lines().all(|l| l.split('\t').nth(2) == Some("100")));
}

#[test]
fn config_file_overrides_flags() {
    let d = Dataset::new();
    let cfg = d.root.join("cfg.toml");
    std::fs::write(&cfg, "[densify]\nk = \"three\"\n").unwrap();
    let args = with(&d.graph(), &["--config", s(&cfg), "densify", "--embeddings", "x"]);
    let out = lignn().args(&args).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn remote_sampling_matches_in_process() {
    let d = Dataset::new();
    let seeds = d.root.join("seeds.tsv");
    std::fs::write(&seeds, "0\t1\n0\t2\n1\t3\n").unwrap();

    let mut child = lignn()
        .args(with(&d.graph(), &["serve", "--bind", "127.0.0.1:0"]))
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let _server = Server(child);
    let addr = line.trim().to_string();

    let local = run_owned(&with(&d.graph(), &["sample", "--seeds", s(&seeds), "--strategy", "ppr-push", "--topk", "5"]));
    let remote = run(&["sample", "--engine", &addr, "--seeds", s(&seeds), "--strategy", "ppr-push", "--topk", "5"]);
    assert!(!local.stdout.is_empty());
    assert_eq!(local.stdout, remote.stdout);
}

#[test]
fn train_then_refresh() {
    let d = Dataset::new();
    let ckpt = d.root.join("model.json");
    let metrics = d.root.join("metrics.jsonl");
    let args = with(
        &d.graph(),
        &[
            "train",
            "--train",
            &d.file("train.tsv"),
            "--validation",
            &d.file("validation.tsv"),
            "--epochs",
            "1",
            "--checkpoint",
            s(&ckpt),
            "--metrics",
            s(&metrics),
        ],
    );
    let summary = json(&run_owned(&args));
    assert_eq!(summary["epochs"], 1);
    assert_eq!(std::fs::read_to_string(&metrics).unwrap().lines().count(), 1);

    let events = d.root.join("events.tsv");
    let mut f = std::fs::File::create(&events).unwrap();
    writeln!(f, "1000\tclick\t0\t1\t1\t2").unwrap();
    writeln!(f, "1001\tapply\t0\t4\t1\t5").unwrap();
    writeln!(f, "1002\tclick\t0\t99999\t1\t5").unwrap();
    drop(f);
    let store = d.root.join("store.tsv");
    let args = with(
        &d.graph(),
        &["refresh", "--checkpoint", s(&ckpt), "--events", s(&events), "--store-out", s(&store)],
    );
    let report = json(&run_owned(&args));
    assert!(report.is_object());
    assert!(std::fs::metadata(&store).unwrap().len() > 0);
}
