//! Shared fixtures: a toy corpus and norm file, and helpers for driving the binary.
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

pub const DIM: usize = 16;
pub const SOURCE: &str = "pseudo-bert";
pub const FEATURES: [&str; 8] = ["Vision", "Biomotion", "Body", "Human", "Face", "Speech", "Landmark", "Scene"];

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_featurescope")
}

pub fn featurescope(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("FEATURESCOPE_EXTRACTOR_URL")
        .output()
        .expect("spawn featurescope")
}

/// Runs and panics with stderr on a nonzero exit.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = featurescope(dir, args);
    assert!(
        out.status.success(),
        "featurescope {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn vocab() -> Vec<String> {
    (0..48).map(|i| format!("noun{i:02}")).collect()
}

/// Deterministic 160-line corpus over the toy vocabulary and a few fillers.
pub fn corpus() -> String {
    let v = vocab();
    let fillers = ["the", "a", "saw", "near", "with", "London"];
    let mut s: u64 = 12345;
    let mut next = |n: usize| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 33) % n as u64) as usize
    };
    let mut out = String::new();
    for _ in 0..160 {
        let words: Vec<&str> = (0..7)
            .map(|k| if k % 2 == 0 { v[next(v.len())].as_str() } else { fillers[next(fillers.len())] })
            .collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

/// Norms on the 0..6 scale for the vocabulary, plus a word absent from the corpus.
pub fn norms_csv() -> String {
    let mut out = format!("word,{}\n", FEATURES.join(","));
    for (i, w) in vocab().iter().chain(std::iter::once(&"unseen".to_string())).enumerate() {
        let row: Vec<String> = (0..FEATURES.len())
            .map(|f| format!("{:.2}", ((i * 7 + f * 5) % 13) as f64 * 6.0 / 12.0))
            .collect();
        out.push_str(&format!("{w},{}\n", row.join(",")));
    }
    out
}

pub const TRAIN_CONFIG: &str = r#"{"hidden_size": 12, "batch_size": 16, "learning_rate": 0.005, "max_epochs": 30, "seed": 7}"#;
pub const TUNE_TRAIN_CONFIG: &str = r#"{"max_epochs": 15, "seed": 3}"#;

/// Writes the corpus, norms and configs, extracts layers 0, 4, 8 and ingests them.
pub fn prepare_store(dir: &Path) {
    std::fs::write(dir.join("corpus.txt"), corpus()).unwrap();
    std::fs::write(dir.join("binder.csv"), norms_csv()).unwrap();
    std::fs::write(dir.join("train.json"), TRAIN_CONFIG).unwrap();
    std::fs::write(dir.join("tune-train.json"), TUNE_TRAIN_CONFIG).unwrap();
    let dim = DIM.to_string();
    ok(
        dir,
        &[
            "stub-extract", "--corpus", "corpus.txt", "--model-name", SOURCE, "--layers", "0,4,8", "--dim", &dim,
            "--out", "records.jsonl",
        ],
    );
    ok(dir, &["ingest", "--store", "store", "--input", "records.jsonl", "--model-name", SOURCE, "--batch-size", "500"]);
}

pub fn train_layer(dir: &Path, layer: u32) -> PathBuf {
    let out = format!("l{layer}.fsproj");
    let layer = layer.to_string();
    ok(
        dir,
        &[
            "train", "--store", "store", "--norms", "binder.csv", "--config", "train.json", "--layer", &layer, "--out",
            &out,
        ],
    );
    dir.join(out)
}

/// Store plus projectors for layers 4 and 8 and a registry naming both.
pub fn prepare_models(dir: &Path) {
    prepare_store(dir);
    train_layer(dir, 4);
    train_layer(dir, 8);
    std::fs::write(dir.join("registry.json"), registry_json(&[("bert-l4", "l4.fsproj", 4), ("bert-l8", "l8.fsproj", 8)]))
        .unwrap();
}

pub fn registry_json(entries: &[(&str, &str, u32)]) -> String {
    let body: Vec<String> = entries
        .iter()
        .map(|(id, path, layer)| format!(r#""{id}": {{"path": "{path}", "source_model": "{SOURCE}", "layer": {layer}}}"#))
        .collect();
    format!("{{{}}}", body.join(", "))
}

/// A background server process; killed on drop.
pub struct Server {
    child: Child,
    pub url: String,
}

impl Server {
    pub fn spawn(dir: &Path, args: &[&str]) -> Self {
        let mut child = Command::new(bin())
            .args(args)
            .args(["--bind", "127.0.0.1:0"])
            .current_dir(dir)
            .env_remove("FEATURESCOPE_EXTRACTOR_URL")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn server");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected server banner `{line}`"))
            .to_string();
        Self { child, url }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

/// `(status, parsed JSON body)`.
pub fn get_json(url: &str) -> (u16, serde_json::Value) {
    let mut r = agent().get(url).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

pub fn post_raw(url: &str, body: &str) -> (u16, serde_json::Value) {
    let mut r = agent()
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .unwrap();
    (r.status().as_u16(), r.body_mut().read_json().unwrap())
}

pub fn post_json(url: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
    post_raw(url, &body.to_string())
}

/// Port with nothing listening on it.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = l.local_addr().unwrap().port();
    drop(l);
    format!("http://127.0.0.1:{port}")
}
