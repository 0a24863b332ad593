#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dxplain")
}

/// Runs the binary; `args` may mix global and subcommand flags.
pub fn dxplain(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = dxplain(args);
    assert!(
        out.status.success(),
        "dxplain {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// File name to SHA-256 for every file in `dir`.
pub fn digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, hex::encode(Sha256::digest(fs::read(&path).unwrap())));
    }
    out
}

pub fn key_values(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// A generated dataset and a small model trained on it.
pub struct Fixture {
    pub root: tempfile::TempDir,
    pub data: PathBuf,
    pub model: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

pub const SMALL_MODEL: &[&str] = &[
    "--d-model", "16", "--n-heads", "2", "--max-len", "64", "--lr", "0.003", "--batch-size", "16",
];

pub fn fixture(n_records: usize, epochs: usize) -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    let model = root.path().join("model");
    let n = n_records.to_string();
    ok(&["--out-dir", p(&data_dir), "gen-data", "--n-records", &n, "--seed", "5"]);
    let data = data_dir.join("data.jsonl");
    let e = epochs.to_string();
    let mut args = vec!["--out-dir", p(&model), "train", "--data", p(&data), "--epochs", &e];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    Fixture { root, data, model }
}

/// A prediction dump with tp=155, fn=45, fp=35, tn=765 and post lengths
/// spread over all three bins.
pub fn table4_predictions() -> String {
    let mut out = String::from("id,label,score,pred,word_count\n");
    let lengths = [20, 49, 50, 120, 150, 151, 230];
    let mut i = 0;
    for (pred, label, count) in [(1, 1, 155), (0, 1, 45), (1, 0, 35), (0, 0, 765)] {
        for _ in 0..count {
            // positives predicted positive get the higher scores; the
            // per-row offset keeps the ranking free of ties
            let base = if pred == 1 { 0.6 } else { 0.1 };
            let score = base + f64::from(i % 97) / 400.0;
            out.push_str(&format!("p{i:04},{label},{score},{pred},{}\n", lengths[i as usize % lengths.len()]));
            i += 1;
        }
    }
    out
}
