#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub const BIN: &str = env!("CARGO_BIN_EXE_precondgen");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic corpus plus trained models under `dir`.
pub struct Fixture {
    pub corpus: PathBuf,
    pub models: PathBuf,
}

pub fn fixture(dir: &Path, seed: u64) -> Fixture {
    let corpus = dir.join("corpus.jsonl");
    let models = dir.join("models");
    let seed = seed.to_string();
    ok(&[
        "synth",
        "--out",
        p(&corpus),
        "--targets",
        "4",
        "--templates",
        "10",
        "--seed",
        &seed,
    ]);
    ok(&[
        "train",
        "--corpus",
        p(&corpus),
        "--out",
        p(&models),
        "--seed",
        &seed,
        "--windows",
        "0,3",
    ]);
    Fixture { corpus, models }
}

/// Relative path to SHA-256 of every file below `root`.
pub fn digest_tree(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, hex::encode(Sha256::digest(fs::read(&path).unwrap())));
            }
        }
    }
    out
}

pub fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
