#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_momentkit")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs and panics with stderr unless the command succeeds.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn golden_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Every file under `dir`, keyed by its path relative to `dir`.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Byte comparison of two directory trees. Returns the first difference.
pub fn diff_trees(actual: &Path, expected: &Path) -> Option<String> {
    let a = tree(actual);
    let e = tree(expected);
    let a_names: Vec<_> = a.keys().collect();
    let e_names: Vec<_> = e.keys().collect();
    if a_names != e_names {
        return Some(format!("file sets differ: {a_names:?} vs {e_names:?}"));
    }
    a.iter()
        .find(|(k, v)| e[*k] != **v)
        .map(|(k, _)| format!("{} differs", k.display()))
}

/// Replaces `golden` with `actual` when `UPDATE_GOLDEN` is set.
pub fn maybe_update(actual: &Path, golden: &Path) {
    if std::env::var_os("UPDATE_GOLDEN").is_none() {
        return;
    }
    let _ = std::fs::remove_dir_all(golden);
    for (rel, bytes) in tree(actual) {
        let path = golden.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
    }
}

/// Writes the standard three-video fixture into `dir`.
pub fn fixture(dir: &Path) -> PathBuf {
    let fx = dir.join("fixture");
    ok(&[
        "synth",
        "--out",
        fx.to_str().unwrap(),
        "--videos",
        "3",
        "--seed",
        "11",
    ]);
    fx
}
