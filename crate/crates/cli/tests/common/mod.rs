#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn avatar(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avatar"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn avatar")
}

/// Runs a command that must succeed and returns its stdout.
pub fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = avatar(cwd, args);
    assert!(
        out.status.success(),
        "avatar {args:?} exited {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

/// Three 17-frame 16×16 samples, a two-block model and a few steps
/// everywhere, so every command finishes in well under a second.
pub fn write_small_configs(dir: &Path) {
    let files = [
        (
            "corpus.json",
            r#"{"n_train": 2, "n_test": 1, "seed": 4, "synth": {"frames": 17}}"#,
        ),
        (
            "train.json",
            r#"{
  "mode": "lora",
  "steps": 6,
  "clip_len": 5,
  "prefix_max": 2,
  "seed": 2,
  "dit": {"n_blocks": 2, "d_model": 16, "n_heads": 2, "d_ff": 32, "injection_first": 2, "injection_last": 2, "time_dim": 16},
  "corpus": "corpus",
  "out": "ck"
}"#,
        ),
        (
            "generate.json",
            r#"{
  "checkpoint": "ck",
  "source": {"corpus": "corpus", "id": "s0000"},
  "request": {"s": 5, "f": 2, "sampler": {"steps": 3, "pixel_range": true}}
}"#,
        ),
        (
            "generate_files.json",
            r#"{
  "checkpoint": "ck",
  "source": {"wav": "corpus/s0001.wav", "reference": "corpus/s0001.video.oavt"},
  "request": {"prompt": "a round face speaking", "s": 5, "f": 2, "sampler": {"steps": 3}}
}"#,
        ),
        (
            "eval.json",
            r#"{"checkpoint": "ck", "corpus": "corpus", "s": 5, "f": 2, "sampler": {"steps": 3, "pixel_range": true}}"#,
        ),
    ];
    for (name, text) in files {
        std::fs::write(dir.join(name), text).unwrap();
    }
}

/// Every file under `root`, keyed by its relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
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
    walk(root, root, &mut out);
    out
}
