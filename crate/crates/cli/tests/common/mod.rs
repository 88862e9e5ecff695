#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn cnnlstm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnnlstm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

/// Template sentences in paragraphs of five.
pub fn template_corpus(paragraphs: usize) -> String {
    let subjects = ["i", "you", "he", "she", "we", "they"];
    let verbs = ["needed", "got", "saw", "liked", "hated", "helped"];
    let objects = ["me", "him", "her", "us", "them", "it"];
    let mut out = String::new();
    let mut k = 0usize;
    for _ in 0..paragraphs {
        for _ in 0..5 {
            out.push_str(&format!("{} {} {} .\n", subjects[k % 6], verbs[(k / 6) % 6], objects[(k * 7 + 3) % 6]));
            k += 1;
        }
        out.push('\n');
    }
    out
}

pub const SMALL_MODEL: [&str; 10] = [
    "--embed-dim", "16", "--maps-per-window", "16", "--hidden", "32", "--batch-size", "16", "--vocab-size", "100",
];

/// Trains a small autoencoder in `dir` and returns the checkpoint path.
pub fn trained_checkpoint(dir: &Path, steps: usize) -> PathBuf {
    std::fs::write(dir.join("corpus.txt"), template_corpus(30)).unwrap();
    let steps = steps.to_string();
    let mut args = vec!["train", "--corpus", "corpus.txt", "--checkpoint", "m.ckpt", "--steps", &steps, "--seed", "1"];
    args.extend_from_slice(&SMALL_MODEL);
    args.extend_from_slice(&["--dropout", "0", "--learning-rate", "0.003"]);
    ok(cnnlstm(dir, &args));
    dir.join("m.ckpt")
}
