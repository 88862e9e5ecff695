mod common;

use std::fs;

use clap::CommandFactory;
use cnnlstm::model::Container;
use cnnlstm::Checkpoint;
use cnnlstm_cli::{Cli, RunConfig};
use common::{cnnlstm, ok, stdout, trained_checkpoint};

#[test]
fn every_flag_is_documented() {
    let cli = Cli::command();
    for sub in cli.get_subcommands() {
        assert!(sub.get_about().is_some(), "{}", sub.get_name());
        for arg in sub.get_arguments() {
            assert!(arg.get_help().is_some(), "{} --{}", sub.get_name(), arg.get_id());
        }
        let help = cnnlstm(std::path::Path::new("."), &[sub.get_name(), "--help"]);
        assert!(stdout(&ok_status(help)).contains("Usage: cnnlstm"));
    }
}

fn ok_status(o: std::process::Output) -> std::process::Output {
    assert!(o.status.success());
    o
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.txt"), common::template_corpus(10)).unwrap();
    let mut args = vec!["train", "--variant", "autoencoder", "--corpus", "tiny.txt", "--steps", "100", "--seed", "1", "--checkpoint", "m.ckpt"];
    args.extend_from_slice(&common::SMALL_MODEL);
    let out = ok(cnnlstm(dir.path(), &args));
    assert!(out.contains("steps=100\n"));
    assert!(dir.path().join("m.ckpt").is_file());
    let metrics = fs::read_to_string(dir.path().join("m.ckpt.metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 100);
    assert!(metrics.lines().enumerate().all(|(i, l)| l.starts_with(&format!("{}\t", i + 1))));
    let ckpt = Checkpoint::load(&dir.path().join("m.ckpt")).unwrap();
    assert_eq!(ckpt.config.max_steps, 100);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| cnnlstm(dir.path(), args).status.code();
    assert_eq!(code(&["train", "--corpus", "missing.txt", "--checkpoint", "m.ckpt"]), Some(2));
    assert_eq!(code(&["train", "--checkpoint", "m.ckpt"]), Some(2));
    assert_eq!(code(&["train", "--no-such-flag"]), Some(2));
    assert_eq!(code(&["train", "--learning-rate", "fast"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    fs::write(dir.path().join("bad.cfg"), "learning_rat=0.1\n").unwrap();
    assert_eq!(code(&["train", "--config", "bad.cfg", "--print-config"]), Some(2));
    assert_eq!(code(&["train", "--dropout", "1.5", "--print-config"]), Some(2));
    assert_eq!(code(&["encode", "--input", "in.txt", "--output", "o.tsv"]), Some(2));
    assert_eq!(code(&["eval-rank"]), Some(2));
    assert_eq!(code(&["eval-rank", "--synthetic", "50"]), Some(2));
}

#[test]
fn diverging_training_exits_1_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.txt"), common::template_corpus(10)).unwrap();
    let mut args = vec!["train", "--corpus", "tiny.txt", "--steps", "50", "--checkpoint", "m.ckpt", "--learning-rate", "1e37", "--clip-norm", "1e30"];
    args.extend_from_slice(&common::SMALL_MODEL);
    let out = cnnlstm(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("non-finite"), "{err}");
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn config_file_defaults_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(cnnlstm(dir.path(), &["train", "--print-config", "--variant", "composite", "--seed", "9"]));
    fs::write(dir.path().join("run.cfg"), &printed).unwrap();
    let echoed = ok(cnnlstm(dir.path(), &["train", "--config", "run.cfg", "--print-config"]));
    assert_eq!(echoed, printed);
    assert_eq!(RunConfig::from_kv(&printed).unwrap().to_kv(), printed);

    let overridden = ok(cnnlstm(dir.path(), &["train", "--config", "run.cfg", "--learning-rate", "0.5", "--print-config"]));
    let c = RunConfig::from_kv(&overridden).unwrap();
    assert_eq!((c.train.learning_rate, c.train.seed, c.variant.as_str()), (0.5, 9, "composite"));
}

#[test]
fn encode_row_per_line() {
    let dir = tempfile::tempdir().unwrap();
    trained_checkpoint(dir.path(), 20);
    let d = dir.path();
    let sentences = ["you saw me .", "they hated it .", "we got her ."];
    let lines: Vec<&str> = (0..1000).map(|i| sentences[i % 3]).collect();
    fs::write(d.join("many.txt"), lines.join("\n") + "\n").unwrap();
    fs::write(d.join("one.txt"), "they hated it .\n").unwrap();
    fs::write(d.join("empty.txt"), "").unwrap();
    ok(cnnlstm(d, &["encode", "--checkpoint", "m.ckpt", "--input", "many.txt", "--output", "many.tsv"]));
    ok(cnnlstm(d, &["encode", "--checkpoint", "m.ckpt", "--input", "one.txt", "--output", "one.tsv"]));
    ok(cnnlstm(d, &["encode", "--checkpoint", "m.ckpt", "--input", "empty.txt", "--output", "empty.tsv"]));
    ok(cnnlstm(d, &["encode", "--checkpoint", "m.ckpt", "--input", "many.txt", "--output", "many.bin"]));
    let many = fs::read_to_string(d.join("many.tsv")).unwrap();
    let one = fs::read_to_string(d.join("one.tsv")).unwrap();
    assert_eq!(many.lines().count(), 1000);
    assert_eq!(one.lines().count(), 1);
    assert_eq!(many.lines().nth(1).unwrap(), one.trim_end());
    assert_eq!(fs::read_to_string(d.join("empty.tsv")).unwrap(), "");
    let bin = Container::load(&d.join("many.bin")).unwrap();
    assert_eq!(bin.get("features").unwrap().shape, vec![1000, 48]);
}

#[test]
fn mismatched_checkpoint_vocabulary_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = trained_checkpoint(dir.path(), 5);
    let mut c = Container::load(&path).unwrap();
    let mut lines: Vec<&str> = c.vocab.lines().collect();
    lines.pop();
    c.vocab = lines.join("\n") + "\n";
    c.save(&dir.path().join("bad.ckpt")).unwrap();
    fs::write(dir.path().join("in.txt"), "you saw me .\n").unwrap();
    let out = cnnlstm(dir.path(), &["encode", "--checkpoint", "bad.ckpt", "--input", "in.txt", "--output", "o.tsv"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn nn_reports_query_first() {
    let dir = tempfile::tempdir().unwrap();
    trained_checkpoint(dir.path(), 50);
    fs::write(dir.path().join("pool.txt"), "we got her .\nthey hated it .\nyou saw me .\n").unwrap();
    let out = ok(cnnlstm(dir.path(), &["nn", "--checkpoint", "m.ckpt", "--query", "they hated it .", "--pool", "pool.txt", "--top-k", "3"]));
    let first = out.lines().next().unwrap();
    assert!(first.starts_with("1\t") && first.ends_with("\tthey hated it ."), "{out}");
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn arith_with_equal_operands_decodes_c() {
    let dir = tempfile::tempdir().unwrap();
    let path = trained_checkpoint(dir.path(), 300);
    let out = ok(cnnlstm(dir.path(), &["arith", "--checkpoint", "m.ckpt", "--a", "we got her .", "--b", "we got her .", "--c", "you saw me ."]));
    let ckpt = Checkpoint::load(&path).unwrap();
    let model = ckpt.to_model::<f32>().unwrap();
    let c = ckpt.vocab.encode_text("you saw me .");
    let direct = model.greedy_decode(&model.encode(&c).unwrap(), 30).unwrap();
    assert_eq!(out.trim_end(), ckpt.vocab.decode(&direct).join(" "));
}

#[test]
fn eval_commands_report() {
    let dir = tempfile::tempdir().unwrap();
    trained_checkpoint(dir.path(), 50);
    let d = dir.path();
    let mut cls = String::new();
    let mut pair = String::new();
    let subjects = ["i", "you", "he", "she"];
    let verbs = ["needed", "got", "saw", "liked", "hated", "helped"];
    for (i, s) in subjects.iter().enumerate() {
        for (j, v) in verbs.iter().enumerate() {
            cls.push_str(&format!("{}\t{s} {v} it .\n", usize::from(j >= 3)));
            let score = 1.0 + ((i + j) % 5) as f64;
            pair.push_str(&format!("{score}\t{s} {v} it .\t{s} {v} me .\n"));
        }
    }
    fs::write(d.join("cls.tsv"), cls).unwrap();
    fs::write(d.join("pair.tsv"), pair).unwrap();
    let out = ok(cnnlstm(d, &["eval-cls", "--checkpoint", "m.ckpt", "--data", "cls.tsv"]));
    assert!(out.contains("examples=24\n") && out.contains("test_accuracy="), "{out}");
    let out = ok(cnnlstm(d, &["eval-pair", "--checkpoint", "m.ckpt", "--data", "pair.tsv"]));
    assert!(out.contains("pairs=24\n") && out.contains("pearson="), "{out}");

    fs::write(d.join("plain.txt"), "we got her .\nyou saw me .\n").unwrap();
    ok(cnnlstm(d, &["encode", "--checkpoint", "m.ckpt", "--input", "plain.txt", "--output", "f.bin"]));
    let out = cnnlstm(d, &["eval-cls", "--features", "f.bin"]);
    assert_eq!(out.status.code(), Some(1), "all labels are zero");

    let out = ok(cnnlstm(d, &["eval-rank", "--synthetic", "200", "--epochs", "50"]));
    assert!(out.lines().any(|l| l.starts_with("recall_at_1=")), "{out}");
}
