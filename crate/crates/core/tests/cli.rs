use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
scenarios = ["Unadapted", "Random", "L1Level"]
keys = ["ES-A2"]
seeds = [1]

[corpus]
l1s = ["ES"]
levels = ["A2"]
sentences_per_group = 40
general_size = 150
general_dev_size = 20
bank_size = 150
bpe_merges = 30
max_units = 24
train_size = 20
dev_size = 5
test_size = 10

[model]
word_vec_size = 8
rnn_size = 8
enc_layers = 1
dec_layers = 1
max_decode_len = 16

[base]
epochs = 1

[fine_tune]
epochs = 1
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gec-adapt"))
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn pipeline_commands_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let out = d.join("out");

    run(d, &["generate"]);
    assert!(out.join("corpus/learner.jsonl").exists() && out.join("corpus/general.jsonl").exists());
    run(d, &["learn-bpe"]);
    assert!(out.join("bpe.txt").exists());
    run(d, &["train-base"]);
    assert!(out.join("checkpoints/base.ckpt").exists() && out.join("logs/base.jsonl").exists());
    run(d, &["fine-tune", "--subset", "ES-A2"]);
    assert!(out.join("checkpoints/fine-tune-es-a2.ckpt").exists());

    fs::write(d.join("gold.m2"), "S he go home\nA 1 2|||Verb|||goes|||REQUIRED|||-NONE-|||0\n\nS it is fine\n\n").unwrap();
    fs::write(d.join("hyp.txt"), "he goes home\nit is good\n").unwrap();
    let score = run(d, &["score", "--gold", d.join("gold.m2").to_str().unwrap(), "--hyp", d.join("hyp.txt").to_str().unwrap()]);
    let text = String::from_utf8_lossy(&score.stdout);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(&row[..5], &["1", "1", "0", "50.00", "100.00"], "unexpected score output:\n{text}");

    let ckpt = out.join("checkpoints/base.ckpt");
    run(d, &["score", "--gold", d.join("gold.m2").to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
}

#[test]
fn experiment_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let exp = run(d, &["experiment"]);
    assert!(String::from_utf8_lossy(&exp.stdout).contains("ES-A2"));
    assert!(d.join("out/report.json").exists());
    let rep = run(d, &["report", "--error-types", "L1Level"]);
    assert!(!rep.stdout.is_empty());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), "keys = [\"XX-A2\"]\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gec-adapt"))
        .arg("--config")
        .arg(d.join("tiny.toml"))
        .arg("experiment")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
