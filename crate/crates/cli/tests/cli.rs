//! End-to-end runs of the `slu` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_MODEL: &str = "\
model.d_model = 8
model.n_heads = 2
model.d_k = 4
model.d_v = 4
model.d_inner = 16
model.n_enc_layers = 1
model.n_dec_layers = 1
train.batch_size = 4
train.lr = 0.003
";

fn slu(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slu"))
        .args(args)
        .current_dir(dir)
        .env_remove("SLU_RUN_ROOT")
        .output()
        .expect("spawn slu")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = slu(args, dir);
    assert!(
        out.status.success(),
        "slu {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The single machine-readable error line and the exit code.
fn fails(args: &[&str], dir: &Path) -> (String, i32) {
    let out = slu(args, dir);
    assert!(!out.status.success(), "slu {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with("error: kind="), "{err}");
    (lines[0].to_string(), out.status.code().unwrap())
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("small.conf"), SMALL_MODEL).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn synth(&self, language: &str, count: usize, seed: u64, out: &str) -> PathBuf {
        ok(
            &[
                "synth",
                "--language",
                language,
                "--count",
                &count.to_string(),
                "--seed",
                &seed.to_string(),
                "--out",
                out,
            ],
            self.path(),
        );
        self.path().join(out)
    }
}

#[test]
fn synth_writes_audio_manifest_and_label_files() {
    let ws = Workspace::new();
    let d = ws.synth("b", 5, 3, "b");
    let manifest = std::fs::read_to_string(d.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    for f in ["vocab.json", "intents.json", "b3-00000.wav"] {
        assert!(d.join(f).exists(), "{f}");
    }
    ok(
        &["synth", "--language", "a", "--count", "4", "--text-only", "--out", "t"],
        ws.path(),
    );
    assert_eq!(
        std::fs::read_to_string(ws.path().join("t/corpus.txt"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let (line, code) = fails(&["synth", "--language", "c", "--count", "1", "--out", "x"], ws.path());
    assert!(line.contains("kind=usage") || line.contains("kind=config"), "{line}");
    assert_ne!(code, 0);
}

#[test]
fn full_pipeline_produces_checkpoints_metrics_and_plots() {
    let ws = Workspace::new();
    let a = ws.synth("a", 12, 1, "a");
    let b = ws.synth("b", 8, 2, "b");
    let bv = ws.synth("b", 4, 3, "bv");
    let (a_m, b_m, bv_m) = (
        a.join("manifest.jsonl"),
        b.join("manifest.jsonl"),
        bv.join("manifest.jsonl"),
    );
    let vocab = b.join("vocab.json");
    let intents = b.join("intents.json");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let train = |cmd: &str, out: &str, extra: &[&str]| {
        let mut args: Vec<String> = [cmd, "--config", "small.conf", "--seed", "4", "--out", out]
            .iter()
            .map(|v| v.to_string())
            .collect();
        args.extend(extra.iter().map(|v| v.to_string()));
        if cmd != "pretrain-asr" {
            args.extend([
                "--train".into(),
                s(&b_m),
                "--valid".into(),
                s(&bv_m),
                "--set".into(),
                format!("data.vocab={}", s(&vocab)),
                "--set".into(),
                format!("data.intents={}", s(&intents)),
            ]);
        }
        args.extend(["--set".to_string(), "train.epochs=2".into()]);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs, ws.path())
    };

    let a_vocab = format!("data.vocab={}", s(&a.join("vocab.json")));
    train("pretrain-asr", "asr", &["--train", &s(&a_m), "--set", &a_vocab]);
    let asr_ckpt = s(&ws.path().join("asr/model.ckpt"));
    train("train-slu", "base", &[]);
    train("train-slu", "fix", &["--init-encoder", &asr_ckpt, "--policy", "fix"]);
    train("train-mt", "mt", &["--lambda", "0.5"]);
    let text_vocab = format!("data.vocab={}", s(&vocab));
    let mut text_args = vec![
        "pretrain-textenc",
        "--corpus",
        b_m.to_str().unwrap(),
        "--set",
        &text_vocab,
        "--out",
        "text",
    ];
    let text_sets = [
        "text.epochs=2",
        "text.model.d_model=8",
        "text.model.d_k=4",
        "text.model.d_v=4",
        "text.model.d_inner=16",
        "text.model.n_heads=2",
        "text.model.n_enc_layers=1",
    ];
    for kv in &text_sets {
        text_args.extend(["--set", kv]);
    }
    ok(&text_args, ws.path());
    let text = s(&ws.path().join("text/text_encoder.ckpt"));
    train("train-fusion", "fusion", &["--lambda", "1", "--text-encoder", &text]);

    for run_dir in ["base", "fix", "mt", "fusion"] {
        let d = ws.path().join(run_dir);
        for f in ["model.ckpt", "metrics.csv", "config.resolved"] {
            assert!(d.join(f).exists(), "{run_dir}/{f}");
        }
        let csv = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 2, "{run_dir}: {csv}");
        assert!(!d.join("run.lock").exists());
    }

    let eval = ok(
        &[
            "eval",
            "--checkpoint",
            "mt/model.ckpt",
            "--manifest",
            bv_m.to_str().unwrap(),
            "--decode",
        ],
        ws.path(),
    );
    let mut lines = eval.lines();
    assert!(lines.next().unwrap().starts_with("split,count,intent_accuracy"));
    assert!(lines.next().unwrap().starts_with("eval,4,"));

    ok(
        &[
            "plot",
            "--metrics",
            "base/metrics.csv",
            "--metrics",
            "mt/metrics.csv",
            "--out",
            "curves.svg",
        ],
        ws.path(),
    );
    let svg = std::fs::read_to_string(ws.path().join("curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    assert!(svg.contains(">base<") && svg.contains(">mt<"));
}

#[test]
fn flags_without_meaning_are_usage_errors() {
    let ws = Workspace::new();
    let (line, code) = fails(&["train-slu", "--lambda", "0.5", "--out", "r"], ws.path());
    assert!(line.starts_with("error: kind=usage"), "{line}");
    assert_eq!(code, 1);
    let (line, code) = fails(&["train-mt", "--bogus"], ws.path());
    assert!(line.starts_with("error: kind=usage"), "{line}");
    assert_eq!(code, 2);
}

#[test]
fn missing_inputs_and_bad_keys_are_reported_by_kind() {
    let ws = Workspace::new();
    let (line, _) = fails(
        &["train-mt", "--lambda", "0.5", "--train", "nope.jsonl", "--out", "r"],
        ws.path(),
    );
    assert!(
        line.starts_with("error: kind=io") || line.starts_with("error: kind=config"),
        "{line}"
    );
    std::fs::write(ws.path().join("bad.conf"), "model.d_model = 8\nwhatever = 3\n").unwrap();
    let (line, _) = fails(&["train-slu", "--config", "bad.conf"], ws.path());
    assert!(line.starts_with("error: kind=parse"), "{line}");
    assert!(line.contains("line 2") || line.contains(":2"), "{line}");
    let b = ws.synth("b", 4, 1, "b");
    let (line, _) = fails(
        &[
            "train-fusion",
            "--lambda",
            "1",
            "--train",
            b.join("manifest.jsonl").to_str().unwrap(),
            "--out",
            "f",
        ],
        ws.path(),
    );
    assert!(line.starts_with("error: kind=config"), "{line}");
}

#[test]
fn occupied_run_directory_is_refused() {
    let ws = Workspace::new();
    let b = ws.synth("b", 4, 1, "b");
    let out = ws.path().join("locked");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("run.lock"), "12345").unwrap();
    let (line, _) = fails(
        &[
            "train-slu",
            "--config",
            "small.conf",
            "--train",
            b.join("manifest.jsonl").to_str().unwrap(),
            "--out",
            "locked",
        ],
        ws.path(),
    );
    assert!(line.starts_with("error: kind=lock"), "{line}");
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn included_config_files_resolve_relative_paths() {
    let ws = Workspace::new();
    ws.synth("b", 6, 1, "data/b");
    std::fs::create_dir_all(ws.path().join("conf/base")).unwrap();
    std::fs::write(
        ws.path().join("conf/base/data.conf"),
        "data.train = ../../data/b/manifest.jsonl\ndata.vocab = ../../data/b/vocab.json\n",
    )
    .unwrap();
    std::fs::write(
        ws.path().join("conf/run.conf"),
        format!("include = base/data.conf\n{SMALL_MODEL}train.epochs = 1\nseed = 3\nout = ../runs/inc\n"),
    )
    .unwrap();
    ok(&["train-slu", "--config", "conf/run.conf"], ws.path());
    let resolved = std::fs::read_to_string(ws.path().join("runs/inc/config.resolved")).unwrap();
    assert!(resolved.contains("train.epochs = 1"), "{resolved}");
    assert!(resolved.contains("seed = 3"));

    std::fs::write(ws.path().join("conf/loop.conf"), "include = loop.conf\n").unwrap();
    let (line, _) = fails(&["train-slu", "--config", "conf/loop.conf"], ws.path());
    assert!(line.contains("include"), "{line}");
}

#[test]
fn run_root_applies_to_relative_outputs() {
    let ws = Workspace::new();
    let b = ws.synth("b", 4, 1, "b");
    let root = ws.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_slu"))
        .args(["train-slu", "--config", "small.conf", "--set", "train.epochs=1"])
        .args(["--train", b.join("manifest.jsonl").to_str().unwrap(), "--out", "r1"])
        .current_dir(ws.path())
        .env("SLU_RUN_ROOT", &root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("r1/metrics.csv").exists());
    assert!(!ws.path().join("r1").exists());
}
