use std::path::Path;
use std::process::{Command, Output};

use gazesep::encoders::MockTextEncoder;
use gazesep::pco::PromptState;
use gazesep::pipeline::{evaluate, Checkpoint, GazeDataset, TrainConfig};
use gazesep::{FactorGroup, FactorSet, FeatureBank, SeededRng, TextEncoder};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazesep"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: i32) -> String {
    let out = run(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn manifest(dir: &Path, file: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(file)).unwrap()).unwrap()
}

#[test]
fn build_bank_writes_one_row_per_factor() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["build-bank", "--taxonomy", "default", "--encoder", "mock", "--out", "bank.bin"]);
    let factors = FactorSet::default_set();
    let bank = FeatureBank::load(&t.path().join("bank.bin"), &factors).unwrap();
    assert_eq!(bank.len(), factors.len());
    assert_eq!(bank.dim(), 128);
    let m = manifest(t.path(), "bank.bin.run.json");
    assert_eq!(m["command"], "build-bank");
    assert!(m["finished_unix"].is_u64());
    assert_eq!(m["outputs"][0], "bank.bin");
}

#[test]
fn group_flag_restricts_the_bank() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["build-bank", "--groups", "appearance,quality", "--out", "aq.bin"]);
    let factors = FactorSet::default_set()
        .filter_by_groups(&[FactorGroup::Appearance, FactorGroup::Quality])
        .unwrap();
    let bank = FeatureBank::load(&t.path().join("aq.bin"), &factors).unwrap();
    assert_eq!(bank.len(), factors.len());
    assert!(bank.len() < FactorSet::default_set().len());
}

#[test]
fn missing_taxonomy_is_a_usage_error_naming_the_flag() {
    let t = tempfile::tempdir().unwrap();
    let err = fails_with(t.path(), &["build-bank", "--taxonomy", "nowhere.txt", "--out", "b.bin"], 2);
    assert!(err.contains("--taxonomy"), "{err}");
    assert!(!t.path().join("b.bin").exists());
}

#[test]
fn usage_errors_exit_two() {
    let t = tempfile::tempdir().unwrap();
    fails_with(t.path(), &["build-bank"], 2);
    fails_with(t.path(), &["build-bank", "--no-such-flag", "--out", "b.bin"], 2);
    fails_with(t.path(), &["build-bank", "--encoder", "clip", "--out", "b.bin"], 2);
    fails_with(t.path(), &["train", "--data", "missing", "--out", "r"], 2);
    fails_with(t.path(), &["synth-data", "--n", "8", "--batch-size", "0", "--out", "d"], 2);
    ok(t.path(), &["synth-data", "--n", "8", "--out", "d"]);
    let err = fails_with(t.path(), &["eval", "--data", "d"], 2);
    assert!(err.contains("--checkpoint"), "{err}");
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("blocker"), "x").unwrap();
    fails_with(t.path(), &["synth-data", "--n", "8", "--out", "blocker/d"], 1);
}

fn mock_text() -> MockTextEncoder {
    MockTextEncoder::new(TrainConfig::desk().encoders.mock_text(128))
}

#[test]
fn zero_epoch_tuning_keeps_the_initialization() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(t.path(), &["tune-prompts", "--synthetic", "--epochs", "0", "--seed", "4", "--out", "tp"]);
    assert!(out.contains("initialization"), "{out}");
    let state = PromptState::load(&t.path().join("tp/prompt_state.bin")).unwrap();
    let token_dim = mock_text().token_dim().unwrap();
    let init = PromptState::init(4, token_dim, state.identity_dim(), &mut SeededRng::derive(4, "prompt-init"));
    assert_eq!(state.params(), init.params());
    let log = std::fs::read_to_string(t.path().join("tp/tune_log.csv")).unwrap();
    assert_eq!(log, "epoch,loss,accuracy\n");
}

#[test]
fn synthetic_tuning_reaches_high_accuracy() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["tune-prompts", "--synthetic", "--out", "tp"]);
    let log = std::fs::read_to_string(t.path().join("tp/tune_log.csv")).unwrap();
    let last = log.lines().last().unwrap();
    let acc: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(acc >= 0.95, "{last}");
    assert_eq!(log.lines().count(), 51);
}

#[test]
fn tuning_reads_the_files_it_wrote() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["tune-prompts", "--synthetic", "--epochs", "2", "--out", "a"]);
    ok(
        t.path(),
        &[
            "tune-prompts",
            "--labels",
            "a/labels.csv",
            "--features",
            "a/features.csv",
            "--identities",
            "a/identities.csv",
            "--context-len",
            "4",
            "--epochs",
            "2",
            "--out",
            "b",
        ],
    );
    let read = |p: &str| std::fs::read(t.path().join(p)).unwrap();
    assert_eq!(read("a/prompt_state.bin"), read("b/prompt_state.bin"));
}

#[test]
fn corrupt_labels_report_the_line() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["tune-prompts", "--synthetic", "--epochs", "0", "--out", "a"]);
    let path = t.path().join("a/labels.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = "f0_0001,s00,zero,1".into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = fails_with(
        t.path(),
        &[
            "tune-prompts",
            "--labels",
            "a/labels.csv",
            "--features",
            "a/features.csv",
            "--identities",
            "a/identities.csv",
            "--out",
            "b",
        ],
        2,
    );
    assert!(err.contains("labels.csv:3:"), "{err}");
}

#[test]
fn printed_table_matches_the_library_report() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth-data", "--n", "48", "--out", "src"]);
    ok(t.path(), &["train", "--data", "src", "--epochs", "3", "--out", "run"]);
    let printed = ok(t.path(), &["eval", "--checkpoint", "run/checkpoint.bin", "--data", "src", "--source", "src"]);
    let ckpt = Checkpoint::load(&t.path().join("run/checkpoint.bin")).unwrap();
    assert_eq!(ckpt.epoch, 3);
    let mut ds = GazeDataset::load_manifest(&t.path().join("src/manifest.csv")).unwrap();
    ds.name = "src".into();
    let report = evaluate(&ckpt.model, &ds, "src").unwrap();
    assert_eq!(printed, report.table());
    let lines: Vec<&str> = printed.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], format!("| src->src | {:.2} |", report.mean_deg));
}

#[test]
fn baseline_ablation_trains_with_zero_weights() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth-data", "--n", "40", "--out", "d"]);
    let printed = ok(
        t.path(),
        &["eval", "--ablation", "baseline", "--train-data", "d", "--data", "d", "--epochs", "2", "--out", "ev"],
    );
    assert!(printed.starts_with("| Task | Mean (deg) |\n"));
    let ckpt = Checkpoint::load(&t.path().join("ev/checkpoint.bin")).unwrap();
    let w = ckpt.config.weights;
    assert_eq!((w.lambda1, w.lambda2, w.lambda3), (0.0, 0.0, 0.0));
    let m = manifest(t.path(), "ev/run.json");
    assert_eq!(m["config"]["weights"]["lambda3"], 0.0);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.path().join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(report["count"], 40);
}

#[test]
fn config_file_sits_below_flags() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth-data", "--n", "24", "--out", "d"]);
    std::fs::write(t.path().join("c.toml"), "epochs = 1\nbatch_size = 8\n[weights]\nlambda2 = 0.25\n").unwrap();
    ok(t.path(), &["--config", "c.toml", "train", "--data", "d", "--batch-size", "6", "--out", "r"]);
    let c = Checkpoint::load(&t.path().join("r/checkpoint.bin")).unwrap();
    assert_eq!(c.epoch, 1);
    assert_eq!(c.config.batch_size, 6);
    assert_eq!(c.config.weights.lambda2, 0.25);
    let m = manifest(t.path(), "r/run.json");
    assert_eq!(m["config"]["batch_size"], 6);
    assert_eq!(m["inputs"][0]["role"], "config");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn export_then_plot_colors_by_yaw() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth-data", "--n", "30", "--out", "d"]);
    ok(t.path(), &["train", "--data", "d", "--epochs", "1", "--out", "r"]);
    ok(t.path(), &["export-features", "--checkpoint", "r/checkpoint.bin", "--data", "d", "--out", "x"]);
    ok(t.path(), &["plot", "--features", "x/features.csv", "--out", "p"]);
    let csv = std::fs::read_to_string(t.path().join("p/scatter.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,x,y,yaw"));
    assert_eq!(csv.lines().count(), 31);
    let svg = std::fs::read_to_string(t.path().join("p/scatter.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<circle").count(), 30);
    // Extreme yaws get the two ends of the color ramp.
    assert!(svg.contains("#283cff") && svg.contains("#ff3c28"));
}

/// Runs the whole workflow in `dir` with relative paths.
fn workflow(dir: &Path) {
    ok(dir, &["synth-data", "--n", "40", "--seed", "3", "--out", "d"]);
    ok(dir, &["build-bank", "--out", "bank.bin"]);
    ok(dir, &["tune-prompts", "--synthetic", "--epochs", "2", "--out", "tp"]);
    ok(dir, &["train", "--data", "d", "--bank", "bank.bin", "--epochs", "2", "--out", "r"]);
    ok(dir, &["export-features", "--checkpoint", "r/checkpoint.bin", "--data", "d", "--out", "x"]);
    ok(dir, &["plot", "--features", "x/features.csv", "--out", "p"]);
}

#[test]
fn same_inputs_give_byte_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    workflow(a.path());
    workflow(b.path());
    for f in [
        "d/manifest.csv",
        "d/images/syn00007.png",
        "d/planted.json",
        "bank.bin",
        "bank.bin.rows.txt",
        "tp/prompt_state.bin",
        "tp/labels.csv",
        "r/checkpoint.bin",
        "r/config.toml",
        "x/features.csv",
        "p/scatter.csv",
        "p/scatter.svg",
    ] {
        let read = |d: &Path| std::fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{f} differs");
    }
    let (ma, mb) = (manifest(a.path(), "r/run.json"), manifest(b.path(), "r/run.json"));
    assert_eq!(ma["inputs"], mb["inputs"]);
    assert_eq!(ma["config"], mb["config"]);
}
