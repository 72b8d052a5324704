//! End-to-end tests of the compiled binary: verb plumbing, exit codes,
//! error formatting, and provenance-based reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn cmis(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmis"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout: {}\nstderr: {}",
        stdout_of(out),
        stderr_of(out)
    );
}

/// An experiment config sized to train in about a second, generating and
/// then reading its own corpus under the working directory.
const EXP_TOML: &str = r#"
[synth]
n_individuals = 4
samples_per_individual = 6
negatives_per_individual = 2
motion_len = 6
width = 5
seed = 7

[data]
manifest = "corpus/manifest.csv"
negatives_manifest = "corpus/negatives.csv"
fps = 25
window_secs = 0.26

[model]
motion_width = 5
frame_width = 6
seq_width = 6
attention_width = 4
seq_ff_width = 8
seq_layers = 1
seq_heads = 2
translator_hidden = 4
head_hidden = 8
head_layers = 1

[train]
batch_size = 8
n_neutral_draws = 2
stage_epochs = [1, 1, 1, 1]
seed = 7

[neutral]
edge = 2.0
"#;

fn write_config(dir: &Path) {
    std::fs::write(dir.join("exp.toml"), EXP_TOML).unwrap();
}

#[test]
fn synth_validate_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());

    let out = cmis(dir.path(), &["synth", "--config", "exp.toml", "--out", "corpus"]);
    assert_code(&out, 0);
    assert!(stdout_of(&out).starts_with("synth: samples=24 negatives="));
    assert!(dir.path().join("corpus/manifest.csv").exists());
    assert!(dir.path().join("corpus/ground_truth.json").exists());
    assert!(dir.path().join("corpus/run.json").exists());

    let out = cmis(
        dir.path(),
        &["validate-data", "--config", "exp.toml", "--out", "val"],
    );
    assert_code(&out, 0);
    assert!(stdout_of(&out).starts_with("validate-data: ok"));

    let out = cmis(
        dir.path(),
        &["train", "--config", "exp.toml", "--out", "run", "--clock", "tick"],
    );
    assert_code(&out, 0);
    let summary = stdout_of(&out);
    assert!(summary.contains("stages_completed=4"), "{summary}");
    assert!(summary.contains("validation_mse="), "{summary}");
    assert!(dir.path().join("run/final.ckpt").exists());
    assert!(dir.path().join("run/metrics.csv").exists());

    let out = cmis(
        dir.path(),
        &["eval", "--checkpoint", "run/final.ckpt", "--out", "evalout"],
    );
    assert_code(&out, 0);
    assert!(stdout_of(&out).starts_with("eval: validation_mse="));
    assert!(dir.path().join("evalout/predictions.csv").exists());
    assert!(dir.path().join("evalout/eval.json").exists());

    // The training summary and the standalone evaluation agree.
    let train_mse = summary
        .split("validation_mse=")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string();
    assert!(stdout_of(&out).contains(&format!("validation_mse={train_mse}")));
}

#[test]
fn a_run_is_reproducible_from_its_provenance_record_alone() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_code(
        &cmis(dir.path(), &["synth", "--config", "exp.toml", "--out", "corpus"]),
        0,
    );
    assert_code(
        &cmis(
            dir.path(),
            &["train", "--config", "exp.toml", "--out", "run", "--clock", "tick"],
        ),
        0,
    );
    // Redirecting the recorded run into a fresh directory replays it.
    assert_code(
        &cmis(
            dir.path(),
            &["train", "--config", "run/run.json", "--out", "replay", "--clock", "tick"],
        ),
        0,
    );
    let first = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let second = std::fs::read_to_string(dir.path().join("replay/metrics.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn usage_config_and_runtime_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());

    // Unknown verb: usage error from the parser.
    let out = cmis(dir.path(), &["frobnicate"]);
    assert_code(&out, 2);

    // Missing config file.
    let out = cmis(dir.path(), &["train", "--config", "nope.toml", "--out", "x"]);
    assert_code(&out, 3);
    let err = stderr_of(&out);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    // Unknown key in the config.
    std::fs::write(dir.path().join("typo.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = cmis(dir.path(), &["train", "--config", "typo.toml", "--out", "x"]);
    assert_code(&out, 3);
    assert!(stderr_of(&out).starts_with("error[config]:"));

    // Structurally valid config, but the data it points at is absent.
    let out = cmis(dir.path(), &["train", "--config", "exp.toml", "--out", "x"]);
    assert_code(&out, 1);
    let err = stderr_of(&out);
    assert!(err.starts_with("error[runtime]:"), "{err}");

    // --stop-after out of range is a usage error.
    assert_code(
        &cmis(dir.path(), &["synth", "--config", "exp.toml", "--out", "corpus"]),
        0,
    );
    let out = cmis(
        dir.path(),
        &["train", "--config", "exp.toml", "--out", "x", "--stop-after", "9"],
    );
    assert_code(&out, 2);
    assert!(stderr_of(&out).starts_with("error[usage]:"));
}

#[test]
fn eval_rejects_a_checkpoint_from_a_different_training_config() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_code(
        &cmis(dir.path(), &["synth", "--config", "exp.toml", "--out", "corpus"]),
        0,
    );
    assert_code(
        &cmis(
            dir.path(),
            &["train", "--config", "exp.toml", "--out", "run", "--clock", "tick"],
        ),
        0,
    );
    // Same config but a different seed trains a different model; the
    // checkpoint hash guard refuses the pairing.
    let out = cmis(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "run/final.ckpt",
            "--config",
            "exp.toml",
            "--seed",
            "99",
            "--out",
            "evalout",
        ],
    );
    assert_code(&out, 3);
    let err = stderr_of(&out);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(err.contains("hash"), "{err}");
}

#[test]
fn dry_run_needs_no_data_and_stays_inside_its_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());

    let before: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    let out = cmis(
        dir.path(),
        &["train", "--config", "exp.toml", "--out", "dry", "--dry-run", "--clock", "tick"],
    );
    assert_code(&out, 0);
    assert!(stdout_of(&out).contains("dry run"));
    assert!(dir.path().join("dry/metrics.csv").exists());
    assert!(dir.path().join("dry/run.json").exists());

    // Exactly one new entry appeared next to the config: the output dir.
    let after: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(after.len(), before.len() + 1);
}

#[test]
fn seed_flag_changes_the_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    assert_code(
        &cmis(dir.path(), &["synth", "--config", "exp.toml", "--out", "corpus"]),
        0,
    );
    let a = cmis(
        dir.path(),
        &["train", "--config", "exp.toml", "--out", "a", "--clock", "tick"],
    );
    let b = cmis(
        dir.path(),
        &["train", "--config", "exp.toml", "--out", "b", "--clock", "tick", "--seed", "99"],
    );
    assert_code(&a, 0);
    assert_code(&b, 0);
    assert_ne!(stdout_of(&a), stdout_of(&b));
    let first = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let second = std::fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert_ne!(first, second);
}

#[test]
fn split_modality_and_analyze_verbs_produce_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    // A corpus with both modalities planted.
    let toml = EXP_TOML.replace("seed = 7", "seed = 8").replace(
        "negatives_per_individual = 2",
        "negatives_per_individual = 2\nauditive_fraction = 0.5",
    );
    std::fs::write(dir.path().join("exp.toml"), toml).unwrap();

    assert_code(
        &cmis(dir.path(), &["synth", "--config", "exp.toml", "--out", "corpus"]),
        0,
    );
    let out = cmis(
        dir.path(),
        &["split-modality", "--config", "exp.toml", "--out", "tags"],
    );
    assert_code(&out, 0);
    let summary = stdout_of(&out);
    assert!(summary.starts_with("split-modality: total=24"), "{summary}");
    assert!(!summary.contains("auditive=0"), "{summary}");
    assert!(dir.path().join("tags/modality.csv").exists());

    assert_code(
        &cmis(
            dir.path(),
            &["train", "--config", "exp.toml", "--out", "run", "--clock", "tick"],
        ),
        0,
    );
    let out = cmis(
        dir.path(),
        &["analyze", "--checkpoint", "run/final.ckpt", "--out", "report", "--svg"],
    );
    // The default validation split has a single individual, which the
    // centroid analysis rejects at runtime.
    assert_code(&out, 1);

    // Retrain with the analysis pointed at the training split.
    let toml = std::fs::read_to_string(dir.path().join("exp.toml")).unwrap()
        + "\n[analyze]\nsplit = \"train\"\n";
    std::fs::write(dir.path().join("exp.toml"), toml).unwrap();
    assert_code(
        &cmis(
            dir.path(),
            &["train", "--config", "exp.toml", "--out", "run2", "--clock", "tick"],
        ),
        0,
    );
    let out = cmis(
        dir.path(),
        &["analyze", "--checkpoint", "run2/final.ckpt", "--out", "report", "--svg"],
    );
    assert_code(&out, 0);
    assert!(stdout_of(&out).starts_with("analyze: samples="));
    for name in [
        "report/densities.csv",
        "report/centroids.csv",
        "report/analyze.json",
        "report/figures/densities.svg",
        "report/figures/separation.svg",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn ablate_runs_a_small_matrix_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let toml = EXP_TOML.to_string()
        + "\n[ablation]\naxes = [\"neutral\"]\nseeds = [0, 1]\n";
    std::fs::write(dir.path().join("exp.toml"), toml).unwrap();
    assert_code(
        &cmis(dir.path(), &["synth", "--config", "exp.toml", "--out", "corpus"]),
        0,
    );
    let out = cmis(
        dir.path(),
        &["ablate", "--config", "exp.toml", "--out", "matrix", "--jobs", "2"],
    );
    assert_code(&out, 0);
    let summary = stdout_of(&out);
    assert!(summary.starts_with("ablate: runs=4 specs=2 seeds=2"), "{summary}");
    let table = std::fs::read_to_string(dir.path().join("matrix/ablation.csv")).unwrap();
    // Header plus one row per (spec, seed).
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(dir.path().join("matrix/summary.csv").exists());
}
