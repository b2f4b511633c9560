//! End-to-end subcommand tests against the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hlvae"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn gen_config_json() -> &'static str {
    r#"{
        "instances": 6, "visits": 5, "latent_dim": 2,
        "features": [
            {"name": "g0", "likelihood": "gaussian"},
            {"name": "count", "likelihood": "poisson"},
            {"name": "cat", "likelihood": "categorical", "cardinality": 3},
            {"name": "ord", "likelihood": "ordinal", "cardinality": 4}
        ],
        "noise_var": 0.05
    }"#
}

/// Generates a small dataset into `dir` and returns (data.csv, schema.json).
fn synth_into(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let cfg = dir.join("gen.json");
    std::fs::write(&cfg, gen_config_json()).unwrap();
    let out = run(&[
        "synth",
        "--gen-config",
        cfg.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    (dir.join("data.csv"), dir.join("schema.json"))
}

fn train_small(dir: &Path, data: &Path, schema: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train".to_string(),
        "--data".into(),
        data.to_str().unwrap().into(),
        "--schema".into(),
        schema.to_str().unwrap().into(),
        "--kernel".into(),
        "se(time)+ca(id)*se(time)".into(),
        "--latent".into(),
        "2".into(),
        "--hidden".into(),
        "6".into(),
        "--slot".into(),
        "3".into(),
        "--epochs".into(),
        "3".into(),
        "--seed".into(),
        "1".into(),
        "--out".into(),
        dir.to_str().unwrap().into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    dir.join("checkpoint.json")
}

#[test]
fn train_writes_checkpoint_history_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 3);
    train_small(dir.path(), &data, &schema, &["--kl", "exact"]);
    assert!(dir.path().join("checkpoint.json").exists());
    assert!(dir.path().join("history.csv").exists());
    assert!(dir.path().join("resolved_config.json").exists());
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,elbo,recon,kl,val_nll\n"));
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn both_kl_modes_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 5);
    let exact_dir = dir.path().join("exact");
    std::fs::create_dir_all(&exact_dir).unwrap();
    train_small(&exact_dir, &data, &schema, &["--kl", "exact"]);
    let bound_dir = dir.path().join("bound");
    std::fs::create_dir_all(&bound_dir).unwrap();
    train_small(&bound_dir, &data, &schema, &["--kl", "bound", "--inducing", "5", "--batch", "3"]);
}

#[test]
fn invalid_kernel_string_names_the_offending_token() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 7);
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
        "--kernel",
        "se(time)+*",
        "--epochs",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("\"*\""), "stderr: {stderr}");
}

#[test]
fn impute_on_fully_observed_query_returns_values_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 9);
    let ckpt = train_small(dir.path(), &data, &schema, &["--kl", "exact"]);
    let impute_dir = dir.path().join("imp");
    std::fs::create_dir_all(&impute_dir).unwrap();
    let out = run(&[
        "impute",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        impute_dir.to_str().unwrap(),
        "--samples",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let original = std::fs::read_to_string(&data).unwrap();
    let filled = std::fs::read_to_string(impute_dir.join("filled.csv")).unwrap();
    assert_eq!(original, filled);
    let nll = std::fs::read_to_string(impute_dir.join("nll.csv")).unwrap();
    assert!(nll.lines().count() > 2, "nll file is empty");
    assert!(nll.starts_with("# samples=5"));
}

#[test]
fn sample_count_lands_in_nll_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 11);
    let ckpt = train_small(dir.path(), &data, &schema, &["--kl", "exact"]);
    for samples in ["7", "200"] {
        let sub = dir.path().join(format!("s{samples}"));
        std::fs::create_dir_all(&sub).unwrap();
        let out = run(&[
            "impute",
            "--model",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            sub.to_str().unwrap(),
            "--samples",
            samples,
        ]);
        assert!(out.status.success());
        let nll = std::fs::read_to_string(sub.join("nll.csv")).unwrap();
        assert!(nll.starts_with(&format!("# samples={samples}")));
    }
}

#[test]
fn schema_mismatch_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 13);
    let ckpt = train_small(dir.path(), &data, &schema, &["--kl", "exact"]);
    // A query CSV missing one feature column.
    let text = std::fs::read_to_string(&data).unwrap();
    let truncated: String = text
        .lines()
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            cells[..cells.len() - 1].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, truncated).unwrap();
    let out = run(&[
        "impute",
        "--model",
        ckpt.to_str().unwrap(),
        "--data",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing column"));
}

#[test]
fn synth_is_byte_identical_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, gen_config_json()).unwrap();
    for out_dir in [&a, &b] {
        let out = run(&[
            "synth",
            "--gen-config",
            cfg.to_str().unwrap(),
            "--seed",
            "21",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for name in ["data.csv", "latents.csv", "schema.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn split_emits_holes_and_eval_scores_perfect_predictions_as_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 17);
    let split_dir = dir.path().join("split");
    std::fs::create_dir_all(&split_dir).unwrap();
    let out = run(&[
        "split",
        "--data",
        data.to_str().unwrap(),
        "--schema",
        schema.to_str().unwrap(),
        "--fractions",
        "0.5,0.25,0.25",
        "--mcar",
        "0.25",
        "--seed",
        "2",
        "--out",
        split_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["train.csv", "validation.csv", "test.csv", "test_holes.csv"] {
        assert!(split_dir.join(name).exists(), "{name} missing");
    }

    // Build a "perfect" filled CSV: the original test rows before holes.
    // Recover them by applying the hole values back onto the holey test CSV.
    let holey = std::fs::read_to_string(split_dir.join("test.csv")).unwrap();
    let holes_text = std::fs::read_to_string(split_dir.join("test_holes.csv")).unwrap();
    let mut lines: Vec<Vec<String>> = holey
        .lines()
        .map(|l| l.split(',').map(|c| c.to_string()).collect())
        .collect();
    let header = lines[0].clone();
    let n_holes = holes_text.lines().count() - 1;
    for line in holes_text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let row: usize = parts[0].parse().unwrap();
        let col = header.iter().position(|h| h == parts[1]).unwrap();
        lines[row + 1][col] = parts[2].to_string();
    }
    let perfect: String =
        lines.into_iter().map(|cells| cells.join(",")).collect::<Vec<_>>().join("\n") + "\n";
    let filled_path = split_dir.join("perfect.csv");
    std::fs::write(&filled_path, perfect).unwrap();

    let eval_dir = dir.path().join("eval");
    std::fs::create_dir_all(&eval_dir).unwrap();
    let out = run(&[
        "eval",
        "--schema",
        schema.to_str().unwrap(),
        "--filled",
        filled_path.to_str().unwrap(),
        "--holes",
        split_dir.join("test_holes.csv").to_str().unwrap(),
        "--train-data",
        split_dir.join("train.csv").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let mut total_cells = 0usize;
    for line in metrics.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let value: f64 = parts[2].parse().unwrap();
        assert_eq!(value, 0.0, "metric row {line} nonzero for perfect predictions");
        if parts[0].starts_with("feature:") {
            total_cells += parts[3].parse::<usize>().unwrap();
        }
    }
    assert_eq!(total_cells, n_holes, "metric cell counts disagree with injected holes");
}

#[test]
fn identical_seed_and_config_reproduce_history_and_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 19);
    let run_once = |sub: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let out_dir = dir.path().join(sub);
        std::fs::create_dir_all(&out_dir).unwrap();
        let ckpt = train_small(
            &out_dir,
            &data,
            &schema,
            &["--kl", "bound", "--inducing", "5", "--batch", "2"],
        );
        let imp = out_dir.join("imp");
        std::fs::create_dir_all(&imp).unwrap();
        let out = run(&[
            "impute",
            "--model",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            imp.to_str().unwrap(),
            "--samples",
            "9",
            "--seed",
            "3",
        ]);
        assert!(out.status.success());
        (
            std::fs::read(out_dir.join("history.csv")).unwrap(),
            std::fs::read(imp.join("filled.csv")).unwrap(),
            std::fs::read(imp.join("nll.csv")).unwrap(),
        )
    };
    let a = run_once("a");
    let b = run_once("b");
    assert_eq!(a.0, b.0, "history differs");
    assert_eq!(a.1, b.1, "filled CSV differs");
    assert_eq!(a.2, b.2, "NLL CSV differs");
}

#[test]
fn predict_scores_known_cells_and_fills_everything() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = synth_into(dir.path(), 23);
    let ckpt = train_small(dir.path(), &data, &schema, &["--kl", "exact"]);
    let pred_dir = dir.path().join("pred");
    std::fs::create_dir_all(&pred_dir).unwrap();
    let out = run(&[
        "predict",
        "--model",
        ckpt.to_str().unwrap(),
        "--covariates",
        data.to_str().unwrap(),
        "--out",
        pred_dir.to_str().unwrap(),
        "--samples",
        "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let predicted = std::fs::read_to_string(pred_dir.join("predicted.csv")).unwrap();
    // No empty cells in the prediction output.
    for line in predicted.lines().skip(1) {
        assert!(!line.split(',').any(|c| c.is_empty()), "unfilled cell in {line}");
    }
    let nll = std::fs::read_to_string(pred_dir.join("nll.csv")).unwrap();
    assert!(nll.lines().count() > 2);
}
