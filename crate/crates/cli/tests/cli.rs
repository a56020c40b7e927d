//! CLI behavior: exit codes, output files, flag/config precedence, and
//! byte-level reproducibility of identical invocations.

use std::path::Path;

fn run(args: &[&str]) -> i32 {
    sdd_cli::run(args.iter().map(|s| s.to_string()))
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    assert_eq!(run(&["sdd", "generate", "--bogus", "1", "--out", "x"]), 2);
}

#[test]
fn generate_rejects_trainer_flags() {
    // conflicting flag sets: generate does not take a dataset
    assert_eq!(
        run(&["sdd", "generate", "--dataset", "d.txt", "--out", "x"]),
        2
    );
}

#[test]
fn missing_dataset_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        run(&[
            "sdd",
            "train",
            "--dataset",
            "/nonexistent/pairs.txt",
            "--out",
            &s(&out)
        ]),
        1
    );
}

#[test]
fn invalid_noise_ratio_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.txt");
    assert_eq!(
        run(&[
            "sdd",
            "generate",
            "--n-pairs",
            "50",
            "--noise-ratio",
            "1.5",
            "--out",
            &s(&out)
        ]),
        1
    );
}

#[test]
fn pipeline_generate_train_eval_produces_declared_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.txt");
    let test_data = dir.path().join("t.txt");
    let out = dir.path().join("run1");

    assert_eq!(
        run(&[
            "sdd",
            "generate",
            "--n-pairs",
            "300",
            "--latent-dim",
            "64",
            "--d-img",
            "64",
            "--d-txt",
            "64",
            "--noise-ratio",
            "0.4",
            "--seed",
            "7",
            "--out",
            &s(&data)
        ]),
        0
    );
    assert_eq!(
        run(&[
            "sdd",
            "generate",
            "--n-pairs",
            "60",
            "--latent-dim",
            "64",
            "--d-img",
            "64",
            "--d-txt",
            "64",
            "--noise-ratio",
            "0",
            "--seed",
            "8",
            "--out",
            &s(&test_data)
        ]),
        0
    );
    assert_eq!(
        run(&[
            "sdd",
            "train",
            "--dataset",
            &s(&data),
            "--epochs",
            "2",
            "--batch-size",
            "64",
            "--lr",
            "0.005",
            "--seed",
            "3",
            "--out",
            &s(&out)
        ]),
        0
    );

    for file in [
        "final.ckpt",
        "run_log.jsonl",
        "metrics.json",
        "qua_summary.csv",
        "hist_epoch_1.csv",
        "hist_epoch_2.csv",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let log = std::fs::read_to_string(out.join("run_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let eval_out = dir.path().join("eval");
    assert_eq!(
        run(&[
            "sdd",
            "eval",
            "--checkpoint",
            &s(&out.join("final.ckpt")),
            "--dataset",
            &s(&test_data),
            "--out",
            &s(&eval_out)
        ]),
        0
    );
    let metrics = std::fs::read_to_string(eval_out.join("metrics.json")).unwrap();
    assert!(metrics.contains("\"rsum\""));
}

#[test]
fn identical_invocations_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.txt");
    assert_eq!(
        run(&[
            "sdd",
            "generate",
            "--n-pairs",
            "200",
            "--latent-dim",
            "64",
            "--d-img",
            "64",
            "--d-txt",
            "64",
            "--noise-ratio",
            "0.3",
            "--seed",
            "11",
            "--out",
            &s(&data)
        ]),
        0
    );
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&out_a, &out_b] {
        assert_eq!(
            run(&[
                "sdd",
                "train",
                "--dataset",
                &s(&data),
                "--epochs",
                "2",
                "--batch-size",
                "64",
                "--seed",
                "5",
                "--out",
                &s(out)
            ]),
            0
        );
    }
    for file in ["final.ckpt", "metrics.json", "run_log.jsonl"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "bytes differ for {file}");
    }
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.txt");
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "n-pairs=120\nlatent-dim=32\nd-img=32\nd-txt=32\nnoise-ratio=0.2\nseed=9\n",
    )
    .unwrap();
    assert_eq!(
        run(&["sdd", "generate", "--config", &s(&cfg), "--out", &s(&data)]),
        0
    );
    let header = std::fs::read_to_string(&data).unwrap();
    assert!(header.starts_with("120 32 32\n"), "config defaults ignored");

    // explicit flag overrides the config value
    let data2 = dir.path().join("d2.txt");
    assert_eq!(
        run(&[
            "sdd",
            "generate",
            "--config",
            &s(&cfg),
            "--n-pairs",
            "40",
            "--out",
            &s(&data2)
        ]),
        0
    );
    let header2 = std::fs::read_to_string(&data2).unwrap();
    assert!(
        header2.starts_with("40 32 32\n"),
        "flag did not override config"
    );
}

#[test]
fn drop_ablation_and_baseline_run_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.txt");
    assert_eq!(
        run(&[
            "sdd",
            "generate",
            "--n-pairs",
            "200",
            "--latent-dim",
            "64",
            "--d-img",
            "64",
            "--d-txt",
            "64",
            "--noise-ratio",
            "0.2",
            "--seed",
            "2",
            "--out",
            &s(&data)
        ]),
        0
    );
    let base_out = dir.path().join("base");
    assert_eq!(
        run(&[
            "sdd",
            "baseline",
            "--dataset",
            &s(&data),
            "--epochs",
            "1",
            "--out",
            &s(&base_out)
        ]),
        0
    );
    let drop_out = dir.path().join("drop");
    assert_eq!(
        run(&[
            "sdd",
            "drop-ablation",
            "--dataset",
            &s(&data),
            "--drop-ratio",
            "0.5",
            "--epochs",
            "1",
            "--out",
            &s(&drop_out)
        ]),
        0
    );
    assert!(base_out.join("final.ckpt").exists());
    assert!(drop_out.join("final.ckpt").exists());
}

#[test]
fn sweep_writes_summary_and_per_ratio_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    assert_eq!(
        run(&[
            "sdd",
            "sweep",
            "--noise-ratios",
            "0.2,0.6",
            "--n-pairs",
            "200",
            "--latent-dim",
            "64",
            "--d-img",
            "64",
            "--d-txt",
            "64",
            "--epochs",
            "1",
            "--seed",
            "4",
            "--out",
            &s(&out)
        ]),
        0
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sweep_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["per_ratio"].as_array().unwrap().len(), 2);
    for arm in [
        "sdd_noise_0.2",
        "baseline_noise_0.2",
        "sdd_noise_0.6",
        "baseline_noise_0.6",
    ] {
        assert!(out.join(arm).join("metrics.json").exists(), "missing {arm}");
    }
}
