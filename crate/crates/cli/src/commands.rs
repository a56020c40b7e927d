//! Sub-command implementations and run-directory output writing.

use crate::args::{
    resolve_generator, resolve_trainer, ConfigFile, DropArgs, EvalArgs, GenerateArgs, TrainArgs,
};
use anyhow::{Context, Result};
use sdd_core::dataset::{generate, load_pairs, save_pairs, PairDataset};
use sdd_core::encoder::EncoderParams;
use sdd_core::evaluation::{clean_subset, full_report, MetricsReport};
use sdd_core::partition::{similarity_histogram, write_histogram_csv, HISTOGRAM_BINS};
use sdd_core::trainer::{baseline_train, drop_ratio_train, run_log_lines, train, TrainOutcome};
use std::fmt::Write as _;
use std::path::Path;

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let cfg = resolve_generator(&args.gen, args.seed, &file)?;
    let ds = generate(&cfg)?;
    save_pairs(&ds, &args.out)?;
    println!(
        "wrote {} pairs (d_img {}, d_txt {}, noise {:.3}) to {}",
        ds.len(),
        ds.d_img(),
        ds.d_txt(),
        cfg.noise_ratio,
        args.out.display()
    );
    Ok(())
}

/// Checkpoint, run log, per-epoch histograms, qua summary, and a metrics
/// report; the report is evaluated on `eval_set` (or, when absent, on the
/// flagged-clean subset of the training data).
pub fn write_run_outputs(
    out_dir: &Path,
    dataset: &PairDataset,
    outcome: &TrainOutcome,
    eval_set: Option<&PairDataset>,
) -> Result<MetricsReport> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    outcome.params.save(&out_dir.join("final.ckpt"))?;
    std::fs::write(
        out_dir.join("run_log.jsonl"),
        run_log_lines(&outcome.reports),
    )
    .context("cannot write run log")?;

    let flags = dataset.diagnostic_flags();
    for (sims, report) in outcome.epoch_similarities.iter().zip(&outcome.reports) {
        let bins = similarity_histogram(&sims.diag, flags, HISTOGRAM_BINS)?;
        write_histogram_csv(
            &bins,
            &out_dir.join(format!("hist_epoch_{}.csv", report.epoch)),
        )?;
    }

    let mut qua = String::from("epoch,noisy,vague,clean_insignificant,clean_significant\n");
    for r in &outcome.reports {
        let _ = writeln!(
            qua,
            "{},{},{},{},{}",
            r.epoch, r.qua_counts[0], r.qua_counts[1], r.qua_counts[2], r.qua_counts[3]
        );
    }
    std::fs::write(out_dir.join("qua_summary.csv"), qua).context("cannot write qua summary")?;

    let owned_clean;
    let eval_set = match eval_set {
        Some(set) => set,
        None => {
            owned_clean = clean_subset(dataset)?;
            &owned_clean
        }
    };
    let metrics = full_report(&outcome.params, eval_set)?;
    std::fs::write(out_dir.join("metrics.json"), metrics.to_json())
        .context("cannot write metrics report")?;
    Ok(metrics)
}

enum TrainMode {
    Robust,
    Baseline,
    DropAblation(f64),
}

fn run_training(args: &TrainArgs, mode: TrainMode) -> Result<()> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let cfg = resolve_trainer(&args.train, args.seed, &file)?;
    let ds = load_pairs(&args.dataset)?;
    let init = EncoderParams::identity_for(&ds)?;
    let outcome = match mode {
        TrainMode::Robust => train(&ds, &init, &cfg)?,
        TrainMode::Baseline => baseline_train(&ds, &init, &cfg)?,
        TrainMode::DropAblation(ratio) => drop_ratio_train(&ds, &init, &cfg, ratio)?,
    };
    let metrics = write_run_outputs(&args.out, &ds, &outcome, None)?;
    for r in &outcome.reports {
        log::info!(
            "epoch {}: kept {} dropped {} loss {:.4}",
            r.epoch,
            r.n_kept,
            r.n_dropped,
            r.train_loss
        );
    }
    println!(
        "trained {} epochs on {} pairs; clean-subset rsum {:.1}; outputs in {}",
        outcome.reports.len(),
        ds.len(),
        metrics.rsum,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    run_training(args, TrainMode::Robust)
}

pub fn cmd_baseline(args: &TrainArgs) -> Result<()> {
    run_training(args, TrainMode::Baseline)
}

pub fn cmd_drop_ablation(args: &DropArgs) -> Result<()> {
    let file = ConfigFile::load(args.base.config.as_deref())?;
    let ratio = file.pick_opt(args.drop_ratio, "drop-ratio")?.unwrap_or(0.0);
    run_training(&args.base, TrainMode::DropAblation(ratio))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let params = EncoderParams::load(&args.checkpoint)?;
    let ds = load_pairs(&args.dataset)?;
    let metrics = full_report(&params, &ds)?;
    println!("{}", metrics.to_json());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)
            .with_context(|| format!("cannot create output directory {}", out.display()))?;
        std::fs::write(out.join("metrics.json"), metrics.to_json())
            .context("cannot write metrics report")?;
    }
    Ok(())
}
