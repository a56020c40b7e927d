//! Noise-ratio sweep: robust vs baseline training per ratio, evaluated on a
//! shared clean test set, with stability variances over the resulting rSums.
//!
//! Experiments are independent given their derived seed streams, so ratios
//! run in parallel; all written artifacts depend only on the spec.

use anyhow::Result;
use rayon::prelude::*;
use sdd_core::dataset::{generate, GeneratorConfig};
use sdd_core::encoder::EncoderParams;
use sdd_core::evaluation::{stability, MetricsReport, StabilityReport};
use sdd_core::seed::stream_seed;
use sdd_core::trainer::{baseline_train, train, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const SWEEP_TEST_PAIRS: usize = 500;

/// Full description of one sweep run.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub noise_ratios: Vec<f64>,
    /// Template: noise_ratio and seed are re-derived per ratio.
    pub generator: GeneratorConfig,
    /// Template: seed is re-derived per ratio.
    pub trainer: TrainConfig,
    pub n_test: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmRecord {
    pub noise_ratio: f64,
    pub sdd_rsum: f64,
    pub baseline_rsum: f64,
    pub sdd_r1_avg: f64,
    pub baseline_r1_avg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub per_ratio: Vec<ArmRecord>,
    pub sdd_stability: StabilityReport,
    pub baseline_stability: StabilityReport,
}

pub struct SweepOutcome {
    pub summary: SweepSummary,
    pub sdd_reports: Vec<MetricsReport>,
    pub baseline_reports: Vec<MetricsReport>,
}

fn ratio_dir_name(prefix: &str, ratio: f64) -> String {
    format!("{prefix}_noise_{ratio}")
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    std::fs::create_dir_all(&spec.out_dir)?;
    let test_set = generate(&GeneratorConfig {
        n_pairs: spec.n_test,
        noise_ratio: 0.0,
        seed: stream_seed(spec.master_seed, "sweep-test"),
        ..spec.generator.clone()
    })?;

    let arms: Vec<(MetricsReport, MetricsReport)> = spec
        .noise_ratios
        .par_iter()
        .enumerate()
        .map(|(i, &ratio)| -> Result<(MetricsReport, MetricsReport)> {
            let gen = GeneratorConfig {
                noise_ratio: ratio,
                seed: stream_seed(spec.master_seed, &format!("sweep-data-{i}")),
                ..spec.generator.clone()
            };
            let dataset = generate(&gen)?;
            let init = EncoderParams::identity_for(&dataset)?;
            let cfg = TrainConfig {
                seed: stream_seed(spec.master_seed, &format!("sweep-train-{i}")),
                ..spec.trainer.clone()
            };

            let robust = train(&dataset, &init, &cfg)?;
            let sdd_metrics = crate::commands::write_run_outputs(
                &spec.out_dir.join(ratio_dir_name("sdd", ratio)),
                &dataset,
                &robust,
                Some(&test_set),
            )?;

            let plain = baseline_train(&dataset, &init, &cfg)?;
            let baseline_metrics = crate::commands::write_run_outputs(
                &spec.out_dir.join(ratio_dir_name("baseline", ratio)),
                &dataset,
                &plain,
                Some(&test_set),
            )?;
            Ok((sdd_metrics, baseline_metrics))
        })
        .collect::<Result<_>>()?;

    let per_ratio: Vec<ArmRecord> = spec
        .noise_ratios
        .iter()
        .zip(&arms)
        .map(|(&ratio, (sdd, baseline))| ArmRecord {
            noise_ratio: ratio,
            sdd_rsum: sdd.rsum,
            baseline_rsum: baseline.rsum,
            sdd_r1_avg: sdd.r1_average(),
            baseline_r1_avg: baseline.r1_average(),
        })
        .collect();

    let sdd_pairs: Vec<(f64, f64)> = per_ratio
        .iter()
        .map(|a| (a.noise_ratio, a.sdd_rsum))
        .collect();
    let baseline_pairs: Vec<(f64, f64)> = per_ratio
        .iter()
        .map(|a| (a.noise_ratio, a.baseline_rsum))
        .collect();
    let summary = SweepSummary {
        per_ratio,
        sdd_stability: stability(&sdd_pairs)?,
        baseline_stability: stability(&baseline_pairs)?,
    };
    std::fs::write(
        spec.out_dir.join("sweep_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    let (sdd_reports, baseline_reports) = arms.into_iter().unzip();
    Ok(SweepOutcome {
        summary,
        sdd_reports,
        baseline_reports,
    })
}
