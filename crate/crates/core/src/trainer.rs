//! Training loops: the full self-drop / dual-weight procedure, the vanilla
//! fine-tuning baseline, and the random-drop ablation.
//!
//! Per epoch the full procedure recomputes all diagonal similarities, drops
//! at alpha, refits the mixture on the full similarity sequence, snapshots
//! the base parameters into a siamese copy, and then per batch measures the
//! siamese loss delta on the memory bank to weight the base update. The bank
//! itself is built once, from the initial parameters.

use crate::dataset::PairDataset;
use crate::encoder::{dataset_diagonal, EncoderParams, SimilarityTable};
use crate::error::{Error, Result};
use crate::objective::{
    loss_and_gradients, optimizer_step, OptimizerState, DEFAULT_LEARNING_RATE, DEFAULT_WEIGHT_DECAY,
};
use crate::partition::{
    confidence_weights, fit_gmm, qua_counts, qua_partition, self_drop, GmmParams, DEFAULT_SIG_CUT,
    DEFAULT_VAGUE_CUT,
};
use crate::seed::stream_rng;
use crate::significance::{build_memory_bank, entry_losses, significance_weights};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ALPHA: f64 = 20.0;
pub const DEFAULT_BETA: f64 = 30.0;
pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 128;

const GMM_MAX_ITER: usize = 100;
const GMM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.beta <= self.alpha {
            return Err(Error::Config(format!(
                "beta ({}) must exceed alpha ({}) so the bank stays high-purity",
                self.beta, self.alpha
            )));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-epoch observability record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub n_kept: usize,
    pub n_dropped: usize,
    pub mean_w_con: f64,
    pub mean_w_sig: f64,
    /// Summed weighted contrastive loss over the epoch's batches.
    pub train_loss: f64,
    /// Mixture fitted on the full similarity sequence; absent for the
    /// baseline loops, which skip the confidence pass.
    pub gmm: Option<GmmParams>,
    /// Counts in order: noisy, vague, clean-insignificant, clean-significant.
    pub qua_counts: [usize; 4],
}

/// Final parameters plus per-epoch reports and the similarity tables they
/// were derived from (kept for histogram dumps).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub reports: Vec<EpochReport>,
    pub epoch_similarities: Vec<SimilarityTable>,
}

/// One JSON record per epoch report.
pub fn run_log_lines(reports: &[EpochReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serialization cannot fail"));
        out.push('\n');
    }
    out
}

fn gather_rows(features: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((indices.len(), features.ncols()));
    for (slot, &i) in indices.iter().enumerate() {
        out.row_mut(slot).assign(&features.row(i));
    }
    out
}

fn check_params_shape(dataset: &PairDataset, init: &EncoderParams) -> Result<()> {
    if init.d_img() != dataset.d_img() || init.d_txt() != dataset.d_txt() {
        return Err(Error::Shape(format!(
            "encoder expects {}x{} inputs, dataset provides {}x{}",
            init.d_img(),
            init.d_txt(),
            dataset.d_img(),
            dataset.d_txt()
        )));
    }
    Ok(())
}

fn abort_context(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite { stage } => Error::NonFinite {
            stage: format!("{stage} (epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

/// Full self-drop / dual-weight training.
pub fn train(
    dataset: &PairDataset,
    init: &EncoderParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    check_params_shape(dataset, init)?;

    let mut outcome = TrainOutcome {
        params: init.clone(),
        reports: Vec::new(),
        epoch_similarities: Vec::new(),
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }

    let init_sims = dataset_diagonal(init, dataset)?;
    let bank = build_memory_bank(init, dataset, &init_sims, config.beta)?;

    let n = dataset.len();
    let mut base = init.clone();
    let mut base_opt = OptimizerState::new(&base, config.learning_rate, config.weight_decay);
    let mut shuffle_rng = stream_rng(config.seed, "shuffle");

    for epoch in 1..=config.epochs {
        let mut sims = dataset_diagonal(&base, dataset)?;
        sims.computed_at_epoch = epoch;
        let partial = self_drop(&sims, config.alpha)?;
        let gmm = fit_gmm(&sims.diag, GMM_MAX_ITER, GMM_TOL)?;
        let w_con_all = confidence_weights(&sims, &gmm);

        // fresh snapshot and fresh optimizer moments for the siamese copy
        let mut siamese = base.clone();
        debug_assert_eq!(siamese, base);
        let mut siamese_opt =
            OptimizerState::new(&siamese, config.learning_rate, config.weight_decay);

        let mut order = partial.kept_indices.clone();
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }

        let mut train_loss = 0.0;
        let mut w_sig_sum = 0.0;
        let mut w_sig_all = vec![1.0f64; n];
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            batches += 1;
            debug_assert!(batch.iter().all(|i| partial.kept_indices.contains(i)));
            let imgs = gather_rows(&dataset.image_features, batch);
            let txts = gather_rows(&dataset.text_features, batch);
            let w_con_batch: Vec<f64> = batch.iter().map(|&i| w_con_all.w_con[i]).collect();
            let ones = vec![1.0; batch.len()];

            let loss_before = entry_losses(&siamese, dataset, &bank, batch)
                .map_err(|e| abort_context(e, epoch, batches))?;
            let (_, sia_grads) =
                loss_and_gradients(&siamese, imgs.view(), txts.view(), &w_con_batch, &ones)
                    .map_err(|e| abort_context(e, epoch, batches))?;
            optimizer_step(&mut siamese_opt, &mut siamese, &sia_grads)
                .map_err(|e| abort_context(e, epoch, batches))?;
            let loss_after = entry_losses(&siamese, dataset, &bank, batch)
                .map_err(|e| abort_context(e, epoch, batches))?;

            let records = significance_weights(&loss_before, &loss_after)?;
            let w_sig_batch: Vec<f64> = records.iter().map(|r| r.w_sig).collect();
            for (&i, &w) in batch.iter().zip(&w_sig_batch) {
                w_sig_all[i] = w;
                w_sig_sum += w;
            }

            let (loss, grads) =
                loss_and_gradients(&base, imgs.view(), txts.view(), &w_con_batch, &w_sig_batch)
                    .map_err(|e| abort_context(e, epoch, batches))?;
            optimizer_step(&mut base_opt, &mut base, &grads)
                .map_err(|e| abort_context(e, epoch, batches))?;
            train_loss += loss.total;
        }
        debug_assert_eq!(
            batches,
            partial.kept_indices.len().div_ceil(config.batch_size)
        );
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("epoch {epoch} loss"),
            });
        }

        let kept = partial.kept_indices.len();
        let mean_w_con = partial
            .kept_indices
            .iter()
            .map(|&i| w_con_all.w_con[i])
            .sum::<f64>()
            / kept as f64;
        let labels = qua_partition(
            &sims,
            &w_con_all.w_con,
            &w_sig_all,
            config.alpha,
            DEFAULT_VAGUE_CUT,
            DEFAULT_SIG_CUT,
        )?;
        outcome.reports.push(EpochReport {
            epoch,
            n_kept: kept,
            n_dropped: n - kept,
            mean_w_con,
            mean_w_sig: w_sig_sum / kept as f64,
            train_loss,
            gmm: Some(gmm),
            qua_counts: qua_counts(&labels),
        });
        outcome.epoch_similarities.push(sims);
        log::debug!("epoch {epoch}: kept {kept}/{n}, loss {train_loss:.4}",);
    }

    outcome.params = base;
    Ok(outcome)
}

/// Vanilla fine-tuning: no drop, unit weights, no siamese pass. The optional
/// subset restricts training to those indices (used by the drop ablation).
fn plain_loop(
    dataset: &PairDataset,
    init: &EncoderParams,
    config: &TrainConfig,
    subset: Option<Vec<usize>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    check_params_shape(dataset, init)?;

    let mut outcome = TrainOutcome {
        params: init.clone(),
        reports: Vec::new(),
        epoch_similarities: Vec::new(),
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }

    let n = dataset.len();
    let train_indices: Vec<usize> = subset.unwrap_or_else(|| (0..n).collect());
    if train_indices.is_empty() {
        return Err(Error::Config("training subset is empty".into()));
    }
    let mut base = init.clone();
    let mut opt = OptimizerState::new(&base, config.learning_rate, config.weight_decay);
    let mut shuffle_rng = stream_rng(config.seed, "shuffle");
    let ones_all = vec![1.0f64; n];

    for epoch in 1..=config.epochs {
        // similarity pass kept for observability parity with the full loop
        let mut sims = dataset_diagonal(&base, dataset)?;
        sims.computed_at_epoch = epoch;

        let mut order = train_indices.clone();
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut train_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let imgs = gather_rows(&dataset.image_features, batch);
            let txts = gather_rows(&dataset.text_features, batch);
            let ones = vec![1.0; batch.len()];
            let (loss, grads) = loss_and_gradients(&base, imgs.view(), txts.view(), &ones, &ones)
                .map_err(|e| abort_context(e, epoch, 0))?;
            optimizer_step(&mut opt, &mut base, &grads)?;
            train_loss += loss.total;
        }
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("epoch {epoch} loss"),
            });
        }

        let labels = qua_partition(
            &sims,
            &ones_all,
            &ones_all,
            config.alpha,
            DEFAULT_VAGUE_CUT,
            DEFAULT_SIG_CUT,
        )?;
        outcome.reports.push(EpochReport {
            epoch,
            n_kept: train_indices.len(),
            n_dropped: n - train_indices.len(),
            mean_w_con: 1.0,
            mean_w_sig: 1.0,
            train_loss,
            gmm: None,
            qua_counts: qua_counts(&labels),
        });
        outcome.epoch_similarities.push(sims);
    }

    outcome.params = base;
    Ok(outcome)
}

/// Fine-tune on every pair with unit weights.
pub fn baseline_train(
    dataset: &PairDataset,
    init: &EncoderParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    plain_loop(dataset, init, config, None)
}

/// Baseline loop over a seeded uniformly random subset keeping
/// ceil((1 - drop_ratio) * N) pairs.
pub fn drop_ratio_train(
    dataset: &PairDataset,
    init: &EncoderParams,
    config: &TrainConfig,
    drop_ratio: f64,
) -> Result<TrainOutcome> {
    if !(0.0..1.0).contains(&drop_ratio) {
        return Err(Error::Config(format!(
            "drop_ratio must lie in [0, 1), got {drop_ratio}"
        )));
    }
    let n = dataset.len();
    let keep = ((1.0 - drop_ratio) * n as f64).ceil() as usize;
    let mut all: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(config.seed, "drop");
    all.shuffle(&mut rng);
    let mut subset: Vec<usize> = all.into_iter().take(keep).collect();
    subset.sort_unstable();
    plain_loop(dataset, init, config, Some(subset))
}
