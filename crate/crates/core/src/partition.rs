//! Similarity-threshold filtering, two-component mixture confidence weights,
//! and the four-way sample taxonomy used for diagnostics.

use crate::encoder::SimilarityTable;
use crate::error::{Error, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// Indices surviving the strict similarity threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDataset {
    pub kept_indices: Vec<usize>,
    pub alpha: f64,
}

/// Keep exactly the pairs with similarity strictly above `alpha`.
pub fn self_drop(sims: &SimilarityTable, alpha: f64) -> Result<PartialDataset> {
    if sims.diag.is_empty() {
        return Err(Error::Config("similarity table is empty".into()));
    }
    let kept_indices: Vec<usize> = sims
        .diag
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > alpha)
        .map(|(i, _)| i)
        .collect();
    if kept_indices.is_empty() {
        return Err(Error::EmptySelection {
            what: "partial dataset".into(),
            threshold: alpha,
            hint: "no pair exceeds the drop threshold; lower alpha to match the similarity scale"
                .into(),
        });
    }
    Ok(PartialDataset {
        kept_indices,
        alpha,
    })
}

pub const VARIANCE_FLOOR: f64 = 1e-4;
/// Means closer than this are the declared degenerate case.
pub const DEGENERATE_MEAN_GAP: f64 = 1e-6;

/// Two-component 1-D Gaussian mixture fitted by EM.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GmmParams {
    pub mix_weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub higher_mean_component: usize,
    pub iterations_run: usize,
    pub converged: bool,
    #[serde(skip)]
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmParams {
    fn degenerate(value: f64) -> Self {
        GmmParams {
            mix_weights: [0.5, 0.5],
            means: [value, value],
            variances: [VARIANCE_FLOOR, VARIANCE_FLOOR],
            higher_mean_component: 0,
            iterations_run: 0,
            converged: false,
            log_likelihood_trace: Vec::new(),
        }
    }

    /// Log-density of one component including its mixing weight.
    fn log_weighted_density(&self, k: usize, x: f64) -> f64 {
        let var = self.variances[k];
        self.mix_weights[k].ln()
            - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
            - (x - self.means[k]).powi(2) / (2.0 * var)
    }

    /// Posterior responsibilities of both components at `x`.
    pub fn posterior(&self, x: f64) -> [f64; 2] {
        let l0 = self.log_weighted_density(0, x);
        let l1 = self.log_weighted_density(1, x);
        let max = l0.max(l1);
        let e0 = (l0 - max).exp();
        let e1 = (l1 - max).exp();
        let sum = e0 + e1;
        [e0 / sum, e1 / sum]
    }

    /// Total log-likelihood of the data under the mixture.
    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| {
                let l0 = self.log_weighted_density(0, x);
                let l1 = self.log_weighted_density(1, x);
                let max = l0.max(l1);
                max + ((l0 - max).exp() + (l1 - max).exp()).ln()
            })
            .sum()
    }
}

/// Linear-interpolation percentile, q in [0, 1]; input need not be sorted.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// EM fit with deterministic percentile initialization. Fewer than two
/// distinct values yields a degenerate mixture (equal means) that
/// [`confidence_weights`] maps to all-ones.
pub fn fit_gmm(values: &[f64], max_iter: usize, tol: f64) -> Result<GmmParams> {
    if values.is_empty() {
        return Err(Error::Config("cannot fit mixture on empty data".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "mixture input".into(),
        });
    }
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return Ok(GmmParams::degenerate(first));
    }

    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let global_mean = values.iter().sum::<f64>() / n;
    let global_var = (values
        .iter()
        .map(|&v| (v - global_mean).powi(2))
        .sum::<f64>()
        / n)
        .max(VARIANCE_FLOOR);

    let mut gmm = GmmParams {
        mix_weights: [0.5, 0.5],
        means: [percentile(&sorted, 0.10), percentile(&sorted, 0.90)],
        variances: [global_var, global_var],
        higher_mean_component: 0,
        iterations_run: 0,
        converged: false,
        log_likelihood_trace: Vec::new(),
    };

    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 0..max_iter {
        // E-step in the log domain
        let mut resp = vec![[0.0f64; 2]; values.len()];
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let l0 = gmm.log_weighted_density(0, x);
            let l1 = gmm.log_weighted_density(1, x);
            let max = l0.max(l1);
            let e0 = (l0 - max).exp();
            let e1 = (l1 - max).exp();
            let sum = e0 + e1;
            resp[i] = [e0 / sum, e1 / sum];
            ll += max + sum.ln();
        }
        gmm.log_likelihood_trace.push(ll);
        gmm.iterations_run = iter + 1;
        if ll - prev_ll < tol && iter > 0 {
            gmm.converged = true;
            break;
        }
        prev_ll = ll;

        // M-step, closed form
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk <= 0.0 {
                continue; // component lost all mass; keep previous parameters
            }
            gmm.mix_weights[k] = nk / n;
            let mean = resp.iter().zip(values).map(|(r, &x)| r[k] * x).sum::<f64>() / nk;
            gmm.means[k] = mean;
            gmm.variances[k] = (resp
                .iter()
                .zip(values)
                .map(|(r, &x)| r[k] * (x - mean).powi(2))
                .sum::<f64>()
                / nk)
                .max(VARIANCE_FLOOR);
        }
        let total: f64 = gmm.mix_weights[0] + gmm.mix_weights[1];
        gmm.mix_weights[0] /= total;
        gmm.mix_weights[1] /= total;
    }
    gmm.higher_mean_component = if gmm.means[1] > gmm.means[0] { 1 } else { 0 };
    Ok(gmm)
}

/// Per-pair confidence weights in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceWeights {
    pub w_con: Vec<f64>,
}

/// A two-component fit must beat a single Gaussian by this BIC margin
/// (3 extra parameters) before its posteriors are trusted; otherwise the
/// similarity distribution is effectively unimodal and every pair gets
/// full confidence.
fn mixture_is_informative(gmm: &GmmParams, values: &[f64]) -> bool {
    if (gmm.means[0] - gmm.means[1]).abs() < DEGENERATE_MEAN_GAP {
        return false;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = (values.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);
    let single_ll: f64 = values
        .iter()
        .map(|&x| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var))
        .sum();
    2.0 * (gmm.log_likelihood(values) - single_ll) >= 3.0 * n.ln()
}

/// Posterior of the higher-mean component per pair. Degenerate or
/// uninformative mixtures fall back to all-ones.
pub fn confidence_weights(sims: &SimilarityTable, gmm: &GmmParams) -> ConfidenceWeights {
    if !mixture_is_informative(gmm, &sims.diag) {
        return ConfidenceWeights {
            w_con: vec![1.0; sims.diag.len()],
        };
    }
    let hi = gmm.higher_mean_component;
    let w_con = sims.diag.iter().map(|&x| gmm.posterior(x)[hi]).collect();
    ConfidenceWeights { w_con }
}

pub const DEFAULT_VAGUE_CUT: f64 = 0.5;
pub const DEFAULT_SIG_CUT: f64 = 1.0;

/// Four-way diagnostic taxonomy of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuaLabel {
    Noisy,
    Vague,
    CleanInsignificant,
    CleanSignificant,
}

/// Label every pair: dropped pairs are noisy; kept pairs split by confidence
/// and significance cuts.
pub fn qua_partition(
    sims: &SimilarityTable,
    w_con: &[f64],
    w_sig: &[f64],
    alpha: f64,
    vague_cut: f64,
    sig_cut: f64,
) -> Result<Vec<QuaLabel>> {
    let n = sims.diag.len();
    if w_con.len() != n || w_sig.len() != n {
        return Err(Error::Shape(format!(
            "qua_partition: lengths differ (sims {n}, w_con {}, w_sig {})",
            w_con.len(),
            w_sig.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            if sims.diag[i] <= alpha {
                QuaLabel::Noisy
            } else if w_con[i] < vague_cut {
                QuaLabel::Vague
            } else if w_sig[i] >= sig_cut {
                QuaLabel::CleanSignificant
            } else {
                QuaLabel::CleanInsignificant
            }
        })
        .collect())
}

/// Counts in label order: noisy, vague, clean-insignificant, clean-significant.
pub fn qua_counts(labels: &[QuaLabel]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for l in labels {
        let idx = match l {
            QuaLabel::Noisy => 0,
            QuaLabel::Vague => 1,
            QuaLabel::CleanInsignificant => 2,
            QuaLabel::CleanSignificant => 3,
        };
        counts[idx] += 1;
    }
    counts
}

pub const HISTOGRAM_RANGE: (f64, f64) = (-100.0, 100.0);
pub const HISTOGRAM_BINS: usize = 100;

/// One bin of the clean/noisy similarity histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count_clean: usize,
    pub count_noisy: usize,
}

/// Histogram of scaled similarities over [-100, 100], split by the
/// diagnostic clean flags.
pub fn similarity_histogram(
    diag: &[f64],
    is_clean: &[bool],
    n_bins: usize,
) -> Result<Vec<HistogramBin>> {
    if diag.len() != is_clean.len() {
        return Err(Error::Shape(format!(
            "histogram: {} similarities vs {} flags",
            diag.len(),
            is_clean.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let (lo, hi) = HISTOGRAM_RANGE;
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            bin_low: lo + b as f64 * width,
            bin_high: lo + (b + 1) as f64 * width,
            count_clean: 0,
            count_noisy: 0,
        })
        .collect();
    for (&s, &clean) in diag.iter().zip(is_clean) {
        let idx = (((s - lo) / width).floor() as isize).clamp(0, n_bins as isize - 1) as usize;
        if clean {
            bins[idx].count_clean += 1;
        } else {
            bins[idx].count_noisy += 1;
        }
    }
    Ok(bins)
}

/// CSV dump: "bin_low,bin_high,count_clean,count_noisy".
pub fn write_histogram_csv(bins: &[HistogramBin], path: &Path) -> Result<()> {
    let mut out = String::from("bin_low,bin_high,count_clean,count_noisy\n");
    for b in bins {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            b.bin_low, b.bin_high, b.count_clean, b.count_noisy
        );
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}
