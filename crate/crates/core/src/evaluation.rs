//! Retrieval metrics (recall at K, rSum), cross-noise stability, and the
//! discard/bank purity diagnostics. This module is the only consumer of the
//! dataset's ground-truth flags.

use crate::dataset::PairDataset;
use crate::encoder::{similarity_matrix, EncoderParams};
use crate::error::{Error, Result};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Recall percentages for both retrieval directions plus their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub i2t_r1: f64,
    pub i2t_r5: f64,
    pub i2t_r10: f64,
    pub t2i_r1: f64,
    pub t2i_r5: f64,
    pub t2i_r10: f64,
    pub rsum: f64,
    pub n_queries: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    /// R@1 averaged over the two directions.
    pub fn r1_average(&self) -> f64 {
        0.5 * (self.i2t_r1 + self.t2i_r1)
    }
}

/// Fraction of queries whose true gallery item ranks within the top k by
/// descending similarity, as a percentage. Ties rank the smaller gallery
/// index first.
pub fn recall_at_k(sim: ArrayView2<f64>, ground_truth: &[usize], k: usize) -> Result<f64> {
    let (n_q, n_g) = (sim.nrows(), sim.ncols());
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > n_g {
        return Err(Error::Config(format!("k = {k} exceeds gallery size {n_g}")));
    }
    if ground_truth.len() != n_q {
        return Err(Error::Shape(format!(
            "{} ground-truth entries for {} queries",
            ground_truth.len(),
            n_q
        )));
    }
    let mut hits = 0usize;
    for (q, &truth) in ground_truth.iter().enumerate() {
        if truth >= n_g {
            return Err(Error::Config(format!(
                "ground truth {truth} out of range for gallery size {n_g}"
            )));
        }
        let row = sim.row(q);
        let target = row[truth];
        // rank = 1 + strictly better + equal-valued with smaller index
        let better = row.iter().filter(|&&v| v > target).count();
        let tied_before = row.iter().take(truth).filter(|&&v| v == target).count();
        if better + tied_before < k {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / n_q as f64)
}

/// Both-direction recall report over a clean test set (identity ground truth).
pub fn full_report(params: &EncoderParams, test_set: &PairDataset) -> Result<MetricsReport> {
    test_set.validate()?;
    if test_set.diagnostic_flags().iter().any(|&c| !c) {
        return Err(Error::Config(
            "full_report requires a clean test set (all match flags true)".into(),
        ));
    }
    let sim = similarity_matrix(
        params,
        test_set.image_features.view(),
        test_set.text_features.view(),
    )?;
    let truth: Vec<usize> = (0..test_set.len()).collect();
    let sim_t = sim.t().to_owned();
    let report = MetricsReport {
        i2t_r1: recall_at_k(sim.view(), &truth, 1)?,
        i2t_r5: recall_at_k(sim.view(), &truth, 5)?,
        i2t_r10: recall_at_k(sim.view(), &truth, 10)?,
        t2i_r1: recall_at_k(sim_t.view(), &truth, 1)?,
        t2i_r5: recall_at_k(sim_t.view(), &truth, 5)?,
        t2i_r10: recall_at_k(sim_t.view(), &truth, 10)?,
        rsum: 0.0,
        n_queries: test_set.len(),
    };
    Ok(MetricsReport {
        rsum: report.i2t_r1
            + report.i2t_r5
            + report.i2t_r10
            + report.t2i_r1
            + report.t2i_r5
            + report.t2i_r10,
        ..report
    })
}

/// rSum per noise ratio plus the population variance across them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// (noise_ratio, rsum) pairs in input order.
    pub rsums: Vec<(f64, f64)>,
    pub variance: f64,
}

/// Population variance of the rSum values across noise ratios.
pub fn stability(rsums: &[(f64, f64)]) -> Result<StabilityReport> {
    if rsums.len() < 2 {
        return Err(Error::Config(format!(
            "stability needs at least 2 entries, got {}",
            rsums.len()
        )));
    }
    let n = rsums.len() as f64;
    let mean = rsums.iter().map(|&(_, v)| v).sum::<f64>() / n;
    let variance = rsums.iter().map(|&(_, v)| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(StabilityReport {
        rsums: rsums.to_vec(),
        variance,
    })
}

/// Fractions of the clean and noisy populations that were dropped.
pub fn discard_purity(dropped_indices: &[usize], is_clean: &[bool]) -> (f64, f64) {
    let total_clean = is_clean.iter().filter(|&&c| c).count();
    let total_noisy = is_clean.len() - total_clean;
    let dropped_clean = dropped_indices.iter().filter(|&&i| is_clean[i]).count();
    let dropped_noisy = dropped_indices.len() - dropped_clean;
    let clean_frac = if total_clean == 0 {
        0.0
    } else {
        dropped_clean as f64 / total_clean as f64
    };
    let noisy_frac = if total_noisy == 0 {
        0.0
    } else {
        dropped_noisy as f64 / total_noisy as f64
    };
    (clean_frac, noisy_frac)
}

/// Restrict a dataset to its flagged-clean pairs (diagnostics helper; the
/// result doubles as a clean evaluation set).
pub fn clean_subset(dataset: &PairDataset) -> Result<PairDataset> {
    let keep: Vec<usize> = dataset
        .diagnostic_flags()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c)
        .map(|(i, _)| i)
        .collect();
    if keep.len() < 2 {
        return Err(Error::Config(format!(
            "clean subset has {} pairs; need at least 2",
            keep.len()
        )));
    }
    let mut img = ndarray::Array2::<f64>::zeros((keep.len(), dataset.d_img()));
    let mut txt = ndarray::Array2::<f64>::zeros((keep.len(), dataset.d_txt()));
    for (slot, &i) in keep.iter().enumerate() {
        img.row_mut(slot).assign(&dataset.image_features.row(i));
        txt.row_mut(slot).assign(&dataset.text_features.row(i));
    }
    PairDataset::new(img, txt, vec![true; keep.len()], 0.0, dataset.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GeneratorConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Sort-based rank oracle with the same smaller-index tie rule.
    fn recall_oracle(sim: &Array2<f64>, truth: &[usize], k: usize) -> f64 {
        let mut hits = 0;
        for q in 0..sim.nrows() {
            let mut order: Vec<usize> = (0..sim.ncols()).collect();
            order.sort_by(|&a, &b| {
                sim[[q, b]]
                    .partial_cmp(&sim[[q, a]])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            if order[..k].contains(&truth[q]) {
                hits += 1;
            }
        }
        100.0 * hits as f64 / sim.nrows() as f64
    }

    #[test]
    fn identity_matrix_is_perfect() {
        let sim = Array2::<f64>::eye(10);
        let truth: Vec<usize> = (0..10).collect();
        assert_eq!(recall_at_k(sim.view(), &truth, 1).unwrap(), 100.0);
    }

    #[test]
    fn anti_diagonal_truth_hits_only_fixed_points() {
        // identity sims rank gallery i first for query i, so only fixed
        // points of the truth permutation can hit at k = 1
        let n = 10;
        let sim = Array2::<f64>::eye(n);
        // reversal: no fixed point at even size
        let reversal: Vec<usize> = (0..n).map(|i| n - 1 - i).collect();
        let r = recall_at_k(sim.view(), &reversal, 1).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, recall_oracle(&sim, &reversal, 1), epsilon = 1e-12);
        // circulant variant: fixed points at 0 and n/2
        let circulant: Vec<usize> = (0..n).map(|i| (n - i) % n).collect();
        let r = recall_at_k(sim.view(), &circulant, 1).unwrap();
        assert_abs_diff_eq!(r, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, recall_oracle(&sim, &circulant, 1), epsilon = 1e-12);
        // odd size: the reversal has exactly one fixed point, the center
        let n = 9;
        let sim = Array2::<f64>::eye(n);
        let reversal: Vec<usize> = (0..n).map(|i| n - 1 - i).collect();
        let r = recall_at_k(sim.view(), &reversal, 1).unwrap();
        assert_abs_diff_eq!(r, 100.0 / 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, recall_oracle(&sim, &reversal, 1), epsilon = 1e-12);
    }

    #[test]
    fn matches_sort_oracle_on_random_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for case in 0..100 {
            let n_q = rng.random_range(1..=30);
            let n_g = rng.random_range(10..=40);
            // quantized values force plenty of ties
            let sim = Array2::from_shape_fn((n_q, n_g), |_| (rng.random::<f64>() * 8.0).floor());
            let truth: Vec<usize> = (0..n_q).map(|_| rng.random_range(0..n_g)).collect();
            for k in [1, 5, 10] {
                let ours = recall_at_k(sim.view(), &truth, k).unwrap();
                let oracle = recall_oracle(&sim, &truth, k);
                assert_eq!(ours, oracle, "case {case} k {k}");
            }
        }
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let sim = Array2::from_shape_fn((20, 25), |_| rng.random::<f64>());
        let truth: Vec<usize> = (0..20).map(|_| rng.random_range(0..25)).collect();
        let r1 = recall_at_k(sim.view(), &truth, 1).unwrap();
        let r5 = recall_at_k(sim.view(), &truth, 5).unwrap();
        let r10 = recall_at_k(sim.view(), &truth, 10).unwrap();
        assert!(r1 <= r5 && r5 <= r10);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let sim = Array2::<f64>::eye(4);
        let truth = vec![0, 1, 2, 3];
        assert!(recall_at_k(sim.view(), &truth, 5).is_err());
        assert!(recall_at_k(sim.view(), &truth, 0).is_err());
    }

    fn clean_test_set(n: usize, seed: u64) -> PairDataset {
        generate(&GeneratorConfig {
            n_pairs: n,
            latent_dim: 24,
            d_img: 24,
            d_txt: 24,
            clean_noise_std: 0.1,
            noise_ratio: 0.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn aligned_test_set_reaches_six_hundred() {
        let ds = clean_test_set(40, 3);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let report = full_report(&params, &ds).unwrap();
        assert_abs_diff_eq!(report.rsum, 600.0, epsilon = 1e-9);
        assert_eq!(report.n_queries, 40);
    }

    #[test]
    fn rsum_adds_up_and_report_serializes_with_fixed_keys() {
        let ds = clean_test_set(25, 9);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let report = full_report(&params, &ds).unwrap();
        let total = report.i2t_r1
            + report.i2t_r5
            + report.i2t_r10
            + report.t2i_r1
            + report.t2i_r5
            + report.t2i_r10;
        assert_abs_diff_eq!(report.rsum, total, epsilon = 1e-9);
        let json = report.to_json();
        for key in [
            "i2t_r1",
            "i2t_r5",
            "i2t_r10",
            "t2i_r1",
            "t2i_r5",
            "t2i_r10",
            "rsum",
            "n_queries",
        ] {
            assert!(
                json.contains(&format!("\"{key}\"")),
                "missing {key} in {json}"
            );
        }
    }

    #[test]
    fn shuffled_test_set_scores_near_random_baseline() {
        // break correspondence by rotating the text rows; oracle = mean recall
        // over random ground-truth permutations of the same similarity matrix
        let mut ds = clean_test_set(100, 11);
        let rotated: Vec<usize> = (0..100).map(|i| (i + 37) % 100).collect();
        let mut txt = ds.text_features.clone();
        for (i, &src) in rotated.iter().enumerate() {
            txt.row_mut(i).assign(&ds.text_features.row(src));
        }
        ds.text_features = txt;
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sim =
            similarity_matrix(&params, ds.image_features.view(), ds.text_features.view()).unwrap();

        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut expected = [0.0f64; 3];
        let trials = 200;
        for _ in 0..trials {
            let truth: Vec<usize> = (0..100).map(|_| rng.random_range(0..100)).collect();
            for (slot, k) in [1, 5, 10].iter().enumerate() {
                expected[slot] += recall_at_k(sim.view(), &truth, *k).unwrap();
            }
        }
        for v in &mut expected {
            *v /= trials as f64;
        }

        let truth: Vec<usize> = (0..100).collect();
        for (slot, k) in [1usize, 5, 10].iter().enumerate() {
            let ours = recall_at_k(sim.view(), &truth, *k).unwrap();
            assert!(
                (ours - expected[slot]).abs() <= 3.0,
                "k={k}: got {ours}, random baseline {}",
                expected[slot]
            );
        }
    }

    #[test]
    fn symmetric_similarity_gives_symmetric_directions() {
        let ds = clean_test_set(30, 13);
        let params = EncoderParams::identity_for(&ds).unwrap();
        // same rows on both sides makes the matrix symmetric
        let sym = similarity_matrix(&params, ds.image_features.view(), ds.image_features.view());
        // identity projections treat image rows as both modalities only when
        // widths agree; here d_img == d_txt so encode_text accepts them
        let sym = sym.unwrap();
        let truth: Vec<usize> = (0..30).collect();
        for k in [1, 5, 10] {
            let fwd = recall_at_k(sym.view(), &truth, k).unwrap();
            let bwd = recall_at_k(sym.t(), &truth, k).unwrap();
            assert_abs_diff_eq!(fwd, bwd, epsilon = 1e-12);
        }
    }

    #[test]
    fn noisy_test_set_is_rejected() {
        let ds = generate(&GeneratorConfig {
            n_pairs: 30,
            latent_dim: 8,
            d_img: 12,
            d_txt: 12,
            clean_noise_std: 0.2,
            noise_ratio: 0.4,
            seed: 2,
        })
        .unwrap();
        let params = EncoderParams::identity_for(&ds).unwrap();
        assert!(full_report(&params, &ds).is_err());
        // but its clean subset is accepted
        let clean = clean_subset(&ds).unwrap();
        assert!(full_report(&params, &clean).is_ok());
    }

    #[test]
    fn stability_of_constant_map_is_zero() {
        let r = stability(&[(0.2, 544.0), (0.4, 544.0), (0.6, 544.0)]).unwrap();
        assert_eq!(r.variance, 0.0);
    }

    #[test]
    fn two_point_population_formula() {
        let (a, b) = (550.0, 540.0);
        let r = stability(&[(0.2, a), (0.4, b)]).unwrap();
        assert_abs_diff_eq!(r.variance, ((a - b) / 2.0).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn reported_rsums_match_documented_variance() {
        let r = stability(&[(0.2, 549.1), (0.4, 547.5), (0.6, 544.0)]).unwrap();
        assert!((r.variance - 4.51).abs() <= 0.1, "variance {}", r.variance);
    }

    #[test]
    fn stability_needs_two_entries() {
        assert!(stability(&[(0.2, 500.0)]).is_err());
    }

    #[test]
    fn discard_purity_counts() {
        let flags = vec![true, true, false, false, true];
        assert_eq!(discard_purity(&[], &flags), (0.0, 0.0));
        assert_eq!(discard_purity(&[2, 3], &flags), (0.0, 1.0));
        let (c, n) = discard_purity(&[0, 2], &flags);
        assert_abs_diff_eq!(c, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n, 0.5, epsilon = 1e-12);
    }
}
