//! Memory bank of clean evaluation entries and the loss-delta significance
//! weights measured against it.
//!
//! The bank is built once, from the initial parameters: each pair is assigned
//! its nearest clean pair in image space and in text space. Evaluation losses
//! use the de-duplicated set of the current batch's entries as the candidate
//! pool, so the cross-entropy stays well-defined without a global negative
//! set.

use crate::dataset::PairDataset;
use crate::encoder::{encode_image, encode_text, EncoderParams, SimilarityTable};
use crate::error::{Error, Result};
use crate::objective::{cross_entropy_row, Direction};
use std::collections::HashMap;

/// Clean evaluation entries for one pair: the clean pair whose image is
/// nearest to this pair's image, and the clean pair whose text is nearest to
/// this pair's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankEntry {
    pub img_entry: usize,
    pub txt_entry: usize,
}

/// Per-pair clean evaluation entries drawn from the high-threshold set.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub entries: Vec<BankEntry>,
    pub beta: f64,
    pub dc_indices: Vec<usize>,
}

/// Argmax over columns with ties resolved toward the smaller gallery index.
fn argmax_tie_smallest(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = j;
        }
    }
    best
}

/// Build the bank: threshold the diagonal similarities at `beta` (strict),
/// then assign every pair its nearest clean neighbours per modality under
/// the given parameters.
pub fn build_memory_bank(
    params: &EncoderParams,
    dataset: &PairDataset,
    sims: &SimilarityTable,
    beta: f64,
) -> Result<MemoryBank> {
    if sims.diag.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "similarity table has {} entries for {} pairs",
            sims.diag.len(),
            dataset.len()
        )));
    }
    let dc_indices: Vec<usize> = sims
        .diag
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > beta)
        .map(|(i, _)| i)
        .collect();
    if dc_indices.is_empty() {
        return Err(Error::EmptySelection {
            what: "clean dataset".into(),
            threshold: beta,
            hint: "no pair exceeds the bank threshold; lower beta to match the similarity scale"
                .into(),
        });
    }

    let enc_img = encode_image(params, dataset.image_features.view())?;
    let enc_txt = encode_text(params, dataset.text_features.view())?;
    let mut clean_img = ndarray::Array2::<f64>::zeros((dc_indices.len(), enc_img.ncols()));
    let mut clean_txt = ndarray::Array2::<f64>::zeros((dc_indices.len(), enc_txt.ncols()));
    for (slot, &idx) in dc_indices.iter().enumerate() {
        clean_img.row_mut(slot).assign(&enc_img.row(idx));
        clean_txt.row_mut(slot).assign(&enc_txt.row(idx));
    }

    // cosine similarity of every pair against the clean gallery, per modality;
    // dc_indices is sorted, so smallest-slot argmax is smallest-index argmax
    let sim_img = enc_img.dot(&clean_img.t());
    let sim_txt = enc_txt.dot(&clean_txt.t());
    let entries = (0..dataset.len())
        .map(|i| BankEntry {
            img_entry: dc_indices[argmax_tie_smallest(sim_img.row(i))],
            txt_entry: dc_indices[argmax_tie_smallest(sim_txt.row(i))],
        })
        .collect();

    Ok(MemoryBank {
        entries,
        beta,
        dc_indices,
    })
}

/// Evaluation losses for a batch: per pair, the summed cross-entropies of its
/// two bank entries over the batch's de-duplicated entry pool, in both
/// directions.
pub fn entry_losses(
    params: &EncoderParams,
    dataset: &PairDataset,
    bank: &MemoryBank,
    batch_indices: &[usize],
) -> Result<Vec<(f64, f64)>> {
    if batch_indices.is_empty() {
        return Err(Error::Config("entry_losses: empty batch".into()));
    }
    if bank.entries.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "bank has {} entries for {} pairs",
            bank.entries.len(),
            dataset.len()
        )));
    }

    // sorted de-duplicated pool keeps the result independent of batch order
    let mut pool: Vec<usize> = batch_indices
        .iter()
        .flat_map(|&i| {
            let e = bank.entries[i];
            [e.img_entry, e.txt_entry]
        })
        .collect();
    pool.sort_unstable();
    pool.dedup();
    let slot: HashMap<usize, usize> = pool.iter().enumerate().map(|(s, &p)| (p, s)).collect();

    let mut imgs = ndarray::Array2::<f64>::zeros((pool.len(), dataset.d_img()));
    let mut txts = ndarray::Array2::<f64>::zeros((pool.len(), dataset.d_txt()));
    for (s, &p) in pool.iter().enumerate() {
        imgs.row_mut(s).assign(&dataset.image_features.row(p));
        txts.row_mut(s).assign(&dataset.text_features.row(p));
    }
    let logits = crate::encoder::similarity_matrix(params, imgs.view(), txts.view())?;
    let ce_i2t = cross_entropy_row(logits.view(), Direction::ImageToText)?;
    let ce_t2i = cross_entropy_row(logits.view(), Direction::TextToImage)?;

    Ok(batch_indices
        .iter()
        .map(|&i| {
            let e = bank.entries[i];
            let a = slot[&e.img_entry];
            let b = slot[&e.txt_entry];
            (ce_i2t[a] + ce_i2t[b], ce_t2i[a] + ce_t2i[b])
        })
        .collect())
}

/// Loss ratio floor: a vanishing after-loss signals strong improvement, not
/// a division error.
pub const LOSS_RATIO_FLOOR: f64 = 1e-8;

/// Before/after evaluation losses and the resulting significance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRecord {
    pub loss_before: (f64, f64),
    pub loss_after: (f64, f64),
    pub c: f64,
    pub w_sig: f64,
}

/// Map before/after evaluation losses to significance weights: the mean of
/// the two directional loss ratios, squashed by tanh below 1 and clamped to
/// 1 otherwise.
pub fn significance_weights(
    loss_before: &[(f64, f64)],
    loss_after: &[(f64, f64)],
) -> Result<Vec<SignificanceRecord>> {
    if loss_before.len() != loss_after.len() {
        return Err(Error::Shape(format!(
            "significance_weights: {} before vs {} after",
            loss_before.len(),
            loss_after.len()
        )));
    }
    loss_before
        .iter()
        .zip(loss_after)
        .enumerate()
        .map(|(i, (&before, &after))| {
            for v in [before.0, before.1, after.0, after.1] {
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::Config(format!(
                        "significance_weights: negative or non-finite loss at index {i}"
                    )));
                }
            }
            let c = 0.5
                * (before.0 / after.0.max(LOSS_RATIO_FLOOR)
                    + before.1 / after.1.max(LOSS_RATIO_FLOOR));
            let w_sig = if c < 1.0 { c.tanh() } else { 1.0 };
            Ok(SignificanceRecord {
                loss_before: before,
                loss_after: after,
                c,
                w_sig,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GeneratorConfig};
    use crate::encoder::dataset_diagonal;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn test_dataset(noise: f64, seed: u64) -> PairDataset {
        generate(&GeneratorConfig {
            n_pairs: 60,
            latent_dim: 16,
            d_img: 20,
            d_txt: 18,
            clean_noise_std: 0.2,
            noise_ratio: noise,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn clean_pair_selects_itself() {
        let ds = test_dataset(0.3, 9);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let bank = build_memory_bank(&params, &ds, &sims, 30.0).unwrap();
        for &i in &bank.dc_indices {
            assert_eq!(bank.entries[i].img_entry, i, "clean pair {i} image entry");
            assert_eq!(bank.entries[i].txt_entry, i, "clean pair {i} text entry");
        }
    }

    #[test]
    fn entries_match_brute_force_nearest_neighbour() {
        let ds = test_dataset(0.4, 12);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let bank = build_memory_bank(&params, &ds, &sims, 30.0).unwrap();
        let ei = encode_image(&params, ds.image_features.view()).unwrap();
        let et = encode_text(&params, ds.text_features.view()).unwrap();
        for i in 0..ds.len() {
            let mut best_img = (f64::NEG_INFINITY, usize::MAX);
            let mut best_txt = (f64::NEG_INFINITY, usize::MAX);
            for &j in &bank.dc_indices {
                let si = ei.row(i).dot(&ei.row(j));
                if si > best_img.0 {
                    best_img = (si, j);
                }
                let st = et.row(i).dot(&et.row(j));
                if st > best_txt.0 {
                    best_txt = (st, j);
                }
            }
            assert_eq!(bank.entries[i].img_entry, best_img.1, "pair {i} img");
            assert_eq!(bank.entries[i].txt_entry, best_txt.1, "pair {i} txt");
        }
    }

    #[test]
    fn equal_similarity_breaks_tie_to_smaller_index() {
        // duplicate feature rows force exact ties
        let mut ds = test_dataset(0.0, 4);
        let row0 = ds.image_features.row(0).to_owned();
        let trow0 = ds.text_features.row(0).to_owned();
        ds.image_features.row_mut(1).assign(&row0);
        ds.text_features.row_mut(1).assign(&trow0);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let bank = build_memory_bank(&params, &ds, &sims, 30.0).unwrap();
        // pairs 0 and 1 are identical; both must resolve to clean index 0
        assert_eq!(bank.entries[1].img_entry, 0);
        assert_eq!(bank.entries[1].txt_entry, 0);
    }

    #[test]
    fn empty_clean_set_errors_with_beta_hint() {
        let ds = test_dataset(0.0, 2);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let err = build_memory_bank(&params, &ds, &sims, 1000.0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("beta"), "{err}");
    }

    #[test]
    fn dc_subset_of_kept_when_beta_above_alpha() {
        let ds = test_dataset(0.5, 17);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let kept = crate::partition::self_drop(&sims, 20.0).unwrap();
        let bank = build_memory_bank(&params, &ds, &sims, 30.0).unwrap();
        for idx in &bank.dc_indices {
            assert!(kept.kept_indices.contains(idx));
        }
    }

    #[test]
    fn single_entry_pool_gives_zero_loss() {
        let ds = test_dataset(0.0, 21);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let bank = build_memory_bank(&params, &ds, &sims, 30.0).unwrap();
        // a clean pair selects itself in both modalities: pool of size 1
        let i = bank.dc_indices[0];
        let losses = entry_losses(&params, &ds, &bank, &[i]).unwrap();
        assert_eq!(losses[0], (0.0, 0.0));
    }

    #[test]
    fn well_separated_entries_saturate_to_zero() {
        let ds = test_dataset(0.0, 30);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let bank = build_memory_bank(&params, &ds, &sims, 30.0).unwrap();
        let batch: Vec<usize> = (0..10).collect();
        for (i2t, t2i) in entry_losses(&params, &ds, &bank, &batch).unwrap() {
            assert!(i2t < 1e-6, "i2t {i2t}");
            assert!(t2i < 1e-6, "t2i {t2i}");
        }
    }

    #[test]
    fn losses_do_not_depend_on_batch_order() {
        let ds = test_dataset(0.4, 33);
        let params = EncoderParams::identity_for(&ds).unwrap();
        let sims = dataset_diagonal(&params, &ds).unwrap();
        let bank = build_memory_bank(&params, &ds, &sims, 30.0).unwrap();
        let batch: Vec<usize> = vec![3, 7, 11, 20, 41];
        let mut reversed = batch.clone();
        reversed.reverse();
        let a = entry_losses(&params, &ds, &bank, &batch).unwrap();
        let b = entry_losses(&params, &ds, &bank, &reversed).unwrap();
        for (i, &idx) in batch.iter().enumerate() {
            let j = reversed.iter().position(|&v| v == idx).unwrap();
            assert_abs_diff_eq!(a[i].0, b[j].0, epsilon = 1e-12);
            assert_abs_diff_eq!(a[i].1, b[j].1, epsilon = 1e-12);
        }
    }

    #[test]
    fn improvement_branch_yields_one() {
        let recs = significance_weights(&[(2.0, 2.0)], &[(1.0, 1.0)]).unwrap();
        assert_abs_diff_eq!(recs[0].c, 2.0, epsilon = 1e-12);
        assert_eq!(recs[0].w_sig, 1.0);
    }

    #[test]
    fn worsening_branch_squashes_below_tanh_one() {
        let recs = significance_weights(&[(1.0, 1.0)], &[(2.0, 2.0)]).unwrap();
        assert_abs_diff_eq!(recs[0].c, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(recs[0].w_sig, 0.462117, epsilon = 1e-6);
    }

    #[test]
    fn unchanged_loss_hits_otherwise_branch() {
        let recs = significance_weights(&[(1.5, 0.8)], &[(1.5, 0.8)]).unwrap();
        assert_abs_diff_eq!(recs[0].c, 1.0, epsilon = 1e-12);
        assert_eq!(recs[0].w_sig, 1.0);
    }

    #[test]
    fn negative_loss_rejected() {
        assert!(significance_weights(&[(-0.1, 1.0)], &[(1.0, 1.0)]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn weight_range_and_monotonicity(
            b1 in 0.01f64..10.0, b2 in 0.01f64..10.0,
            a1 in 0.01f64..10.0, a2 in 0.01f64..10.0,
            bump in 0.0f64..5.0,
        ) {
            let w = significance_weights(&[(b1, b2)], &[(a1, a2)]).unwrap()[0].w_sig;
            prop_assert!(w > 0.0 && w <= 1.0);
            let c = significance_weights(&[(b1, b2)], &[(a1, a2)]).unwrap()[0].c;
            if c < 1.0 {
                prop_assert!(w < (1.0f64).tanh() + 1e-12);
            }
            // increasing the after-loss never increases the weight
            let w2 = significance_weights(&[(b1, b2)], &[(a1 + bump, a2 + bump)]).unwrap()[0].w_sig;
            prop_assert!(w2 <= w + 1e-12);
        }
    }
}
