//! Synthetic bimodal pair generation and embedding-file ingestion.
//!
//! The generator draws a shared unit latent per pair and projects it into
//! both modalities through a common random orthonormal-column map, so
//! identity-initialized encoders already separate matched from mismatched
//! pairs ("zero-shot" alignment). Mismatch is injected by derangement-
//! shuffling a subset of text rows, which guarantees every flagged pair is
//! genuinely mismatched.

use crate::error::{Error, Result};
use crate::seed::stream_rng;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::Write as _;
use std::path::Path;

/// Parameters for [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub d_img: usize,
    pub d_txt: usize,
    /// Expected norm of the per-modality perturbation, relative to the unit
    /// latent norm. Must stay below 1 so matched pairs remain separable.
    pub clean_noise_std: f64,
    pub noise_ratio: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_pairs: 2000,
            latent_dim: 128,
            d_img: 128,
            d_txt: 128,
            clean_noise_std: 0.3,
            noise_ratio: 0.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::Config(format!(
                "n_pairs must be at least 2, got {}",
                self.n_pairs
            )));
        }
        if self.latent_dim == 0 || self.d_img == 0 || self.d_txt == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.latent_dim > self.d_img.min(self.d_txt) {
            return Err(Error::Config(format!(
                "latent_dim {} exceeds min(d_img, d_txt) = {}",
                self.latent_dim,
                self.d_img.min(self.d_txt)
            )));
        }
        if !(self.clean_noise_std >= 0.0 && self.clean_noise_std < 1.0) {
            return Err(Error::Config(format!(
                "clean_noise_std must lie in [0, 1), got {}",
                self.clean_noise_std
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            return Err(Error::Config(format!(
                "noise_ratio must lie in [0, 1], got {}",
                self.noise_ratio
            )));
        }
        Ok(())
    }
}

/// N image/text raw-feature pairs with ground-truth match flags.
///
/// The flags exist for diagnostics only; they are private and reachable
/// solely through [`PairDataset::diagnostic_flags`] so training code cannot
/// read them by accident.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub image_features: Array2<f64>,
    pub text_features: Array2<f64>,
    is_clean: Vec<bool>,
    pub noise_ratio: f64,
    pub seed: u64,
}

impl PairDataset {
    pub fn new(
        image_features: Array2<f64>,
        text_features: Array2<f64>,
        is_clean: Vec<bool>,
        noise_ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        let ds = PairDataset {
            image_features,
            text_features,
            is_clean,
            noise_ratio,
            seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.image_features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_img(&self) -> usize {
        self.image_features.ncols()
    }

    pub fn d_txt(&self) -> usize {
        self.text_features.ncols()
    }

    /// Ground-truth match flags. Diagnostics and evaluation only; the
    /// training path must never branch on these.
    pub fn diagnostic_flags(&self) -> &[bool] {
        &self.is_clean
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.image_features.nrows();
        if n < 2 {
            return Err(Error::Config(format!(
                "dataset needs at least 2 pairs, got {n}"
            )));
        }
        if self.text_features.nrows() != n {
            return Err(Error::Shape(format!(
                "image rows {} != text rows {}",
                n,
                self.text_features.nrows()
            )));
        }
        if self.is_clean.len() != n {
            return Err(Error::Shape(format!(
                "flag count {} != rows {}",
                self.is_clean.len(),
                n
            )));
        }
        for (name, m) in [
            ("image", &self.image_features),
            ("text", &self.text_features),
        ] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    stage: format!("{name} features"),
                });
            }
        }
        let realized = self.is_clean.iter().filter(|&&c| !c).count() as f64 / n as f64;
        if (realized - self.noise_ratio).abs() > 1.0 / n as f64 + 1e-12 {
            return Err(Error::Config(format!(
                "flagged noisy fraction {realized} is not within 1/N of declared noise_ratio {}",
                self.noise_ratio
            )));
        }
        Ok(())
    }
}

/// How many pairs get corrupted for a requested ratio. A single selected
/// pair cannot be deranged, so the count is bumped to 2, which stays within
/// the +-1/N tolerance on the realized ratio.
fn corruption_count(noise_ratio: f64, n: usize) -> usize {
    let k = (noise_ratio * n as f64 + 1e-9).floor() as usize;
    if k == 1 {
        2
    } else {
        k
    }
}

/// Random matrix with orthonormal columns (rows x cols, rows >= cols),
/// via modified Gram-Schmidt on a Gaussian draw.
fn orthonormal_columns<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((rows, cols));
    let normal = StandardNormal;
    for j in 0..cols {
        loop {
            let mut col: Array1<f64> = Array1::from_iter((0..rows).map(|_| normal.sample(rng)));
            for k in 0..j {
                let prev = m.column(k);
                let dot = col.dot(&prev);
                col.scaled_add(-dot, &prev);
            }
            let norm = col.dot(&col).sqrt();
            if norm > 1e-8 {
                m.column_mut(j).assign(&(col / norm));
                break;
            }
        }
    }
    m
}

/// Generate a synthetic paired dataset. Pure function of the config.
pub fn generate(config: &GeneratorConfig) -> Result<PairDataset> {
    config.validate()?;
    let n = config.n_pairs;
    let (d_img, d_txt, latent) = (config.d_img, config.d_txt, config.latent_dim);
    let min_d = d_img.min(d_txt);

    // One orthonormal map shared by both modalities (top-aligned, zero-padded
    // below min_d), so the two feature spaces agree on their leading block.
    let mut rng = stream_rng(config.seed, "generator");
    let shared = orthonormal_columns(min_d, latent, &mut rng);

    let normal = StandardNormal;
    let mut img = Array2::<f64>::zeros((n, d_img));
    let mut txt = Array2::<f64>::zeros((n, d_txt));
    // Per-coordinate noise scale chosen so the full perturbation vector has
    // expected norm clean_noise_std.
    let img_noise = config.clean_noise_std / (d_img as f64).sqrt();
    let txt_noise = config.clean_noise_std / (d_txt as f64).sqrt();

    for i in 0..n {
        let mut z: Array1<f64> = Array1::from_iter((0..latent).map(|_| normal.sample(&mut rng)));
        let norm = z.dot(&z).sqrt();
        if norm == 0.0 {
            // probability zero; retry with the next draws
            z[0] = 1.0;
        } else {
            z /= norm;
        }
        let projected = shared.dot(&z);
        for c in 0..d_img {
            let signal = if c < min_d { projected[c] } else { 0.0 };
            let eps: f64 = normal.sample(&mut rng);
            img[[i, c]] = signal + img_noise * eps;
        }
        for c in 0..d_txt {
            let signal = if c < min_d { projected[c] } else { 0.0 };
            let eps: f64 = normal.sample(&mut rng);
            txt[[i, c]] = signal + txt_noise * eps;
        }
    }

    let mut is_clean = vec![true; n];
    let k = corruption_count(config.noise_ratio, n);
    if k >= 2 {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let chosen: Vec<usize> = all[..k].to_vec();
        // derangement of the chosen positions by rejection sampling
        let mut perm: Vec<usize> = (0..k).collect();
        loop {
            perm.shuffle(&mut rng);
            if perm.iter().enumerate().all(|(i, &p)| p != i) {
                break;
            }
        }
        let originals: Vec<Array1<f64>> = chosen.iter().map(|&i| txt.row(i).to_owned()).collect();
        for (slot, &src) in perm.iter().enumerate() {
            txt.row_mut(chosen[slot]).assign(&originals[src]);
            is_clean[chosen[slot]] = false;
        }
    }

    PairDataset::new(img, txt, is_clean, config.noise_ratio, config.seed)
}

fn push_row(out: &mut String, row: ndarray::ArrayView1<f64>) {
    let mut first = true;
    for v in row {
        if !first {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
        first = false;
    }
    out.push('\n');
}

/// Write the embedding file format: header "N d_img d_txt", N image rows,
/// N text rows, N clean flags. Decimal serialization round-trips f64 exactly.
pub fn save_pairs(dataset: &PairDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {}",
        dataset.len(),
        dataset.d_img(),
        dataset.d_txt()
    );
    for row in dataset.image_features.rows() {
        push_row(&mut out, row);
    }
    for row in dataset.text_features.rows() {
        push_row(&mut out, row);
    }
    for &flag in &dataset.is_clean {
        out.push(if flag { '1' } else { '0' });
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}

fn parse_row(
    line: &str,
    line_no: usize,
    row_label: &str,
    row_no: usize,
    width: usize,
) -> Result<Vec<f64>> {
    let mut vals = Vec::with_capacity(width);
    for tok in line.split_whitespace() {
        let v: f64 = tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("{row_label} row {row_no}: invalid number {tok:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("{row_label} row {row_no}: non-finite value {tok:?}"),
            });
        }
        vals.push(v);
    }
    if vals.len() != width {
        return Err(Error::Parse {
            line: line_no,
            msg: format!(
                "{row_label} row {row_no}: expected {width} values, found {}",
                vals.len()
            ),
        });
    }
    Ok(vals)
}

/// Read the embedding file format. Clean flags default to all-true when the
/// optional flag block is absent.
pub fn load_pairs(path: &Path) -> Result<PairDataset> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut lines = content.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("header: invalid integer {t:?}"),
            })
        })
        .collect::<Result<_>>()?;
    let [n, d_img, d_txt] = dims[..] else {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "header: expected \"N d_img d_txt\", found {} fields",
                dims.len()
            ),
        });
    };

    let mut img = Array2::<f64>::zeros((n, d_img));
    let mut txt = Array2::<f64>::zeros((n, d_txt));
    for i in 0..n {
        let (idx, line) = lines.next().ok_or(Error::Parse {
            line: 1 + i + 1,
            msg: format!("image row {}: missing", i + 1),
        })?;
        let vals = parse_row(line, idx + 1, "image", i + 1, d_img)?;
        for (c, v) in vals.into_iter().enumerate() {
            img[[i, c]] = v;
        }
    }
    for i in 0..n {
        let (idx, line) = lines.next().ok_or(Error::Parse {
            line: 1 + n + i + 1,
            msg: format!("text row {}: missing", i + 1),
        })?;
        let vals = parse_row(line, idx + 1, "text", i + 1, d_txt)?;
        for (c, v) in vals.into_iter().enumerate() {
            txt[[i, c]] = v;
        }
    }

    let mut is_clean = vec![true; n];
    let mut flag_lines = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if flag_lines >= n {
            return Err(Error::Parse {
                line: idx + 1,
                msg: "unexpected content after flag block".into(),
            });
        }
        is_clean[flag_lines] = match line.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!(
                        "flag row {}: expected \"0\" or \"1\", found {other:?}",
                        flag_lines + 1
                    ),
                })
            }
        };
        flag_lines += 1;
    }
    if flag_lines != 0 && flag_lines != n {
        return Err(Error::Parse {
            line: 1 + 2 * n + flag_lines,
            msg: format!("flag block: expected {n} flags, found {flag_lines}"),
        });
    }

    let noisy = is_clean.iter().filter(|&&c| !c).count();
    PairDataset::new(img, txt, is_clean, noisy as f64 / n.max(1) as f64, 0)
}
