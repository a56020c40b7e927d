//! Dual linear encoders into a shared unit-sphere space, with scaled cosine
//! similarity. The logit scale is fixed (default 100) so raw cosine maps to
//! [-100, 100] and the drop thresholds are expressed in those units.

use crate::dataset::PairDataset;
use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView2, Axis};
use std::fmt::Write as _;
use std::path::Path;

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

/// Projection maps for both modalities plus the fixed similarity scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// d x d_img
    pub w_img: Array2<f64>,
    /// d x d_txt
    pub w_txt: Array2<f64>,
    pub logit_scale: f64,
}

impl EncoderParams {
    pub fn new(w_img: Array2<f64>, w_txt: Array2<f64>, logit_scale: f64) -> Result<Self> {
        let p = EncoderParams {
            w_img,
            w_txt,
            logit_scale,
        };
        p.validate()?;
        Ok(p)
    }

    /// Rectangular-identity projections: row i picks input coordinate i.
    /// This is the "pretrained-like" starting point for synthetic data whose
    /// modalities already agree on their leading coordinates.
    pub fn identity(d: usize, d_img: usize, d_txt: usize, logit_scale: f64) -> Result<Self> {
        let mut w_img = Array2::<f64>::zeros((d, d_img));
        let mut w_txt = Array2::<f64>::zeros((d, d_txt));
        for i in 0..d.min(d_img) {
            w_img[[i, i]] = 1.0;
        }
        for i in 0..d.min(d_txt) {
            w_txt[[i, i]] = 1.0;
        }
        EncoderParams::new(w_img, w_txt, logit_scale)
    }

    /// Identity projections sized to a dataset, shared dim = min(d_img, d_txt).
    pub fn identity_for(dataset: &PairDataset) -> Result<Self> {
        let d = dataset.d_img().min(dataset.d_txt());
        EncoderParams::identity(d, dataset.d_img(), dataset.d_txt(), DEFAULT_LOGIT_SCALE)
    }

    pub fn shared_dim(&self) -> usize {
        self.w_img.nrows()
    }

    pub fn d_img(&self) -> usize {
        self.w_img.ncols()
    }

    pub fn d_txt(&self) -> usize {
        self.w_txt.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shared_dim() < 2 {
            return Err(Error::Config(format!(
                "shared dimension must be at least 2, got {}",
                self.shared_dim()
            )));
        }
        if self.w_txt.nrows() != self.shared_dim() {
            return Err(Error::Shape(format!(
                "w_img rows {} != w_txt rows {}",
                self.shared_dim(),
                self.w_txt.nrows()
            )));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::Config(format!(
                "logit_scale must be positive and finite, got {}",
                self.logit_scale
            )));
        }
        if self
            .w_img
            .iter()
            .chain(self.w_txt.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                stage: "encoder parameters".into(),
            });
        }
        Ok(())
    }

    /// Checkpoint format: header "d d_img d_txt logit_scale", then w_img rows,
    /// then w_txt rows; decimal serialization round-trips f64 exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.shared_dim(),
            self.d_img(),
            self.d_txt(),
            self.logit_scale
        );
        for m in [&self.w_img, &self.w_txt] {
            for row in m.rows() {
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
        }
        std::fs::write(path, out).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty checkpoint".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [d, d_img, d_txt, scale] = fields[..] else {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "header: expected \"d d_img d_txt logit_scale\", found {} fields",
                    fields.len()
                ),
            });
        };
        let parse_dim = |t: &str| -> Result<usize> {
            t.parse().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("header: invalid integer {t:?}"),
            })
        };
        let (d, d_img, d_txt) = (parse_dim(d)?, parse_dim(d_img)?, parse_dim(d_txt)?);
        let logit_scale: f64 = scale.parse().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("header: invalid logit_scale {scale:?}"),
        })?;

        let mut read_matrix =
            |rows: usize, cols: usize, label: &str, base: usize| -> Result<Array2<f64>> {
                let mut m = Array2::<f64>::zeros((rows, cols));
                for i in 0..rows {
                    let (idx, line) = lines.next().ok_or(Error::Parse {
                        line: base + i + 1,
                        msg: format!("{label} row {}: missing", i + 1),
                    })?;
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| {
                            t.parse().map_err(|_| Error::Parse {
                                line: idx + 1,
                                msg: format!("{label} row {}: invalid number {t:?}", i + 1),
                            })
                        })
                        .collect::<Result<_>>()?;
                    if vals.len() != cols {
                        return Err(Error::Parse {
                            line: idx + 1,
                            msg: format!(
                                "{label} row {}: expected {cols} values, found {}",
                                i + 1,
                                vals.len()
                            ),
                        });
                    }
                    for (c, v) in vals.into_iter().enumerate() {
                        m[[i, c]] = v;
                    }
                }
                Ok(m)
            };
        let w_img = read_matrix(d, d_img, "w_img", 1)?;
        let w_txt = read_matrix(d, d_txt, "w_txt", 1 + d)?;
        EncoderParams::new(w_img, w_txt, logit_scale)
    }
}

/// Per-pair scaled diagonal similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    pub diag: Vec<f64>,
    pub computed_at_epoch: usize,
}

fn project_and_normalize(
    w: &Array2<f64>,
    rows: ArrayView2<f64>,
    what: &str,
) -> Result<Array2<f64>> {
    if rows.ncols() != w.ncols() {
        return Err(Error::Shape(format!(
            "{what}: input width {} != projection width {}",
            rows.ncols(),
            w.ncols()
        )));
    }
    let mut projected = rows.dot(&w.t());
    for (i, mut row) in projected.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                stage: format!("{what} row {i}"),
            });
        }
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        row /= norm;
    }
    Ok(projected)
}

/// Project image rows (B x d_img) and L2-normalize each output row.
pub fn encode_image(params: &EncoderParams, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
    project_and_normalize(&params.w_img, rows, "encode_image")
}

/// Project text rows (B x d_txt) and L2-normalize each output row.
pub fn encode_text(params: &EncoderParams, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
    project_and_normalize(&params.w_txt, rows, "encode_text")
}

/// Scaled cosine similarity matrix: entry (i, j) pairs image i with text j.
pub fn similarity_matrix(
    params: &EncoderParams,
    imgs: ArrayView2<f64>,
    txts: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let ei = encode_image(params, imgs)?;
    let et = encode_text(params, txts)?;
    let mut m = ei.dot(&et.t());
    let scale = params.logit_scale;
    m.mapv_inplace(|v| (v * scale).clamp(-scale, scale));
    Ok(m)
}

pub(crate) const DIAGONAL_BATCH: usize = 512;

/// Diagonal similarities over a whole dataset, computed in row blocks.
pub fn dataset_diagonal(params: &EncoderParams, dataset: &PairDataset) -> Result<SimilarityTable> {
    diagonal_with_batch(params, dataset, DIAGONAL_BATCH)
}

/// Block size is observable only through runtime, never through values.
pub fn diagonal_with_batch(
    params: &EncoderParams,
    dataset: &PairDataset,
    batch: usize,
) -> Result<SimilarityTable> {
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let batch = batch.max(1);
    let n = dataset.len();
    let scale = params.logit_scale;
    let mut diag = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let ei = encode_image(
            params,
            dataset.image_features.slice(ndarray::s![start..end, ..]),
        )?;
        let et = encode_text(
            params,
            dataset.text_features.slice(ndarray::s![start..end, ..]),
        )?;
        for (a, b) in ei.rows().into_iter().zip(et.rows()) {
            diag.push((a.dot(&b) * scale).clamp(-scale, scale));
        }
        start = end;
    }
    Ok(SimilarityTable {
        diag,
        computed_at_epoch: 0,
    })
}
