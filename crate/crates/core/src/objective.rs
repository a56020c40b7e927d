//! Symmetric contrastive objective, exact parameter gradients, and the
//! decoupled-weight-decay adaptive optimizer.
//!
//! Logits arrive pre-scaled (the temperature is folded into the encoder's
//! logit scale), so cross-entropy here is a plain log-softmax with
//! max-subtraction. Gradients are closed-form through projection,
//! L2 normalization and the scaled similarity matrix; the per-pair weights
//! are treated as constants.

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};

/// Query direction for a row of the similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

/// Per-pair contrastive losses for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// Unweighted per-pair image-to-text cross-entropy.
    pub per_pair_i2t: Vec<f64>,
    /// Unweighted per-pair text-to-image cross-entropy.
    pub per_pair_t2i: Vec<f64>,
    /// Weighted sum over pairs of (i2t + t2i).
    pub total: f64,
}

fn check_square_finite(logits: ArrayView2<f64>) -> Result<usize> {
    let b = logits.nrows();
    if logits.ncols() != b {
        return Err(Error::Shape(format!(
            "logits must be square, got {}x{}",
            b,
            logits.ncols()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "logits".into(),
        });
    }
    Ok(b)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Negative log-softmax of the diagonal entry, per row (i2t) or column (t2i).
pub fn cross_entropy_row(logits: ArrayView2<f64>, direction: Direction) -> Result<Vec<f64>> {
    let b = check_square_finite(logits)?;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let lse = match direction {
            Direction::ImageToText => log_sum_exp(logits.row(i).iter().copied()),
            Direction::TextToImage => log_sum_exp(logits.column(i).iter().copied()),
        };
        // >= 0 up to rounding; clamp so callers can rely on nonnegativity
        out.push((lse - logits[[i, i]]).max(0.0));
    }
    Ok(out)
}

/// Symmetric contrastive loss with unit weights.
pub fn info_nce(logits: ArrayView2<f64>) -> Result<BatchLoss> {
    let b = logits.nrows();
    weighted_loss(logits, &vec![1.0; b], &vec![1.0; b])
}

fn check_weights(w: &[f64], b: usize, name: &str) -> Result<()> {
    if w.len() != b {
        return Err(Error::Shape(format!(
            "{name} length {} != batch size {b}",
            w.len()
        )));
    }
    for (i, &v) in w.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::WeightRange { index: i, value: v });
        }
    }
    Ok(())
}

/// Dual-weighted contrastive loss: total = sum_i w_con_i * w_sig_i * (i2t_i + t2i_i).
pub fn weighted_loss(logits: ArrayView2<f64>, w_con: &[f64], w_sig: &[f64]) -> Result<BatchLoss> {
    let b = check_square_finite(logits)?;
    check_weights(w_con, b, "w_con")?;
    check_weights(w_sig, b, "w_sig")?;
    let per_pair_i2t = cross_entropy_row(logits, Direction::ImageToText)?;
    let per_pair_t2i = cross_entropy_row(logits, Direction::TextToImage)?;
    let total = (0..b)
        .map(|i| w_con[i] * w_sig[i] * (per_pair_i2t[i] + per_pair_t2i[i]))
        .sum();
    Ok(BatchLoss {
        per_pair_i2t,
        per_pair_t2i,
        total,
    })
}

/// Gradients with the same shapes as the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub w_img: Array2<f64>,
    pub w_txt: Array2<f64>,
}

impl ParamGradients {
    pub fn is_finite(&self) -> bool {
        self.w_img
            .iter()
            .chain(self.w_txt.iter())
            .all(|v| v.is_finite())
    }
}

fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Dual-weighted contrastive loss and its exact gradients with respect to
/// both projection matrices. Weights receive no gradient.
pub fn loss_and_gradients(
    params: &EncoderParams,
    img_rows: ArrayView2<f64>,
    txt_rows: ArrayView2<f64>,
    w_con: &[f64],
    w_sig: &[f64],
) -> Result<(BatchLoss, ParamGradients)> {
    let b = img_rows.nrows();
    if txt_rows.nrows() != b {
        return Err(Error::Shape(format!(
            "batch sizes differ: {} images vs {} texts",
            b,
            txt_rows.nrows()
        )));
    }
    check_weights(w_con, b, "w_con")?;
    check_weights(w_sig, b, "w_sig")?;

    // forward, keeping raw projections and norms for the backward pass
    let raw_u = img_rows.dot(&params.w_img.t());
    let raw_v = txt_rows.dot(&params.w_txt.t());
    if raw_u.iter().chain(raw_v.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "projection".into(),
        });
    }
    let mut norm_u = Array1::<f64>::zeros(b);
    let mut norm_v = Array1::<f64>::zeros(b);
    let mut eu = raw_u.clone();
    let mut ev = raw_v.clone();
    for i in 0..b {
        let nu = eu.row(i).dot(&eu.row(i)).sqrt();
        if nu == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        norm_u[i] = nu;
        eu.row_mut(i).mapv_inplace(|v| v / nu);
        let nv = ev.row(i).dot(&ev.row(i)).sqrt();
        if nv == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        norm_v[i] = nv;
        ev.row_mut(i).mapv_inplace(|v| v / nv);
    }

    let scale = params.logit_scale;
    let logits = eu.dot(&ev.t()) * scale;
    let loss = weighted_loss(logits.view(), w_con, w_sig)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite {
            stage: "loss".into(),
        });
    }

    // dL/dlogits: row softmax serves i2t, column softmax serves t2i
    let omega: Vec<f64> = (0..b).map(|i| w_con[i] * w_sig[i]).collect();
    let p_row = softmax_rows(&logits);
    let q_col = softmax_rows(&logits.t().to_owned());
    let mut g = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            g[[i, j]] = omega[i] * (p_row[[i, j]] - delta) + omega[j] * (q_col[[j, i]] - delta);
        }
    }

    // back through the scaled similarity
    let mut grad_eu = g.dot(&ev);
    let mut grad_ev = g.t().dot(&eu);
    grad_eu *= scale;
    grad_ev *= scale;

    // back through L2 normalization: g_raw = (g_hat - (g_hat . e) e) / norm
    for i in 0..b {
        let du = grad_eu.row(i).dot(&eu.row(i));
        let nu = norm_u[i];
        for k in 0..grad_eu.ncols() {
            grad_eu[[i, k]] = (grad_eu[[i, k]] - du * eu[[i, k]]) / nu;
        }
        let dv = grad_ev.row(i).dot(&ev.row(i));
        let nv = norm_v[i];
        for k in 0..grad_ev.ncols() {
            grad_ev[[i, k]] = (grad_ev[[i, k]] - dv * ev[[i, k]]) / nv;
        }
    }

    // back through the linear projections
    let grads = ParamGradients {
        w_img: grad_eu.t().dot(&img_rows),
        w_txt: grad_ev.t().dot(&txt_rows),
    };
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            stage: "gradient".into(),
        });
    }
    Ok((loss, grads))
}

/// Adaptive-moment optimizer state with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m_img: Array2<f64>,
    m_txt: Array2<f64>,
    v_img: Array2<f64>,
    v_txt: Array2<f64>,
}

pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.2;

impl OptimizerState {
    pub fn new(params: &EncoderParams, learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerState {
            step_count: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m_img: Array2::zeros(params.w_img.raw_dim()),
            m_txt: Array2::zeros(params.w_txt.raw_dim()),
            v_img: Array2::zeros(params.w_img.raw_dim()),
            v_txt: Array2::zeros(params.w_txt.raw_dim()),
        }
    }
}

fn adamw_tensor(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    state: &OptimizerState,
    bias1: f64,
    bias2: f64,
) {
    let (b1, b2) = (state.beta1, state.beta2);
    let decay = 1.0 - state.learning_rate * state.weight_decay;
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p = *p * decay - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        });
}

/// One decoupled-decay adaptive step. On a non-finite gradient the state and
/// parameters are left untouched.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut EncoderParams,
    grads: &ParamGradients,
) -> Result<()> {
    if grads.w_img.raw_dim() != params.w_img.raw_dim()
        || grads.w_txt.raw_dim() != params.w_txt.raw_dim()
    {
        return Err(Error::Shape(
            "gradient shapes do not match parameters".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            stage: "optimizer gradient".into(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let snapshot = state.clone();
    adamw_tensor(
        &mut params.w_img,
        &grads.w_img,
        &mut state.m_img,
        &mut state.v_img,
        &snapshot,
        bias1,
        bias2,
    );
    adamw_tensor(
        &mut params.w_txt,
        &grads.w_txt,
        &mut state.m_txt,
        &mut state.v_txt,
        &snapshot,
        bias1,
        bias2,
    );
    Ok(())
}
