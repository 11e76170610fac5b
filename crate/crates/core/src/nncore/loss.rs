//! Reconstruction losses over one user's item vector, plus batched
//! value-and-gradient helpers used by the trainers. Batched losses are the
//! mean of per-user losses.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{dim_err, Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Focal loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Weight every item by `alpha` instead of `alpha` for positives and
    /// `1 - alpha` for negatives.
    pub alpha_symmetric: bool,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0, alpha_symmetric: false }
    }
}

impl FocalConfig {
    pub fn new(alpha: f64, gamma: f64, alpha_symmetric: bool) -> Result<Self> {
        let cfg = Self { alpha, gamma, alpha_symmetric };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Argument(format!("focal alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    #[inline]
    fn alpha_t(&self, positive: bool) -> f64 {
        if positive || self.alpha_symmetric {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }
}

/// `-alpha_t (1 - p_t)^gamma ln p_t` for one item.
#[inline]
pub fn focal_item(p: f64, positive: bool, cfg: &FocalConfig) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = if positive { p } else { 1.0 - p };
    -cfg.alpha_t(positive) * (1.0 - q).powf(cfg.gamma) * q.ln()
}

/// Derivative of [`focal_item`] with respect to `p`.
///
/// Outside the clamp interval the formula is evaluated at the clamped value
/// rather than returning zero, so saturated outputs still receive a signal.
#[inline]
pub fn focal_grad(p: f64, positive: bool, cfg: &FocalConfig) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = if positive { p } else { 1.0 - p };
    let one_minus = 1.0 - q;
    let focus = if cfg.gamma == 0.0 { 0.0 } else { cfg.gamma * one_minus.powf(cfg.gamma - 1.0) * q.ln() };
    let d_dq = cfg.alpha_t(positive) * (focus - one_minus.powf(cfg.gamma) / q);
    if positive {
        d_dq
    } else {
        -d_dq
    }
}

fn check_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(dim_err("loss target length", pred.len(), target.len()));
    }
    Ok(())
}

/// Mean squared error over items.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred, target)?;
    Ok(Loss::Mse.value_and_grad(ArrayView1::from(pred), ArrayView1::from(target)).0)
}

/// Negative cosine similarity. Zero vectors make the loss 0 (with a warning).
pub fn loss_cosine(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred, target)?;
    Ok(Loss::Cosine.value_and_grad(ArrayView1::from(pred), ArrayView1::from(target)).0)
}

/// Mean focal loss over items; `target` must be binary.
pub fn loss_focal(pred: &[f64], target: &[f64], cfg: &FocalConfig) -> Result<f64> {
    check_len(pred, target)?;
    cfg.validate()?;
    if let Some(bad) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Argument(format!("focal loss target must be binary, found {bad}")));
    }
    Ok(Loss::Focal(*cfg).value_and_grad(ArrayView1::from(pred), ArrayView1::from(target)).0)
}

/// Reconstruction loss choice for the trainers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Mse,
    Cosine,
    Focal(FocalConfig),
}

impl Loss {
    /// Loss for one user and its gradient with respect to `pred`.
    pub fn value_and_grad(&self, pred: ArrayView1<f64>, target: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let n = pred.len() as f64;
        match self {
            Loss::Mse => {
                let diff = &pred - &target;
                let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
                (value, diff * (2.0 / n))
            }
            Loss::Cosine => {
                let dot = pred.dot(&target);
                let np = pred.dot(&pred).sqrt();
                let nt = target.dot(&target).sqrt();
                if np == 0.0 || nt == 0.0 {
                    log::warn!("cosine loss on a zero vector; defined as 0");
                    return (0.0, Array1::zeros(pred.len()));
                }
                let cos = dot / (np * nt);
                let grad = Zip::from(&pred).and(&target).map_collect(|&p, &t| -(t / (np * nt) - cos * p / (np * np)));
                (-cos, grad)
            }
            Loss::Focal(cfg) => {
                let mut value = 0.0;
                let grad = Zip::from(&pred).and(&target).map_collect(|&p, &t| {
                    let positive = t > 0.5;
                    value += focal_item(p, positive, cfg);
                    focal_grad(p, positive, cfg) / n
                });
                (value / n, grad)
            }
        }
    }

    /// Mean loss over the rows of a batch and its gradient.
    pub fn batch_value_and_grad(&self, pred: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let b = pred.nrows().max(1) as f64;
        let mut grad = Array2::zeros(pred.raw_dim());
        let mut total = 0.0;
        for ((p, t), mut g) in pred.outer_iter().zip(target.outer_iter()).zip(grad.axis_iter_mut(Axis(0))) {
            let (v, gr) = self.value_and_grad(p, t);
            total += v;
            g.assign(&(gr / b));
        }
        (total / b, grad)
    }
}
