//! The shallow item-item autoencoder: closed-form ridge solution with a zero
//! diagonal, and the same single layer trained by gradient descent.
//!
//! Weights are stored item-to-item: `weight[[i, j]]` is the contribution of
//! interacted item `i` to the score of item `j`, so a user row `x` is scored
//! as `x^T W` and a batch `X` as `X W`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;

use crate::dataio::InteractionMatrix;
use crate::error::{dim_err, Error, Result};
use crate::nncore::{glorot_uniform, join_name, sigmoid, Adam, Loss, Parameterized};
use crate::train::{check_finite, dense_rows, epoch_batches, Schedule, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    Linear,
    Sigmoid,
}

impl OutputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::Config(format!("unknown output mode `{other}`"))),
        }
    }
}

/// Single-layer item-item model without bias and with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NeaseModel {
    weight: Array2<f64>,
    pub output: OutputMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EaseSolveConfig {
    pub lambda: f64,
}

/// Zeroes the diagonal in place.
pub fn zero_diag_project(w: &mut Array2<f64>) -> Result<()> {
    if w.nrows() != w.ncols() {
        return Err(Error::Dimension(format!("expected a square matrix, got {}x{}", w.nrows(), w.ncols())));
    }
    w.diag_mut().fill(0.0);
    Ok(())
}

impl NeaseModel {
    /// Wraps a weight matrix, projecting its diagonal to zero.
    pub fn new(mut weight: Array2<f64>, output: OutputMode) -> Result<Self> {
        zero_diag_project(&mut weight)?;
        Ok(Self { weight, output })
    }

    pub fn zeros(n_items: usize, output: OutputMode) -> Self {
        Self { weight: Array2::zeros((n_items, n_items)), output }
    }

    pub fn glorot<R: Rng + ?Sized>(n_items: usize, output: OutputMode, rng: &mut R) -> Self {
        let mut weight = glorot_uniform(n_items, n_items, rng);
        weight.diag_mut().fill(0.0);
        Self { weight, output }
    }

    pub fn n_items(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    /// Mutates the weights, re-projecting the diagonal afterwards.
    pub fn update_weight(&mut self, f: impl FnOnce(&mut Array2<f64>)) {
        f(&mut self.weight);
        self.weight.diag_mut().fill(0.0);
    }

    pub fn project(&mut self) {
        self.weight.diag_mut().fill(0.0);
    }

    /// Scores for one (binary) input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.n_items() {
            return Err(dim_err("NEASE input", self.n_items(), x.len()));
        }
        let z = ndarray::aview1(x).dot(&self.weight);
        Ok(match self.output {
            OutputMode::Linear => z,
            OutputMode::Sigmoid => z.mapv(sigmoid),
        })
    }

    /// `X W` for a batch of sparse binary rows.
    pub fn logits_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.n_items()));
        for (mut y, row) in out.outer_iter_mut().zip(rows) {
            for &i in row.iter() {
                y += &self.weight.row(i as usize);
            }
        }
        out
    }

    pub fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        let z = self.logits_rows(rows);
        match self.output {
            OutputMode::Linear => z,
            OutputMode::Sigmoid => z.mapv_into(sigmoid),
        }
    }

    /// Weight gradient `X^T G` from the gradient with respect to the logits.
    pub fn weight_grad(&self, rows: &[&[u32]], grad_logits: &Array2<f64>) -> NeaseModel {
        let mut g = Array2::zeros(self.weight.raw_dim());
        for (gr, row) in grad_logits.outer_iter().zip(rows) {
            for &i in row.iter() {
                let mut dst = g.row_mut(i as usize);
                dst += &gr;
            }
        }
        NeaseModel { weight: g, output: self.output }
    }

    /// Batch loss and weight gradient for `loss(score(X_in), X_target)` plus
    /// `l2 * |W|^2`.
    pub fn loss_and_grad(&self, inputs: &[&[u32]], targets: &[&[u32]], loss: &Loss, l2: f64) -> (f64, NeaseModel) {
        let z = self.logits_rows(inputs);
        let t = dense_rows(targets, self.n_items());
        let (value, grad_logits) = match self.output {
            OutputMode::Linear => loss.batch_value_and_grad(z.view(), t.view()),
            OutputMode::Sigmoid => {
                let p = z.mapv(sigmoid);
                let (v, gp) = loss.batch_value_and_grad(p.view(), t.view());
                (v, Zip::from(&gp).and(&p).map_collect(|&g, &s| g * s * (1.0 - s)))
            }
        };
        let mut grad = self.weight_grad(inputs, &grad_logits);
        let mut total = value;
        if l2 > 0.0 {
            total += l2 * self.weight.iter().map(|w| w * w).sum::<f64>();
            grad.weight.scaled_add(2.0 * l2, &self.weight);
        }
        (total, grad)
    }
}

impl Parameterized for NeaseModel {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join_name(prefix, "W"), self.weight.view().into_dyn()));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join_name(prefix, "W"), self.weight.view_mut().into_dyn()));
    }
}

/// Gram matrix `X^T X` of a binary interaction matrix.
pub fn gram_matrix(train: &InteractionMatrix) -> Array2<f64> {
    let n = train.n_items();
    let mut g = Array2::<f64>::zeros((n, n));
    for row in train.rows() {
        for &i in row {
            let mut gi = g.row_mut(i as usize);
            for &j in row {
                gi[j as usize] += 1.0;
            }
        }
    }
    g
}

/// Closed-form solution: `P = (X^T X + lambda I)^-1`,
/// `W_ij = -P_ij / P_jj` off the diagonal and `W_ii = 0`.
pub fn ease_fit_closed_form(train: &InteractionMatrix, cfg: &EaseSolveConfig) -> Result<NeaseModel> {
    let n = train.n_items();
    if n < 2 {
        return Err(Error::Argument(format!("closed form needs at least 2 items, got {n}")));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::Argument(format!("lambda must be positive and finite, got {}", cfg.lambda)));
    }
    let mut g = gram_matrix(train);
    g.diag_mut().mapv_inplace(|v| v + cfg.lambda);
    let gram = DMatrix::from_row_slice(n, n, g.as_slice().expect("standard layout"));

    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra(format!("Gram matrix + {}I is not positive definite", cfg.lambda)))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let cond_estimate = (hi / lo).powi(2);
    if !cond_estimate.is_finite() || cond_estimate > 1e14 {
        return Err(Error::LinearAlgebra(format!(
            "Gram system numerically singular (condition estimate {cond_estimate:.3e})"
        )));
    }
    let p = chol.inverse();

    let mut w = Array2::zeros((n, n));
    for j in 0..n {
        let pjj = p[(j, j)];
        for i in 0..n {
            if i != j {
                w[[i, j]] = -p[(i, j)] / pjj;
            }
        }
    }
    NeaseModel::new(w, OutputMode::Linear)
}

/// Standalone gradient training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct NeaseTrainConfig {
    pub loss: Loss,
    /// Coefficient of the `|W|^2` penalty added to the mean batch loss.
    pub l2: f64,
    pub schedule: Schedule,
}

/// Mini-batch training on full rows (input = target); the zero diagonal is
/// what keeps the model from copying its input.
pub fn nease_train(
    model: &mut NeaseModel,
    train: &InteractionMatrix,
    cfg: &NeaseTrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    nease_train_with(model, train, cfg, seed, &mut Adam::new())
}

pub(crate) fn nease_train_with(
    model: &mut NeaseModel,
    train: &InteractionMatrix,
    cfg: &NeaseTrainConfig,
    seed: u64,
    opt: &mut Adam,
) -> Result<TrainReport> {
    if train.n_items() != model.n_items() {
        return Err(dim_err("NEASE item count vs training data", model.n_items(), train.n_items()));
    }
    cfg.schedule.validate()?;
    let users: Vec<usize> = (0..train.n_users()).filter(|&u| !train.row(u).is_empty()).collect();
    if users.is_empty() {
        return Err(Error::EmptyDataset("no training user has interactions".into()));
    }
    let mut trace = Vec::with_capacity(cfg.schedule.total_epochs());
    for (epoch, lr) in cfg.schedule.epoch_rates().enumerate() {
        let mut total = 0.0;
        let batches = epoch_batches(&users, cfg.schedule.batch_size, seed, epoch);
        for batch in &batches {
            let rows: Vec<&[u32]> = batch.iter().map(|&u| train.row(u)).collect();
            let (loss, grad) = model.loss_and_grad(&rows, &rows, &cfg.loss, cfg.l2);
            check_finite(loss, "NEASE", epoch)?;
            opt.step(model, &grad, lr)?;
            model.project();
            total += loss;
        }
        let mean = total / batches.len() as f64;
        log::debug!("nease epoch {epoch}: loss {mean:.6}");
        trace.push(mean);
    }
    Ok(TrainReport { trace, optimizers: vec![("shallow".into(), opt.clone())] })
}
