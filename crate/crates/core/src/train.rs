//! Pieces shared by all gradient trainers: learning-rate schedules, epoch
//! batching and the report returned after training.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nncore::Adam;
use crate::rng::{derive_seed, rng_from_seed};

/// A run of epochs at one learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub epochs: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub phases: Vec<Phase>,
    pub batch_size: usize,
}

impl Schedule {
    pub fn new(phases: Vec<Phase>, batch_size: usize) -> Result<Self> {
        let s = Self { phases, batch_size };
        s.validate()?;
        Ok(s)
    }

    pub fn single(epochs: usize, learning_rate: f64, batch_size: usize) -> Self {
        Self { phases: vec![Phase { epochs, learning_rate }], batch_size }
    }

    /// Three-phase schedule: 50 epochs at 5e-5, 20 at 1e-5, 20 at 1e-6,
    /// batches of 1024.
    pub fn full_scale() -> Self {
        Self {
            phases: vec![
                Phase { epochs: 50, learning_rate: 5e-5 },
                Phase { epochs: 20, learning_rate: 1e-5 },
                Phase { epochs: 20, learning_rate: 1e-6 },
            ],
            batch_size: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("schedule needs at least one phase".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(p) = self.phases.iter().find(|p| !(p.learning_rate > 0.0 && p.learning_rate.is_finite())) {
            return Err(Error::Config(format!("invalid learning rate {}", p.learning_rate)));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Learning rate of every epoch in order.
    pub fn epoch_rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.phases.iter().flat_map(|p| std::iter::repeat_n(p.learning_rate, p.epochs))
    }

    /// Parses `epochs@lr` phases separated by commas, e.g. `50@5e-5,20@1e-5`.
    pub fn parse_phases(spec: &str) -> Result<Vec<Phase>> {
        spec.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|part| {
                let bad = || Error::Config(format!("bad schedule phase `{part}` (expected epochs@lr)"));
                let (e, lr) = part.split_once('@').ok_or_else(bad)?;
                Ok(Phase {
                    epochs: e.trim().parse().map_err(|_| bad())?,
                    learning_rate: lr.trim().parse().map_err(|_| bad())?,
                })
            })
            .collect()
    }

    pub fn format_phases(&self) -> String {
        self.phases.iter().map(|p| format!("{}@{:e}", p.epochs, p.learning_rate)).collect::<Vec<_>>().join(",")
    }
}

/// Loss trace and optimizer state left after training.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub trace: Vec<f64>,
    pub optimizers: Vec<(String, Adam)>,
}

/// Shuffled mini-batches of the given user indices for one epoch.
pub(crate) fn epoch_batches(users: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = users.to_vec();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, &[0xba7c, epoch as u64])));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Dense binary matrix with one row per sparse row.
pub fn dense_rows(rows: &[&[u32]], n_items: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), n_items));
    for (mut r, row) in out.outer_iter_mut().zip(rows) {
        for &i in row.iter() {
            r[i as usize] = 1.0;
        }
    }
    out
}

pub(crate) fn check_finite(loss: f64, what: &str, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("{what} diverged (non-finite loss) in epoch {epoch}")))
    }
}
