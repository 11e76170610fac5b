//! Elementwise-product combination of the deep and shallow paths, and the
//! three ways of training it.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewD, ArrayViewMutD, Zip};
use rand::Rng;

use crate::dataio::InteractionMatrix;
use crate::ease::{ease_fit_closed_form, nease_train_with, EaseSolveConfig, NeaseModel, NeaseTrainConfig, OutputMode};
use crate::error::{dim_err, Error, Result};
use crate::flvae::{
    flvae_train_with, standard_normal, AutoencoderTrainConfig, FlvaeCache, FlvaeConfig, FlvaeModel, PairPlan,
};
use crate::nncore::{join_name, sigmoid, Adam, LayerInput, Loss, Parameterized};
use crate::rng::derive_seed;
use crate::train::{check_finite, dense_rows, epoch_batches, TrainReport};

/// Elementwise product of probability vectors; every entry must lie in [0, 1].
pub fn hadamard_combine(preds: &[ArrayView1<f64>]) -> Result<Array1<f64>> {
    let first = preds.first().ok_or_else(|| Error::Argument("need at least one prediction".into()))?;
    let mut out = Array1::ones(first.len());
    for p in preds {
        if p.len() != first.len() {
            return Err(dim_err("prediction length", first.len(), p.len()));
        }
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("prediction {bad} outside [0, 1]")));
        }
        out *= p;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaspModel {
    pub deep: FlvaeModel,
    pub shallow: NeaseModel,
}

impl VaspModel {
    pub fn new(deep: FlvaeModel, mut shallow: NeaseModel) -> Result<Self> {
        if deep.n_items() != shallow.n_items() {
            return Err(dim_err("shallow path item count", deep.n_items(), shallow.n_items()));
        }
        shallow.output = OutputMode::Sigmoid;
        shallow.project();
        Ok(Self { deep, shallow })
    }

    /// Freshly initialized paths.
    pub fn init<R: Rng + ?Sized>(n_items: usize, cfg: FlvaeConfig, rng: &mut R) -> Result<Self> {
        let deep = FlvaeModel::new(n_items, cfg, rng)?;
        let shallow = NeaseModel::glorot(n_items, OutputMode::Sigmoid, rng);
        Self::new(deep, shallow)
    }

    pub fn n_items(&self) -> usize {
        self.deep.n_items()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Array1<f64>> {
        let deep = self.deep.predict(x)?;
        let shallow = self.shallow.forward(x)?;
        Ok(deep * shallow)
    }

    pub fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        self.deep.score_rows(rows) * self.shallow.score_rows(rows)
    }

    /// Batch loss of the combined output (focal on the product plus beta
    /// times the deep path's KL), with gradients for the requested paths.
    pub fn loss_and_grad(
        &self,
        inputs: &[&[u32]],
        target: &Array2<f64>,
        eps: Array2<f64>,
        beta: f64,
        paths: Paths,
    ) -> (f64, VaspModel) {
        let input = LayerInput::Sparse { rows: inputs, width: self.n_items() };
        let cache: FlvaeCache = self.deep.forward_train(input, eps);
        let shallow_p = self.shallow.logits_rows(inputs).mapv_into(sigmoid);
        let combined = &cache.probs * &shallow_p;
        let (rec, g_p) = Loss::Focal(self.deep.cfg.focal).batch_value_and_grad(combined.view(), target.view());
        let loss = rec + beta * FlvaeModel::batch_kl(&cache);

        let deep = if paths.deep {
            self.deep.backward(input, &cache, &(&g_p * &shallow_p), beta)
        } else {
            self.deep.zeros_like()
        };
        let shallow = if paths.shallow {
            let g_z =
                Zip::from(&g_p).and(&cache.probs).and(&shallow_p).map_collect(|&g, &pd, &ps| g * pd * ps * (1.0 - ps));
            self.shallow.weight_grad(inputs, &g_z)
        } else {
            self.shallow.zeros_like()
        };
        (loss, VaspModel { deep, shallow })
    }
}

/// Which paths receive gradients in a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Paths {
    pub deep: bool,
    pub shallow: bool,
}

impl Paths {
    pub const BOTH: Paths = Paths { deep: true, shallow: true };
    pub const DEEP: Paths = Paths { deep: true, shallow: false };
    pub const SHALLOW: Paths = Paths { deep: false, shallow: true };
}

impl Parameterized for VaspModel {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.deep.collect_params(&join_name(prefix, "deep"), out);
        self.shallow.collect_params(&join_name(prefix, "shallow"), out);
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.deep.collect_params_mut(&join_name(prefix, "deep"), out);
        self.shallow.collect_params_mut(&join_name(prefix, "shallow"), out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeKind {
    /// Train both paths separately, then combine without fine-tuning.
    PretrainedEnsemble,
    /// Update one path per optimizer step, swapping every step.
    Alternating,
    /// Single loss on the combined output, both paths updated every step.
    Joint,
}

impl RegimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PretrainedEnsemble => "pretrained_ensemble",
            Self::Alternating => "alternating",
            Self::Joint => "joint",
        }
    }
}

impl std::str::FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained_ensemble" => Ok(Self::PretrainedEnsemble),
            "alternating" => Ok(Self::Alternating),
            "joint" => Ok(Self::Joint),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

/// How the shallow path starts in the pretrained-ensemble regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShallowInit {
    Random,
    /// Seed from the closed-form solution, then calibrate the sigmoid output
    /// by gradient training.
    ClosedForm(EaseSolveConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRegime {
    pub kind: RegimeKind,
    pub autoencoder: AutoencoderTrainConfig,
    /// Penalty on the shallow weights when the shallow path trains alone.
    pub shallow_l2: f64,
    pub shallow_init: ShallowInit,
}

pub fn vasp_train(
    model: &mut VaspModel,
    train: &InteractionMatrix,
    regime: &TrainRegime,
    seed: u64,
) -> Result<TrainReport> {
    if train.n_items() != model.n_items() {
        return Err(dim_err("VASP item count vs training data", model.n_items(), train.n_items()));
    }
    regime.autoencoder.schedule.validate()?;
    let mut deep_opt = Adam::new();
    let mut shallow_opt = Adam::new();
    let trace = match regime.kind {
        RegimeKind::PretrainedEnsemble => {
            if let ShallowInit::ClosedForm(cfg) = regime.shallow_init {
                let solved = ease_fit_closed_form(train, &cfg)?;
                model.shallow.update_weight(|w| w.assign(solved.weight()));
            }
            let shallow_cfg = NeaseTrainConfig {
                loss: Loss::Focal(model.deep.cfg.focal),
                l2: regime.shallow_l2,
                schedule: regime.autoencoder.schedule.clone(),
            };
            let s =
                nease_train_with(&mut model.shallow, train, &shallow_cfg, derive_seed(seed, &[1]), &mut shallow_opt)
                    .map_err(|e| phase_err("shallow pretraining", e))?;
            let d =
                flvae_train_with(&mut model.deep, train, &regime.autoencoder, derive_seed(seed, &[2]), &mut deep_opt)
                    .map_err(|e| phase_err("deep pretraining", e))?;
            s.trace.iter().zip(&d.trace).map(|(a, b)| a + b).collect()
        }
        RegimeKind::Joint | RegimeKind::Alternating => {
            combined_train(model, train, regime, seed, &mut deep_opt, &mut shallow_opt)
                .map_err(|e| phase_err(regime.kind.as_str(), e))?
        }
    };
    Ok(TrainReport { trace, optimizers: vec![("deep".into(), deep_opt), ("shallow".into(), shallow_opt)] })
}

fn phase_err(phase: &str, e: Error) -> Error {
    match e {
        Error::Training(msg) => Error::Training(format!("{phase}: {msg}")),
        other => other,
    }
}

fn combined_train(
    model: &mut VaspModel,
    train: &InteractionMatrix,
    regime: &TrainRegime,
    seed: u64,
    deep_opt: &mut Adam,
    shallow_opt: &mut Adam,
) -> Result<Vec<f64>> {
    let cfg = &regime.autoencoder;
    let plan = PairPlan::new(train, cfg.augment)?;
    let n_items = model.n_items();
    let k = model.deep.latent_dim();
    let mut trace = Vec::with_capacity(cfg.schedule.total_epochs());
    for (epoch, lr) in cfg.schedule.epoch_rates().enumerate() {
        let beta = model.deep.cfg.kl_weight * cfg.kl_factor(epoch);
        let batches = epoch_batches(&plan.users, cfg.schedule.batch_size, seed, epoch);
        let (mut total, mut steps) = (0.0, 0usize);
        for (bi, batch) in batches.iter().enumerate() {
            let splits = plan.splits(train, batch, seed, epoch)?;
            for direction in 0..2 {
                let pairs = PairPlan::step_pairs(&splits, direction);
                let target = dense_rows(&pairs.targets, n_items);
                let eps = standard_normal(
                    batch.len(),
                    k,
                    derive_seed(seed, &[0xe5, epoch as u64, bi as u64, direction as u64]),
                );
                let paths = match regime.kind {
                    RegimeKind::Alternating if (bi + direction) % 2 == 0 => Paths::DEEP,
                    RegimeKind::Alternating => Paths::SHALLOW,
                    _ => Paths::BOTH,
                };
                let (loss, grad) = model.loss_and_grad(&pairs.inputs, &target, eps, beta, paths);
                check_finite(loss, "VASP", epoch)?;
                if paths.deep {
                    deep_opt.step(&mut model.deep, &grad.deep, lr)?;
                }
                if paths.shallow {
                    shallow_opt.step(&mut model.shallow, &grad.shallow, lr)?;
                    model.shallow.project();
                }
                total += loss;
                steps += 1;
            }
        }
        let mean = total / steps as f64;
        log::debug!("vasp epoch {epoch}: loss {mean:.6}");
        trace.push(mean);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flvae::NormMode;
    use crate::nncore::{grad_check, FocalConfig};
    use crate::rng::rng_from_seed;
    use crate::train::Schedule;
    use ndarray::{array, Array2};

    fn toy_cfg() -> FlvaeConfig {
        FlvaeConfig {
            latent_dim: 3,
            hidden_dim: 6,
            encoder_depth: 1,
            decoder_depth: 1,
            norm: NormMode::Off,
            focal: FocalConfig::default(),
            kl_weight: 1.0,
        }
    }

    fn toy_data() -> InteractionMatrix {
        let rows = (0..16u32).map(|u| (0..8).filter(|i| (i + u) % 2 == 0 || i == &(u % 8)).collect()).collect();
        InteractionMatrix::from_rows(rows, 8).unwrap()
    }

    fn regime(kind: RegimeKind, epochs: usize) -> TrainRegime {
        let mut autoencoder = AutoencoderTrainConfig::new(Schedule::single(epochs, 1e-2, 8));
        autoencoder.kl_anneal_epochs = None;
        TrainRegime { kind, autoencoder, shallow_l2: 0.0, shallow_init: ShallowInit::Random }
    }

    #[test]
    fn hadamard_examples() {
        let a = array![0.8, 0.5];
        let b = array![0.5, 1.0];
        assert_eq!(hadamard_combine(&[a.view()]).unwrap(), a);
        assert_eq!(hadamard_combine(&[a.view(), b.view()]).unwrap(), array![0.4, 0.5]);
        let z = array![0.0, 0.9];
        assert_eq!(hadamard_combine(&[a.view(), z.view()]).unwrap()[0], 0.0);
        assert!(hadamard_combine(&[a.view(), array![1.2, 0.0].view()]).is_err());
        assert!(hadamard_combine(&[a.view(), array![0.1].view()]).is_err());
        assert!(hadamard_combine(&[]).is_err());
    }

    #[test]
    fn hadamard_commutes_and_associates() {
        let mut rng = rng_from_seed(4);
        for _ in 0..50 {
            let v: Vec<Array1<f64>> =
                (0..3).map(|_| Array1::from_shape_fn(5, |_| rng.random_range(0.0..1.0))).collect();
            let abc = hadamard_combine(&[v[0].view(), v[1].view(), v[2].view()]).unwrap();
            let cab = hadamard_combine(&[v[2].view(), v[0].view(), v[1].view()]).unwrap();
            let ab = hadamard_combine(&[v[0].view(), v[1].view()]).unwrap();
            let ab_c = hadamard_combine(&[ab.view(), v[2].view()]).unwrap();
            assert!((&abc - &cab).iter().chain((&abc - &ab_c).iter()).all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn zero_shallow_halves_deep_output() {
        let mut rng = rng_from_seed(1);
        let deep = FlvaeModel::new(8, toy_cfg(), &mut rng).unwrap();
        let m = VaspModel::new(deep.clone(), NeaseModel::zeros(8, OutputMode::Sigmoid)).unwrap();
        let x = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let out = m.forward(&x).unwrap();
        assert_eq!(out, deep.predict(&x).unwrap() * 0.5);
        assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn ranking_matches_log_sum() {
        let mut rng = rng_from_seed(2);
        let m = VaspModel::init(8, toy_cfg(), &mut rng).unwrap();
        let x = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let prod = m.forward(&x).unwrap();
        let logs = m.deep.predict(&x).unwrap().mapv(f64::ln) + m.shallow.forward(&x).unwrap().mapv(f64::ln);
        let order = |v: &Array1<f64>| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
            idx
        };
        assert_eq!(order(&prod), order(&logs));
    }

    #[test]
    fn joint_loss_gradient_passes_finite_differences() {
        let mut rng = rng_from_seed(3);
        let m = VaspModel::init(9, FlvaeConfig { encoder_depth: 2, ..toy_cfg() }, &mut rng).unwrap();
        let inputs: Vec<&[u32]> = vec![&[0, 4, 8], &[2, 3]];
        let targets: Vec<&[u32]> = vec![&[1, 5], &[6, 7, 8]];
        let target = dense_rows(&targets, 9);
        let eps = standard_normal(2, 3, 5);
        let f = |m: &VaspModel| m.loss_and_grad(&inputs, &target, eps.clone(), 0.5, Paths::BOTH);
        let r = grad_check(&m, 1e-5, f);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_epochs_leave_both_paths() {
        let mut m = VaspModel::init(8, toy_cfg(), &mut rng_from_seed(5)).unwrap();
        let before = m.clone();
        vasp_train(&mut m, &toy_data(), &regime(RegimeKind::Joint, 0), 0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn regimes_train_and_keep_zero_diagonal() {
        for kind in [RegimeKind::Joint, RegimeKind::Alternating, RegimeKind::PretrainedEnsemble] {
            let mut m = VaspModel::init(8, toy_cfg(), &mut rng_from_seed(6)).unwrap();
            let report = vasp_train(&mut m, &toy_data(), &regime(kind, 30), 1).unwrap();
            assert_eq!(report.trace.len(), 30);
            assert!(m.shallow.weight().diag().iter().all(|&d| d == 0.0), "{kind:?}");
            if kind == RegimeKind::Joint {
                assert!(report.trace[29] < report.trace[0]);
            }
        }
    }

    #[test]
    fn alternating_updates_one_path_per_step() {
        let mut m = VaspModel::init(8, toy_cfg(), &mut rng_from_seed(7)).unwrap();
        let inputs: Vec<&[u32]> = vec![&[0, 2]];
        let target = Array2::from_elem((1, 8), 1.0);
        let (_, g) = m.loss_and_grad(&inputs, &target, standard_normal(1, 3, 1), 1.0, Paths::DEEP);
        assert!(g.shallow.weight().iter().all(|&v| v == 0.0));
        let (_, g) = m.loss_and_grad(&inputs, &target, standard_normal(1, 3, 1), 1.0, Paths::SHALLOW);
        assert!(g.deep.params().iter().all(|(_, p)| p.iter().all(|&v| v == 0.0)));
        m.shallow.project();
    }
}
