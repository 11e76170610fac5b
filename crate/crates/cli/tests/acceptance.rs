//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use vasp_core::dataio::{augment_split, split_users, InteractionMatrix};
use vasp_core::ease::{ease_fit_closed_form, nease_train, EaseSolveConfig, NeaseModel, NeaseTrainConfig, OutputMode};
use vasp_core::eval::{evaluate_model, ndcg_at_k, rank_items, recall_at_k, EvalConfig, MetricMode};
use vasp_core::flvae::{
    flvae_train, kl_standard_gaussian, standard_normal, AutoencoderTrainConfig, FlvaeConfig, FlvaeModel, NormMode,
};
use vasp_core::nncore::{grad_check, sigmoid, Activation, Dense, FocalConfig, LayerInput, Loss, ResidualStack};
use vasp_core::rng::{derive_seed, rng_from_seed};
use vasp_core::synthetic::{movielens_like, planted_blocks, write_movielens_csv, BlockConfig, RatingsConfig};
use vasp_core::train::{dense_rows, Phase, Schedule};
use vasp_core::vasp::{Paths, VaspModel};

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TRIALS: u64 = 100;
const CLOSED_FORM_TOL: f64 = 1e-6;
const NEASE_FROBENIUS_TOL: f64 = 1e-2;
const AUG_ROWS: u64 = 10_000;
const IDENTITY_SEEDS: u64 = 5;
const IDENTITY_MIN_WINS: usize = 4;
const IDENTITY_MIN_RECONSTRUCTION: f64 = 0.95;
const DESK_MIN_POPULARITY_RATIO: f64 = 1.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed.as_secs() < budget_secs
}

// ---------------------------------------------------------------- criterion 1

fn random_array(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn random_rows(n_rows: usize, n_items: usize, rng: &mut impl Rng) -> Vec<Vec<u32>> {
    (0..n_rows)
        .map(|_| {
            let mut row: Vec<u32> = (0..n_items as u32).filter(|_| rng.random_bool(0.3)).collect();
            if row.is_empty() {
                row.push(rng.random_range(0..n_items as u32));
            }
            row
        })
        .collect()
}

fn random_focal(rng: &mut impl Rng) -> FocalConfig {
    FocalConfig {
        alpha: rng.random_range(0.05..0.95),
        gamma: rng.random_range(0.0..3.0),
        alpha_symmetric: rng.random_bool(0.3),
    }
}

/// Normalizing only two features pins them to roughly -1 and +1, leaving
/// gradients near 1e-10 that central differences cannot resolve, so
/// normalized toy layers get at least three units.
fn toy_width(normalize: bool, rng: &mut impl Rng) -> usize {
    rng.random_range(if normalize { 3 } else { 2 }..=8)
}

fn toy_flvae_cfg(rng: &mut impl Rng) -> FlvaeConfig {
    let normalize = rng.random_bool(0.5);
    FlvaeConfig {
        latent_dim: rng.random_range(1..=4),
        hidden_dim: toy_width(normalize, rng),
        encoder_depth: rng.random_range(1..=3),
        decoder_depth: rng.random_range(1..=2),
        norm: if normalize { NormMode::On } else { NormMode::Off },
        focal: random_focal(rng),
        kl_weight: 1.0,
    }
}

/// Worst relative error per operation family over one randomized trial.
fn gradient_trial(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    let batch = rng.random_range(1..=3);

    let (din, dout) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let dense = Dense::glorot(din, dout, &mut rng);
    let x = random_array(batch, din, &mut rng);
    let c = random_array(batch, dout, &mut rng);
    let r = grad_check(&dense, GRAD_EPS, |d: &Dense| {
        let y = d.forward(LayerInput::Dense(x.view()));
        ((&y * &c).sum(), d.backward(LayerInput::Dense(x.view()), c.view()).0)
    });
    out.push(("dense", r.max_rel_error));

    for (name, act) in [("sigmoid", Activation::Sigmoid), ("swish", Activation::Swish)] {
        let pre: Array1<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        let c: Array1<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = grad_check(&pre, GRAD_EPS, |p: &Array1<f64>| {
            let v: f64 = p.iter().zip(&c).map(|(&x, &w)| w * act.apply(x)).sum();
            (v, p.iter().zip(&c).map(|(&x, &w)| w * act.derivative(x)).collect())
        });
        out.push((name, r.max_rel_error));
    }

    let normalize = rng.random_bool(0.5);
    let (sin, width, depth) = (rng.random_range(1..=12), toy_width(normalize, &mut rng), rng.random_range(1..=3));
    let stack = ResidualStack::new(sin, width, depth, normalize, &mut rng);
    let x = random_array(batch, sin, &mut rng);
    let c = random_array(batch, width, &mut rng);
    let r = grad_check(&stack, GRAD_EPS, |s: &ResidualStack| {
        let cache = s.forward(LayerInput::Dense(x.view()));
        ((cache.output() * &c).sum(), s.backward(LayerInput::Dense(x.view()), &cache, c.view()).0)
    });
    out.push(("residual stack", r.max_rel_error));

    let n_items = rng.random_range(2..=12);
    let focal = random_focal(&mut rng);
    let logits: Array1<f64> = (0..n_items).map(|_| rng.random_range(-3.0..3.0)).collect();
    let target: Array1<f64> = (0..n_items).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let r = grad_check(&logits, GRAD_EPS, |z: &Array1<f64>| {
        let p = z.mapv(sigmoid);
        let (v, gp) = Loss::Focal(focal).value_and_grad(p.view(), target.view());
        (v, gp * &p * p.mapv(|q| 1.0 - q))
    });
    out.push(("focal loss", r.max_rel_error));

    let k = rng.random_range(1..=4);
    let stats: Array1<f64> = (0..2 * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let r = grad_check(&stats, GRAD_EPS, |s: &Array1<f64>| {
        let (mu, lv) = s.as_slice().unwrap().split_at(k);
        let v = kl_standard_gaussian(mu, lv).unwrap();
        let g = mu.iter().copied().chain(lv.iter().map(|&l| 0.5 * (l.exp() - 1.0))).collect();
        (v, g)
    });
    out.push(("KL term", r.max_rel_error));

    let n_items = rng.random_range(2..=12);
    let cfg = toy_flvae_cfg(&mut rng);
    let inputs = random_rows(batch, n_items, &mut rng);
    let targets = random_rows(batch, n_items, &mut rng);
    let in_refs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
    let t_refs: Vec<&[u32]> = targets.iter().map(Vec::as_slice).collect();
    let target = dense_rows(&t_refs, n_items);
    let eps = standard_normal(batch, cfg.latent_dim, derive_seed(seed, &[1]));
    let beta = rng.random_range(0.0..1.5);
    let model = FlvaeModel::new(n_items, cfg, &mut rng).unwrap();
    let r = grad_check(&model, GRAD_EPS, |m: &FlvaeModel| {
        m.loss_and_grad(LayerInput::Sparse { rows: &in_refs, width: n_items }, &target, eps.clone(), beta)
    });
    out.push(("FLVAE loss", r.max_rel_error));

    let vasp = VaspModel::init(n_items, toy_flvae_cfg(&mut rng), &mut rng).unwrap();
    let eps = standard_normal(batch, vasp.deep.latent_dim(), derive_seed(seed, &[2]));
    let r =
        grad_check(&vasp, GRAD_EPS, |m: &VaspModel| m.loss_and_grad(&in_refs, &target, eps.clone(), beta, Paths::BOTH));
    out.push(("joint VASP loss", r.max_rel_error));
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for trial in 0..GRAD_TRIALS {
        for (name, err) in gradient_trial(derive_seed(0xc1, &[trial])) {
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let summary: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        max < GRAD_TOL && within(elapsed, 120),
        format!(
            "{GRAD_TRIALS} trials, max rel error {max:.2e} (< {GRAD_TOL:e}) [{}], {:.1}s",
            summary.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(row);
            for (x, &p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Column-by-column constrained ridge: column j regresses item j on every
/// other item, so its own coefficient is absent by construction.
fn brute_force_ease(x: &[Vec<f64>], n_items: usize, lambda: f64) -> Array2<f64> {
    let mut w = Array2::zeros((n_items, n_items));
    for j in 0..n_items {
        let others: Vec<usize> = (0..n_items).filter(|&i| i != j).collect();
        let a: Vec<Vec<f64>> = others
            .iter()
            .map(|&p| {
                others
                    .iter()
                    .map(|&q| x.iter().map(|r| r[p] * r[q]).sum::<f64>() + if p == q { lambda } else { 0.0 })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = others.iter().map(|&p| x.iter().map(|r| r[p] * r[j]).sum()).collect();
        for (coef, &i) in solve(a, b).into_iter().zip(&others) {
            w[[i, j]] = coef;
        }
    }
    w
}

fn criterion_2() -> Outcome {
    let mut rng = rng_from_seed(0xc2);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n_items = rng.random_range(3..=5);
        let n_users = rng.random_range(3..=8);
        let lambda = [0.1, 1.0, 10.0][case % 3];
        let x: Vec<Vec<f64>> = (0..n_users)
            .map(|_| (0..n_items).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
            .collect();
        let rows = x.iter().map(|r| (0..n_items as u32).filter(|&i| r[i as usize] == 1.0).collect()).collect();
        let m = InteractionMatrix::from_rows(rows, n_items).unwrap();
        let fit = ease_fit_closed_form(&m, &EaseSolveConfig { lambda }).unwrap();
        let diff = (fit.weight() - &brute_force_ease(&x, n_items, lambda)).mapv(f64::abs);
        worst = worst.max(diff.fold(0.0, |a, &b| a.max(b)));
    }
    let m = InteractionMatrix::from_rows(vec![vec![0, 1], vec![0]], 2).unwrap();
    let w = ease_fit_closed_form(&m, &EaseSolveConfig { lambda: 1.0 }).unwrap();
    let worked =
        (w.weight()[[0, 1]] - 1.0 / 3.0).abs() < CLOSED_FORM_TOL && (w.weight()[[1, 0]] - 0.5).abs() < CLOSED_FORM_TOL;
    outcome(
        worst < CLOSED_FORM_TOL && worked,
        format!("50 matrices, max elementwise gap {worst:.2e} (< {CLOSED_FORM_TOL:e}); 2-item example W_12=1/3, W_21=0.5: {worked}"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let rows = vec![vec![0, 1, 3], vec![1, 2], vec![0, 2, 3], vec![0, 1, 2], vec![3, 1]];
    let m = InteractionMatrix::from_rows(rows, 4).unwrap();
    let lambda = 1.0;
    let closed = ease_fit_closed_form(&m, &EaseSolveConfig { lambda }).unwrap();
    // The gradient loss is a mean over users and items, so the matching
    // penalty is lambda / (U * I).
    let l2 = lambda / (m.n_users() * m.n_items()) as f64;
    let phases = vec![
        Phase { epochs: 3000, learning_rate: 1e-2 },
        Phase { epochs: 3000, learning_rate: 1e-3 },
        Phase { epochs: 3000, learning_rate: 1e-4 },
    ];
    let cfg = NeaseTrainConfig { loss: Loss::Mse, l2, schedule: Schedule::new(phases, m.n_users()).unwrap() };
    let mut model = NeaseModel::zeros(4, OutputMode::Linear);
    let initial = (model.weight() - closed.weight()).mapv(|v| v * v).sum().sqrt();
    nease_train(&mut model, &m, &cfg, 3).unwrap();
    let frob = (model.weight() - closed.weight()).mapv(|v| v * v).sum().sqrt();
    let elapsed = start.elapsed();
    outcome(
        frob < NEASE_FROBENIUS_TOL && within(elapsed, 60),
        format!(
            "Frobenius gap {frob:.2e} (< {NEASE_FROBENIUS_TOL:e}) from initial {initial:.3}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn permutations(items: &[u32], len: usize) -> Vec<Vec<u32>> {
    if len == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let rest: Vec<u32> = items.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
        for mut tail in permutations(&rest, len - 1) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

fn oracle_dcg(list: &[u32], holdout: &HashSet<u32>, depth: usize) -> f64 {
    list.iter()
        .take(depth)
        .enumerate()
        .map(|(i, item)| {
            let rel = if holdout.contains(item) { 1 } else { 0 };
            (2f64.powi(rel) - 1.0) / ((i + 2) as f64).log2()
        })
        .sum()
}

fn criterion_4() -> Outcome {
    let universe: Vec<u32> = (0..6).collect();
    let full_orders = permutations(&universe, 6);
    let lists: Vec<Vec<u32>> = (1..=6).flat_map(|len| permutations(&universe, len)).collect();
    let holdouts: Vec<Vec<u32>> = (1u32..64)
        .map(|mask| universe.iter().copied().filter(|i| mask >> i & 1 == 1).collect::<Vec<u32>>())
        .filter(|h| h.len() <= 3)
        .collect();
    let mut checks = 0usize;
    let mut mismatches = 0usize;
    for h in &holdouts {
        let hs: HashSet<u32> = h.iter().copied().collect();
        for k in 1..=6 {
            // Best achievable values over every ordering of the catalogue.
            let ideal_k = full_orders.iter().map(|o| oracle_dcg(o, &hs, k)).fold(0.0, f64::max);
            let ideal_h = full_orders.iter().map(|o| oracle_dcg(o, &hs, h.len())).fold(0.0, f64::max);
            let best_hits =
                full_orders.iter().map(|o| o.iter().take(k).filter(|i| hs.contains(i)).count()).max().unwrap();
            for list in &lists {
                let dcg = oracle_dcg(list, &hs, k);
                let hits = list.iter().take(k).filter(|i| hs.contains(i)).count() as f64;
                let expected = [
                    (MetricMode::default(), dcg / ideal_k, hits / best_hits as f64),
                    (MetricMode::strict_literal(), dcg / ideal_h, hits / h.len() as f64),
                ];
                for (mode, ndcg, recall) in expected {
                    checks += 2;
                    mismatches += usize::from(ndcg_at_k(list, h, k, mode).unwrap() != ndcg);
                    mismatches += usize::from(recall_at_k(list, h, k, mode).unwrap() != recall);
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{checks} metric values vs exhaustive oracle, {mismatches} mismatches"))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let mut rng = rng_from_seed(0xc5);
    let mut violations = 0;
    for _ in 0..AUG_ROWS {
        let size = rng.random_range(2..=500);
        let row: Vec<u32> = rand::seq::index::sample(&mut rng, 5000, size).into_iter().map(|i| i as u32).collect();
        let pair = augment_split(&row, rng.random()).unwrap();
        let a: HashSet<u32> = pair.x_a.iter().copied().collect();
        let b: HashSet<u32> = pair.x_b.iter().copied().collect();
        let union: HashSet<u32> = a.union(&b).copied().collect();
        let row_set: HashSet<u32> = row.iter().copied().collect();
        let disjoint = a.is_disjoint(&b) && a.len() == pair.x_a.len() && b.len() == pair.x_b.len();
        let balanced = pair.x_a.len().abs_diff(pair.x_b.len()) <= 1;
        violations += usize::from(!disjoint) + usize::from(union != row_set) + usize::from(!balanced);
    }
    outcome(violations == 0, format!("{AUG_ROWS} rows of 2..500 items, {violations} violations"))
}

// ---------------------------------------------------------------- criterion 6

/// Share of each training row recovered in the top |row| scores when the
/// row itself is the input.
fn reconstruction(model: &FlvaeModel, m: &InteractionMatrix) -> f64 {
    let rows: Vec<&[u32]> = m.rows().iter().map(Vec::as_slice).collect();
    let scores = model.score_rows(&rows);
    let (mut hits, mut total) = (0, 0);
    for (row, s) in rows.iter().zip(scores.rows()) {
        let top = rank_items(s, &[], row.len()).unwrap();
        hits += top.items.iter().filter(|i| row.contains(i)).count();
        total += row.len();
    }
    hits as f64 / total as f64
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut min_recon: f64 = 1.0;
    let mut lines = Vec::new();
    for seed in 0..IDENTITY_SEEDS {
        let data = planted_blocks(&BlockConfig::default(), seed).unwrap();
        let split = split_users(&data, 400, seed).unwrap();
        let mut recall = [0.0; 2];
        for (slot, augment) in [false, true].into_iter().enumerate() {
            // Same deep architecture both times; no KL pull so only the
            // training pairs differ.
            let cfg = FlvaeConfig { kl_weight: 0.0, ..FlvaeConfig::desk() };
            let mut model = FlvaeModel::new(data.n_items(), cfg, &mut rng_from_seed(seed)).unwrap();
            let mut tc = AutoencoderTrainConfig::new(Schedule::single(30, 1e-3, 64));
            tc.augment = augment;
            flvae_train(&mut model, &split.train, &tc, seed).unwrap();
            if !augment {
                min_recon = min_recon.min(reconstruction(&model, &split.train));
            }
            recall[slot] = evaluate_model(&model, &split.test, &EvalConfig::new(seed)).unwrap().recall_at(20).unwrap();
        }
        wins += usize::from(recall[1] > recall[0]);
        lines.push(format!("{:.3}/{:.3}", recall[0], recall[1]));
    }
    let elapsed = start.elapsed();
    outcome(
        wins >= IDENTITY_MIN_WINS && min_recon >= IDENTITY_MIN_RECONSTRUCTION && within(elapsed, 600),
        format!(
            "augmented wins {wins}/{IDENTITY_SEEDS} on Recall@20 (plain/augmented: {}), plain reconstruction >= {min_recon:.3} (need {IDENTITY_MIN_RECONSTRUCTION}), {:.0}s",
            lines.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------- CLI-driven criteria

fn vasp_bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vasp"));
    c.env_remove("VASP_SEED");
    c
}

fn desk_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg")
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = vasp_bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`vasp {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn metric(report: &str, name: &str, k: usize) -> f64 {
    let prefix = format!("{name}\t{k}\t");
    report.lines().find_map(|l| l.strip_prefix(&prefix)).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

fn write_ratings(path: &Path, cfg: &RatingsConfig, seed: u64) {
    let records = movielens_like(cfg, seed).unwrap();
    let mut f = fs::File::create(path).unwrap();
    write_movielens_csv(&mut f, &records).unwrap();
}

fn criterion_7(dir: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let csv = dir.join("ratings.csv");
    write_ratings(&csv, &RatingsConfig::default(), 7);
    let ds = dir.join("ds");
    let (cfg, csv_s, ds_s) = (desk_cfg(), csv.display().to_string(), ds.display().to_string());
    let cfg_s = cfg.display().to_string();
    let common = ["--config", &cfg_s, "--dataset", &ds_s, "--seed", "7"];
    let with = |verb: &str, extra: &[&str]| -> Result<String, String> {
        let mut a = vec![verb];
        a.extend_from_slice(&common);
        a.extend_from_slice(extra);
        run(&a)
    };
    let summary = with("prepare", &["--ratings", &csv_s])?;
    let users = summary.lines().next().unwrap_or("").split_whitespace().last().unwrap_or("?").to_string();

    let mut ndcg = Vec::new();
    let variants: [(&str, &[&str]); 4] = [
        ("vasp", &["--model", "vasp", "--regime", "joint"]),
        ("flvae", &["--model", "flvae"]),
        ("nease_mse", &["--model", "nease", "--loss", "mse"]),
        ("nease_cosine", &["--model", "nease", "--loss", "cosine"]),
    ];
    for (name, extra) in variants {
        let ckpt = dir.join(format!("{name}.ckpt")).display().to_string();
        let mut args = extra.to_vec();
        args.extend_from_slice(&["--checkpoint", &ckpt]);
        with("train", &args)?;
        let report = with("evaluate", &["--checkpoint", &ckpt])?;
        ndcg.push((name, metric(&report, "ndcg", 100)));
    }
    let pop = metric(&with("evaluate", &["--scorer", "popularity"])?, "ndcg", 100);
    let get = |n: &str| ndcg.iter().find(|(m, _)| *m == n).unwrap().1;
    let (vasp, flvae, mse, cosine) = (get("vasp"), get("flvae"), get("nease_mse"), get("nease_cosine"));
    let ratio = vasp / pop;
    let elapsed = start.elapsed();
    Ok(outcome(
        ratio >= DESK_MIN_POPULARITY_RATIO && within(elapsed, 1800),
        format!(
            "{users} users; NDCG@100 VASP {vasp:.4} vs popularity {pop:.4} = {ratio:.2}x (need {DESK_MIN_POPULARITY_RATIO}x); \
             reported: VASP >= max(NEASE, FLVAE) {} (FLVAE {flvae:.4}, NEASE {:.4}); NEASE cosine > MSE {} ({cosine:.4} vs {mse:.4}); {:.0}s",
            vasp >= flvae.max(mse.max(cosine)),
            mse.max(cosine),
            cosine > mse,
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_8() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper-ml20m.cfg");
    let Ok(text) = fs::read_to_string(&path) else {
        return outcome(false, "configs/paper-ml20m.cfg missing");
    };
    let expected = [
        ("phases", "50@5e-5,20@1e-5,20@1e-6"),
        ("batch_size", "1024"),
        ("latent_dim", "2048"),
        ("hidden_dim", "4096"),
        ("encoder_depth", "7"),
        ("decoder_depth", "5"),
        ("n_test", "10000"),
    ];
    let value = |key: &str| {
        text.lines().map(|l| l.split('#').next().unwrap_or("")).find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim().to_string())
        })
    };
    let wrong: Vec<&str> = expected.iter().filter(|(k, v)| value(k).as_deref() != Some(*v)).map(|(k, _)| *k).collect();
    let documents_cost = text.contains("multi-hour");
    outcome(
        wrong.is_empty() && documents_cost,
        format!(
            "full-scale numbers (e.g. VASP ML20M NDCG@100 0.448) not reproducible at desk scale by design; \
             full-scale preset present, mismatched keys {wrong:?}, cost documented: {documents_cost}"
        ),
    )
}

fn criterion_9(dir: &Path) -> Result<Outcome, String> {
    let csv = dir.join("small.csv");
    write_ratings(&csv, &RatingsConfig { n_users: 400, n_items: 150, ..RatingsConfig::default() }, 11);
    let cfg = desk_cfg().display().to_string();
    let csv_s = csv.display().to_string();
    let mut artifacts: Vec<Vec<Vec<u8>>> = Vec::new();
    // Both runs use the same paths (they are part of the echoed config), so the
    // working directory is cleared between them.
    let d = dir.join("det");
    for run_id in 0..2 {
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| e.to_string())?;
        }
        fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        let ds = d.join("ds").display().to_string();
        let ckpt = d.join("m.ckpt").display().to_string();
        let report = d.join("report.txt").display().to_string();
        let base = ["--config", &cfg, "--dataset", &ds, "--seed", "5", "--n_test", "80", "--phases", "2@1e-3"];
        let go = |verb: &str, extra: &[&str]| {
            let mut a = vec![verb];
            a.extend_from_slice(&base);
            a.extend_from_slice(extra);
            run(&a)
        };
        go("prepare", &["--ratings", &csv_s])?;
        go("train", &["--checkpoint", &ckpt])?;
        let threads = if run_id == 0 { "1" } else { "0" };
        go("evaluate", &["--checkpoint", &ckpt, "--report", &report, "--threads", threads])?;
        let files = [
            "ds/train.bin",
            "ds/test.bin",
            "ds/items.map",
            "ds/users.map",
            "ds/dataset.info",
            "m.ckpt",
            "m.ckpt.trace",
            "report.txt",
        ];
        artifacts.push(files.iter().map(|f| fs::read(d.join(f)).unwrap_or_default()).collect());
    }
    let differing = artifacts[0].iter().zip(&artifacts[1]).filter(|(a, b)| a != b || a.is_empty()).count();
    Ok(outcome(differing == 0, format!("2 runs of prepare/train/evaluate, {differing} of 8 artifacts differ")))
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let fail = |e: String| outcome(false, e);
    let criteria: Vec<(u32, &str, Check<'_>)> = vec![
        (1, "gradient suite", Box::new(criterion_1)),
        (2, "closed-form oracle", Box::new(criterion_2)),
        (3, "NEASE matches closed form", Box::new(criterion_3)),
        (4, "metric oracle", Box::new(criterion_4)),
        (5, "augmentation properties", Box::new(criterion_5)),
        (6, "identity prevention", Box::new(criterion_6)),
        (7, "desk-scale end-to-end", Box::new(|| criterion_7(tmp.path()).unwrap_or_else(fail))),
        (8, "full-scale numbers", Box::new(criterion_8)),
        (9, "determinism", Box::new(|| criterion_9(tmp.path()).unwrap_or_else(fail))),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (n, name, check) in &criteria {
        if only.is_some_and(|o| o != *n) {
            continue;
        }
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {n} ({name}): {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
