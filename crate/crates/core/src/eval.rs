//! Fold-in evaluation, ranking metrics and the one-hot sensitivity table.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::dataio::{foldin_split, InteractionMatrix};
use crate::ease::NeaseModel;
use crate::error::{dim_err, Error, Result};
use crate::flvae::FlvaeModel;
use crate::rng::derive_seed;
use crate::vasp::VaspModel;

pub const DEFAULT_CUTOFFS: [usize; 3] = [20, 50, 100];
pub const DEFAULT_FOLDIN_RATIO: f64 = 0.8;
const SCORE_BATCH: usize = 256;

/// Anything that maps a batch of binary histories to per-item scores.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;
    fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64>;
}

impl Scorer for NeaseModel {
    fn n_items(&self) -> usize {
        NeaseModel::n_items(self)
    }
    fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        NeaseModel::score_rows(self, rows)
    }
}

impl Scorer for FlvaeModel {
    fn n_items(&self) -> usize {
        FlvaeModel::n_items(self)
    }
    fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        FlvaeModel::score_rows(self, rows)
    }
}

impl Scorer for VaspModel {
    fn n_items(&self) -> usize {
        VaspModel::n_items(self)
    }
    fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        VaspModel::score_rows(self, rows)
    }
}

/// Ranks every user by global item popularity in the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    scores: Array1<f64>,
}

impl Popularity {
    pub fn fit(train: &InteractionMatrix) -> Self {
        let counts = train.item_counts();
        let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        Self { scores: counts.iter().map(|&c| c as f64 / max).collect() }
    }
}

impl Scorer for Popularity {
    fn n_items(&self) -> usize {
        self.scores.len()
    }
    fn score_rows(&self, rows: &[&[u32]]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.scores.len()));
        out.rows_mut().into_iter().for_each(|mut r| r.assign(&self.scores));
        out
    }
}

/// Top items for one user, best first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub items: Vec<u32>,
    /// Fewer than `k` items were available after masking.
    pub short: bool,
}

fn desc(scores: ArrayView1<f64>, a: u32, b: u32) -> std::cmp::Ordering {
    let key = |i: u32| {
        let s = scores[i as usize];
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    };
    key(b).total_cmp(&key(a)).then(a.cmp(&b))
}

/// Highest-scoring `k` items not in `masked`, ties going to the lower index.
pub fn rank_items(scores: ArrayView1<f64>, masked: &[u32], k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    let mut keep = vec![true; scores.len()];
    for &m in masked {
        if let Some(slot) = keep.get_mut(m as usize) {
            *slot = false;
        }
    }
    let mut items: Vec<u32> = (0..scores.len() as u32).filter(|&i| keep[i as usize]).collect();
    let short = items.len() < k;
    if !short && items.len() > k {
        items.select_nth_unstable_by(k - 1, |&a, &b| desc(scores, a, b));
        items.truncate(k);
    }
    items.sort_unstable_by(|&a, &b| desc(scores, a, b));
    Ok(RankedList { items, short })
}

/// The readings of ambiguous metric definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricMode {
    /// Recall divides by |holdout| instead of min(k, |holdout|).
    pub literal_recall: bool,
    /// Ideal DCG sums over |holdout| positions instead of min(k, |holdout|).
    pub literal_idcg: bool,
}

impl MetricMode {
    pub fn strict_literal() -> Self {
        Self { literal_recall: true, literal_idcg: true }
    }
}

fn discount(pos: usize) -> f64 {
    1.0 / ((pos + 2) as f64).log2()
}

fn holdout_set(holdout: &[u32]) -> Result<HashSet<u32>> {
    if holdout.is_empty() {
        return Err(Error::Evaluation("empty holdout".into()));
    }
    Ok(holdout.iter().copied().collect())
}

pub fn ndcg_at_k(ranked: &[u32], holdout: &[u32], k: usize, mode: MetricMode) -> Result<f64> {
    let h = holdout_set(holdout)?;
    Ok(ndcg_with(ranked, &h, k, mode))
}

pub fn recall_at_k(ranked: &[u32], holdout: &[u32], k: usize, mode: MetricMode) -> Result<f64> {
    let h = holdout_set(holdout)?;
    Ok(recall_with(ranked, &h, k, mode))
}

fn ndcg_with(ranked: &[u32], h: &HashSet<u32>, k: usize, mode: MetricMode) -> f64 {
    let dcg: f64 = ranked.iter().take(k).enumerate().filter(|(_, i)| h.contains(i)).map(|(p, _)| discount(p)).sum();
    let ideal_len = if mode.literal_idcg { h.len() } else { h.len().min(k) };
    let idcg: f64 = (0..ideal_len).map(discount).sum();
    dcg / idcg
}

fn recall_with(ranked: &[u32], h: &HashSet<u32>, k: usize, mode: MetricMode) -> f64 {
    let hits = ranked.iter().take(k).filter(|i| h.contains(i)).count();
    let denom = if mode.literal_recall { h.len() } else { h.len().min(k) };
    hits as f64 / denom as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
    pub metric: MetricMode,
    /// Remove the fold-in items from each ranking.
    pub mask_inputs: bool,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
}

impl EvalConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            ratio: DEFAULT_FOLDIN_RATIO,
            seed,
            metric: MetricMode::default(),
            mask_inputs: true,
            threads: 0,
        }
    }

    pub fn strict_literal(mut self, on: bool) -> Self {
        self.metric = if on { MetricMode::strict_literal() } else { MetricMode::default() };
        self.mask_inputs = !on;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::Config(format!("cutoffs must be non-empty and >= 1, got {:?}", self.cutoffs)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!("fold-in ratio must lie in (0, 1), got {}", self.ratio)));
        }
        Ok(())
    }
}

/// One evaluated test user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldInCase {
    pub user: usize,
    pub input: Vec<u32>,
    pub holdout: Vec<u32>,
}

/// Fold-in splits for every test user with at least two items; returns the
/// cases and the number of skipped users. Each user's split is seeded from
/// its raw id so the result does not depend on row order.
pub fn fold_in_cases(test: &InteractionMatrix, ratio: f64, seed: u64) -> Result<(Vec<FoldInCase>, usize)> {
    let mut cases = Vec::with_capacity(test.n_users());
    let mut skipped = 0;
    for (user, row) in test.rows().iter().enumerate() {
        if row.len() < 2 {
            skipped += 1;
            continue;
        }
        let pair = foldin_split(row, ratio, derive_seed(seed, &[test.user_ids()[user]]))?;
        cases.push(FoldInCase { user, input: pair.input_items, holdout: pair.holdout_items });
    }
    Ok((cases, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cutoffs: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
    pub n_users: usize,
    pub n_skipped: usize,
    pub seed: u64,
    pub metric: MetricMode,
    pub mask_inputs: bool,
    /// Free-form settings echoed into the report.
    pub echo: Vec<(String, String)>,
}

impl EvalReport {
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.ndcg[i])
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.recall[i])
    }

    /// NDCG@100, Recall@20 and Recall@50 side by side, as far as evaluated.
    pub fn table(&self) -> String {
        let cols: Vec<(String, f64)> = [("NDCG", 100), ("Recall", 20), ("Recall", 50)]
            .into_iter()
            .filter_map(|(m, k)| {
                let v = if m == "NDCG" { self.ndcg_at(k) } else { self.recall_at(k) };
                v.map(|v| (format!("{m}@{k}"), v))
            })
            .collect();
        let mut s = String::new();
        for (name, _) in &cols {
            let _ = write!(s, "{name:>10}");
        }
        s.push('\n');
        for (_, v) in &cols {
            let _ = write!(s, "{v:>10.4}");
        }
        s.push('\n');
        s
    }

    /// `metric<TAB>k<TAB>value` lines for every cutoff.
    pub fn tab_lines(&self) -> String {
        let mut s = String::new();
        for (i, k) in self.cutoffs.iter().enumerate() {
            let _ = writeln!(s, "ndcg\t{k}\t{}", self.ndcg[i]);
        }
        for (i, k) in self.cutoffs.iter().enumerate() {
            let _ = writeln!(s, "recall\t{k}\t{}", self.recall[i]);
        }
        s
    }

    /// Full report: echo, table and machine-readable lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# users evaluated: {}, skipped: {}, seed: {}", self.n_users, self.n_skipped, self.seed);
        let _ = writeln!(
            s,
            "# recall denominator: {}, idcg bound: {}, input masking: {}",
            if self.metric.literal_recall { "|holdout|" } else { "min(k,|holdout|)" },
            if self.metric.literal_idcg { "|holdout|" } else { "min(k,|holdout|)" },
            if self.mask_inputs { "on" } else { "off" },
        );
        for (k, v) in &self.echo {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str(&self.table());
        s.push_str(&self.tab_lines());
        s
    }
}

/// `(ndcg, recall)` of one user at every cutoff.
type UserMetrics = Vec<(f64, f64)>;

/// Runs the fold-in protocol. `score` receives batches of cases and returns
/// one row of `n_items` scores per case.
pub fn evaluate<F>(score: F, n_items: usize, test: &InteractionMatrix, cfg: &EvalConfig) -> Result<EvalReport>
where
    F: Fn(&[&FoldInCase]) -> Array2<f64> + Sync,
{
    cfg.validate()?;
    if test.n_items() != n_items {
        return Err(dim_err("test item count vs model", n_items, test.n_items()));
    }
    let (cases, n_skipped) = fold_in_cases(test, cfg.ratio, cfg.seed)?;
    if cases.is_empty() {
        return Err(Error::Evaluation(format!("no evaluable users ({n_skipped} skipped)")));
    }
    let max_k = *cfg.cutoffs.iter().max().expect("validated");
    let chunks: Vec<&[FoldInCase]> = cases.chunks(SCORE_BATCH).collect();
    let work = |chunk: &&[FoldInCase]| -> Result<Vec<Vec<(f64, f64)>>> {
        let refs: Vec<&FoldInCase> = chunk.iter().collect();
        let scores = score(&refs);
        if scores.dim() != (refs.len(), n_items) {
            return Err(Error::Evaluation(format!(
                "scorer returned {:?}, expected ({}, {n_items})",
                scores.dim(),
                refs.len()
            )));
        }
        refs.iter()
            .zip(scores.rows())
            .map(|(case, row)| {
                let mask: &[u32] = if cfg.mask_inputs { &case.input } else { &[] };
                let ranked = rank_items(row, mask, max_k)?;
                let h = holdout_set(&case.holdout)?;
                Ok(cfg
                    .cutoffs
                    .iter()
                    .map(|&k| {
                        (ndcg_with(&ranked.items, &h, k, cfg.metric), recall_with(&ranked.items, &h, k, cfg.metric))
                    })
                    .collect())
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Evaluation(format!("thread pool: {e}")))?;
    let per_chunk: Vec<Result<Vec<UserMetrics>>> = pool.install(|| chunks.par_iter().map(work).collect());

    let mut ndcg = vec![0.0; cfg.cutoffs.len()];
    let mut recall = vec![0.0; cfg.cutoffs.len()];
    for chunk in per_chunk {
        for user in chunk? {
            for (c, (n, r)) in user.into_iter().enumerate() {
                ndcg[c] += n;
                recall[c] += r;
            }
        }
    }
    let n = cases.len() as f64;
    Ok(EvalReport {
        cutoffs: cfg.cutoffs.clone(),
        ndcg: ndcg.into_iter().map(|v| v / n).collect(),
        recall: recall.into_iter().map(|v| v / n).collect(),
        n_users: cases.len(),
        n_skipped,
        seed: cfg.seed,
        metric: cfg.metric,
        mask_inputs: cfg.mask_inputs,
        echo: Vec::new(),
    })
}

/// [`evaluate`] for a model that only sees the fold-in input.
pub fn evaluate_model<S: Scorer + ?Sized>(model: &S, test: &InteractionMatrix, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate(
        |cases| {
            let rows: Vec<&[u32]> = cases.iter().map(|c| c.input.as_slice()).collect();
            model.score_rows(&rows)
        },
        model.n_items(),
        test,
        cfg,
    )
}

/// Writes the model's response to every one-hot input, one row per item.
pub fn sensitivity_export<S: Scorer + ?Sized, W: Write>(model: &S, out: &mut W) -> Result<()> {
    let n = model.n_items();
    writeln!(out, "VASPSENS v1 I={n}")?;
    let ids: Vec<[u32; 1]> = (0..n as u32).map(|i| [i]).collect();
    let mut line = String::new();
    for block in ids.chunks(SCORE_BATCH) {
        let rows: Vec<&[u32]> = block.iter().map(|r| r.as_slice()).collect();
        for row in model.score_rows(&rows).rows() {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{v}");
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}
