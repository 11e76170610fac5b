//! Rating ingestion, implicit-feedback conversion, filtering and the random
//! splits used for holdout, fold-in evaluation and training augmentation.

mod parse;
mod storage;

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub use parse::{parse_ratings, RatingFormat};
pub use storage::{read_dataset, read_interactions, read_map, write_dataset, write_interactions, Dataset};

/// One explicit rating as found in the raw files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingRecord {
    pub user_id: u64,
    pub item_id: u64,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Sparse binary user x item matrix stored as sorted per-user item lists.
///
/// Dense user and item indices map back to raw dataset ids through
/// `user_ids` and `item_ids`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    rows: Vec<Vec<u32>>,
    n_items: usize,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

impl InteractionMatrix {
    /// Builds a matrix, sorting and de-duplicating every row.
    pub fn new(mut rows: Vec<Vec<u32>>, user_ids: Vec<u64>, item_ids: Vec<u64>) -> Result<Self> {
        if rows.len() != user_ids.len() {
            return Err(Error::Dimension(format!("{} rows but {} user ids", rows.len(), user_ids.len())));
        }
        let n_items = item_ids.len();
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= n_items {
                    return Err(Error::Dimension(format!("item index {last} out of range for {n_items} items")));
                }
            }
        }
        Ok(Self { rows, n_items, user_ids, item_ids })
    }

    /// Matrix with synthetic ids `0..n`; convenient for tests and generated data.
    pub fn from_rows(rows: Vec<Vec<u32>>, n_items: usize) -> Result<Self> {
        let user_ids = (0..rows.len() as u64).collect();
        let item_ids = (0..n_items as u64).collect();
        Self::new(rows, user_ids, item_ids)
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn n_interactions(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Raw item id -> dense column index.
    pub fn item_index(&self) -> HashMap<u64, u32> {
        self.item_ids.iter().enumerate().map(|(i, &raw)| (raw, i as u32)).collect()
    }

    /// Raw user id -> dense row index.
    pub fn user_index(&self) -> HashMap<u64, usize> {
        self.user_ids.iter().enumerate().map(|(u, &raw)| (raw, u)).collect()
    }

    /// Per-item interaction counts (column sums).
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_items];
        for row in &self.rows {
            for &i in row {
                counts[i as usize] += 1;
            }
        }
        counts
    }

    pub fn density(&self) -> f64 {
        if self.rows.is_empty() || self.n_items == 0 {
            return 0.0;
        }
        self.n_interactions() as f64 / (self.rows.len() as f64 * self.n_items as f64)
    }

    /// Keeps the listed users, in the given order, on the same item space.
    pub fn select_users(&self, users: &[usize]) -> Self {
        Self {
            rows: users.iter().map(|&u| self.rows[u].clone()).collect(),
            n_items: self.n_items,
            user_ids: users.iter().map(|&u| self.user_ids[u]).collect(),
            item_ids: self.item_ids.clone(),
        }
    }
}

/// Train/test partition of the users of one matrix over a shared item space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub train: InteractionMatrix,
    pub test: InteractionMatrix,
    pub seed: u64,
}

/// A test user's history split into model input and held-out targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldInPair {
    pub input_items: Vec<u32>,
    pub holdout_items: Vec<u32>,
}

/// The two halves of a training row used to predict one from the other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPair {
    pub x_a: Vec<u32>,
    pub x_b: Vec<u32>,
}

/// Converts explicit ratings into a binary matrix, keeping ratings at or above
/// `threshold`. Users and items get dense indices in first-seen order among
/// the surviving records.
pub fn to_implicit(records: &[RatingRecord], threshold: f64) -> Result<InteractionMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no rating records".into()));
    }
    let mut users: HashMap<u64, usize> = HashMap::new();
    let mut items: HashMap<u64, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for rec in records.iter().filter(|r| r.rating >= threshold) {
        let u = *users.entry(rec.user_id).or_insert_with(|| {
            user_ids.push(rec.user_id);
            rows.push(Vec::new());
            user_ids.len() - 1
        });
        let i = *items.entry(rec.item_id).or_insert_with(|| {
            item_ids.push(rec.item_id);
            (item_ids.len() - 1) as u32
        });
        rows[u].push(i);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("no ratings >= {threshold}")));
    }
    InteractionMatrix::new(rows, user_ids, item_ids)
}

/// Keeps users with at least `min_count` interactions, then drops item
/// columns left without any interaction (remaining items keep their order).
pub fn filter_min_interactions(matrix: &InteractionMatrix, min_count: usize) -> Result<InteractionMatrix> {
    let kept: Vec<usize> = (0..matrix.n_users()).filter(|&u| matrix.row(u).len() >= min_count).collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("no user has >= {min_count} interactions")));
    }
    let mut used = vec![false; matrix.n_items()];
    for &u in &kept {
        for &i in matrix.row(u) {
            used[i as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; matrix.n_items()];
    let mut item_ids = Vec::new();
    for (i, _) in used.iter().enumerate().filter(|(_, &k)| k) {
        remap[i] = item_ids.len() as u32;
        item_ids.push(matrix.item_ids[i]);
    }
    let rows = kept.iter().map(|&u| matrix.row(u).iter().map(|&i| remap[i as usize]).collect()).collect();
    let user_ids = kept.iter().map(|&u| matrix.user_ids[u]).collect();
    InteractionMatrix::new(rows, user_ids, item_ids)
}

/// Draws `n_test` users uniformly without replacement as the test set.
/// Both halves keep the original relative user order.
pub fn split_users(matrix: &InteractionMatrix, n_test: usize, seed: u64) -> Result<HoldoutSplit> {
    let n = matrix.n_users();
    if n_test == 0 || n_test >= n {
        return Err(Error::Argument(format!("n_test must satisfy 0 < n_test < n_users ({n}), got {n_test}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut is_test = vec![false; n];
    for u in index::sample(&mut rng, n, n_test) {
        is_test[u] = true;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&u| is_test[u]);
    Ok(HoldoutSplit { train: matrix.select_users(&train), test: matrix.select_users(&test), seed })
}

/// Number of fold-in input items for a row of `n` items.
///
/// `f64::round` rounds half away from zero, so a tie such as 0.5 * 5 = 2.5
/// goes to 3.
pub fn foldin_input_len(n: usize, ratio: f64) -> usize {
    let target = (ratio * n as f64).round() as usize;
    target.min(n.saturating_sub(1)).max(1)
}

/// Samples `ratio` of a test row as model input; the rest is the holdout.
pub fn foldin_split(row: &[u32], ratio: f64, seed: u64) -> Result<FoldInPair> {
    if row.len() < 2 {
        return Err(Error::Argument(format!("fold-in needs >= 2 items, row has {}", row.len())));
    }
    let mut items = row.to_vec();
    items.shuffle(&mut rng_from_seed(seed));
    let mut holdout_items = items.split_off(foldin_input_len(row.len(), ratio));
    let mut input_items = items;
    input_items.sort_unstable();
    holdout_items.sort_unstable();
    Ok(FoldInPair { input_items, holdout_items })
}

/// Randomly splits a training row into two halves whose sizes differ by at
/// most one. An odd leftover item goes to either side with equal chance.
pub fn augment_split(row: &[u32], seed: u64) -> Result<AugmentedPair> {
    if row.len() < 2 {
        return Err(Error::Argument(format!("augmentation needs >= 2 items, row has {}", row.len())));
    }
    let mut rng = rng_from_seed(seed);
    let mut items = row.to_vec();
    items.shuffle(&mut rng);
    let mut len_a = items.len() / 2;
    if items.len() % 2 == 1 && rng.random_bool(0.5) {
        len_a += 1;
    }
    let mut x_b = items.split_off(len_a);
    let mut x_a = items;
    x_a.sort_unstable();
    x_b.sort_unstable();
    Ok(AugmentedPair { x_a, x_b })
}
