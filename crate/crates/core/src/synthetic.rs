//! Synthetic interaction data for tests and desk-scale experiments.

use std::io::Write;

use rand::seq::index::sample_weighted;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::dataio::{InteractionMatrix, RatingRecord};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Users who each draw mostly from one planted item block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    /// Chance of taking each item of the user's own block.
    pub p_in: f64,
    /// Chance of taking each item outside it.
    pub p_out: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self { n_users: 2000, n_items: 200, n_blocks: 10, p_in: 0.4, p_out: 0.01 }
    }
}

pub fn planted_blocks(cfg: &BlockConfig, seed: u64) -> Result<InteractionMatrix> {
    if cfg.n_blocks == 0 || cfg.n_items < 2 * cfg.n_blocks {
        return Err(Error::Argument(format!("{} items cannot hold {} blocks", cfg.n_items, cfg.n_blocks)));
    }
    let mut rng = rng_from_seed(seed);
    let block_of = |i: usize| i * cfg.n_blocks / cfg.n_items;
    let rows = (0..cfg.n_users)
        .map(|_| {
            let b = rng.random_range(0..cfg.n_blocks);
            loop {
                let row: Vec<u32> = (0..cfg.n_items)
                    .filter(|&i| rng.random_bool(if block_of(i) == b { cfg.p_in } else { cfg.p_out }))
                    .map(|i| i as u32)
                    .collect();
                if row.len() >= 2 {
                    return row;
                }
            }
        })
        .collect();
    InteractionMatrix::from_rows(rows, cfg.n_items)
}

/// Explicit ratings with skewed item popularity and genre-driven taste.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingsConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_genres: usize,
    /// Zipf exponent of item popularity.
    pub popularity_exponent: f64,
    /// Median number of ratings per user on top of `min_ratings`.
    pub median_extra_ratings: f64,
    pub min_ratings: usize,
    /// Sampling boost for items in a user's favourite genres.
    pub taste_boost: f64,
}

impl Default for RatingsConfig {
    fn default() -> Self {
        Self {
            n_users: 5000,
            n_items: 1500,
            n_genres: 20,
            popularity_exponent: 0.9,
            median_extra_ratings: 40.0,
            min_ratings: 20,
            taste_boost: 12.0,
        }
    }
}

/// MovieLens-shaped ratings: half-star steps in [0.5, 5], raw ids starting at
/// 1, and timestamps.
pub fn movielens_like(cfg: &RatingsConfig, seed: u64) -> Result<Vec<RatingRecord>> {
    if cfg.n_genres == 0 || cfg.n_items < cfg.n_genres || cfg.min_ratings + 1 > cfg.n_items {
        return Err(Error::Argument("ratings config leaves too few items".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut rank: Vec<usize> = (0..cfg.n_items).collect();
    rank.shuffle(&mut rng);
    let popularity: Vec<f64> = rank.iter().map(|&r| (r as f64 + 1.0).powf(-cfg.popularity_exponent)).collect();
    let genre: Vec<usize> = (0..cfg.n_items).map(|_| rng.random_range(0..cfg.n_genres)).collect();
    let quality = Normal::new(0.0, 0.5).expect("valid");
    let item_quality: Vec<f64> = (0..cfg.n_items).map(|_| quality.sample(&mut rng)).collect();
    let extra = LogNormal::new(cfg.median_extra_ratings.max(1.0).ln(), 0.8).expect("valid");
    let user_bias = Normal::new(0.0, 0.3).expect("valid");
    let noise = Normal::new(0.0, 0.6).expect("valid");

    let mut records = Vec::new();
    for u in 0..cfg.n_users {
        let n_fav = rng.random_range(1..=3usize.min(cfg.n_genres));
        let favourites: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.n_genres, n_fav).into_vec();
        let count = (cfg.min_ratings + extra.sample(&mut rng) as usize).min(cfg.n_items);
        let bias = user_bias.sample(&mut rng);
        let weight = |i: usize| popularity[i] * if favourites.contains(&genre[i]) { cfg.taste_boost } else { 1.0 };
        let items = sample_weighted(&mut rng, cfg.n_items, weight, count)
            .map_err(|e| Error::Argument(format!("weighted sampling: {e}")))?;
        let mut ts = 1_000_000_000 + rng.random_range(0..400_000_000i64);
        for i in items.iter() {
            let liked = if favourites.contains(&genre[i]) { 4.0 } else { 3.0 };
            let raw = liked + item_quality[i] + bias + noise.sample(&mut rng);
            let rating = ((raw * 2.0).round() / 2.0).clamp(0.5, 5.0);
            ts += rng.random_range(1..5000);
            records.push(RatingRecord { user_id: u as u64 + 1, item_id: i as u64 + 1, rating, timestamp: Some(ts) });
        }
    }
    Ok(records)
}

pub fn write_movielens_csv<W: Write>(out: &mut W, records: &[RatingRecord]) -> Result<()> {
    writeln!(out, "userId,movieId,rating,timestamp")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.user_id, r.item_id, r.rating, r.timestamp.unwrap_or(0))?;
    }
    Ok(())
}
