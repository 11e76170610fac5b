//! Writes a MovieLens-style `ratings.csv` with synthetic users.
//!
//! Usage: synth_ratings <out.csv> [n_users] [n_items] [seed]

use std::fs::File;
use std::io::BufWriter;

use vasp_core::synthetic::{movielens_like, write_movielens_csv, RatingsConfig};

fn main() -> vasp_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(out) = args.first() else {
        eprintln!("usage: synth_ratings <out.csv> [n_users] [n_items] [seed]");
        std::process::exit(1);
    };
    let arg = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse()).expect("numeric argument");
    let cfg =
        RatingsConfig { n_users: arg(1, 5000) as usize, n_items: arg(2, 1500) as usize, ..RatingsConfig::default() };
    let records = movielens_like(&cfg, arg(3, 7))?;
    let mut w = BufWriter::new(File::create(out)?);
    write_movielens_csv(&mut w, &records)?;
    eprintln!("wrote {} ratings to {out}", records.len());
    Ok(())
}
