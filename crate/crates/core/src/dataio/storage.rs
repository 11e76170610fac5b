//! Prepared dataset directory: `items.map`, `users.map`, `train.bin`,
//! `test.bin` and a small `dataset.info` text file.
//!
//! Binary layout (little-endian): magic `VASPDATA`, u32 version, u32 n_users,
//! u32 n_items, then for every user a u32 count followed by that many u32
//! item indices. `users.map` numbers train users `0..n_train` and test users
//! `n_train..n_train + n_test`, in file order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{HoldoutSplit, InteractionMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VASPDATA";
const VERSION: u32 = 1;

/// A prepared dataset as read back from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: HoldoutSplit,
    /// Free-form provenance recorded at preparation time.
    pub info: Vec<(String, String)>,
}

pub fn write_interactions<W: Write>(out: &mut W, m: &InteractionMatrix) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(m.n_users() as u32).to_le_bytes())?;
    out.write_all(&(m.n_items() as u32).to_le_bytes())?;
    for row in m.rows() {
        out.write_all(&(row.len() as u32).to_le_bytes())?;
        for &i in row {
            out.write_all(&i.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated interaction file: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads rows only; ids are attached by the caller.
pub fn read_interactions<R: Read>(input: &mut R) -> Result<(Vec<Vec<u32>>, usize)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|e| Error::Format(format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, expected VASPDATA".into()));
    }
    let version = read_u32(input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_users = read_u32(input)? as usize;
    let n_items = read_u32(input)? as usize;
    let mut rows = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let count = read_u32(input)? as usize;
        let row = (0..count).map(|_| read_u32(input)).collect::<Result<Vec<u32>>>()?;
        if row.iter().any(|&i| i as usize >= n_items) || row.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("row items unsorted or out of range".into()));
        }
        rows.push(row);
    }
    Ok((rows, n_items))
}

fn write_map(path: &Path, ids: impl Iterator<Item = u64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (dense, raw) in ids.enumerate() {
        writeln!(w, "{raw}\t{dense}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `raw_id<TAB>dense_index` map, such as `items.map`.
pub fn read_map(path: &Path) -> Result<Vec<u64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut ids = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = || Error::Format(format!("{}:{}: expected `raw_id<TAB>dense_index`", path.display(), n + 1));
        let (raw, dense) = line.split_once('\t').ok_or_else(bad)?;
        let raw: u64 = raw.parse().map_err(|_| bad())?;
        let dense: usize = dense.parse().map_err(|_| bad())?;
        if dense != ids.len() {
            return Err(bad());
        }
        ids.push(raw);
    }
    Ok(ids)
}

/// Writes a prepared dataset directory, creating it if needed.
pub fn write_dataset(dir: &Path, split: &HoldoutSplit, info: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_map(&dir.join("items.map"), split.train.item_ids().iter().copied())?;
    write_map(&dir.join("users.map"), split.train.user_ids().iter().chain(split.test.user_ids()).copied())?;
    for (name, m) in [("train.bin", &split.train), ("test.bin", &split.test)] {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        write_interactions(&mut w, m)?;
        w.flush()?;
    }
    let mut w = BufWriter::new(File::create(dir.join("dataset.info"))?);
    writeln!(w, "seed = {}", split.seed)?;
    for (k, v) in info {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let item_ids = read_map(&dir.join("items.map"))?;
    let user_ids = read_map(&dir.join("users.map"))?;
    let load = |name: &str| -> Result<(Vec<Vec<u32>>, usize)> {
        let mut r = BufReader::new(File::open(dir.join(name))?);
        read_interactions(&mut r)
    };
    let (train_rows, train_items) = load("train.bin")?;
    let (test_rows, test_items) = load("test.bin")?;
    if train_items != item_ids.len() || test_items != item_ids.len() {
        return Err(Error::Format(format!(
            "item count mismatch: items.map has {}, train {}, test {}",
            item_ids.len(),
            train_items,
            test_items
        )));
    }
    if train_rows.len() + test_rows.len() != user_ids.len() {
        return Err(Error::Format("users.map does not cover train + test users".into()));
    }
    let n_train = train_rows.len();
    let train = InteractionMatrix::new(train_rows, user_ids[..n_train].to_vec(), item_ids.clone())?;
    let test = InteractionMatrix::new(test_rows, user_ids[n_train..].to_vec(), item_ids)?;

    let mut info = Vec::new();
    let mut seed = 0;
    if let Ok(text) = fs::read_to_string(dir.join("dataset.info")) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                let (k, v) = (k.trim().to_string(), v.trim().to_string());
                if k == "seed" {
                    seed = v.parse().unwrap_or(0);
                } else {
                    info.push((k, v));
                }
            }
        }
    }
    Ok(Dataset { split: HoldoutSplit { train, test, seed }, info })
}
