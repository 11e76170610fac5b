//! Model checkpoints.
//!
//! Layout (little-endian): magic `VASPCKPT`, u32 version, kind tag string,
//! u32 count of key/value string pairs (model shape first, then the caller's
//! echo under `echo.`), u32 tensor count, then per tensor its name string,
//! u8 rank, u32 dims and f32 values in row-major order. Strings are a u32
//! byte length followed by UTF-8. Optimizer moments are stored as tensors
//! named `opt/<optimizer>/<param>#m` and `#v`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ease::{NeaseModel, OutputMode};
use crate::error::{Error, Result};
use crate::flvae::{FlvaeConfig, FlvaeModel};
use crate::nncore::{Adam, FocalConfig, Parameterized};
use crate::vasp::VaspModel;

const MAGIC: &[u8; 8] = b"VASPCKPT";
const VERSION: u32 = 1;
const ECHO: &str = "echo.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Nease,
    Flvae,
    Vasp,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Nease => "NEASE",
            Self::Flvae => "FLVAE",
            Self::Vasp => "VASP",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "NEASE" => Ok(Self::Nease),
            "FLVAE" => Ok(Self::Flvae),
            "VASP" => Ok(Self::Vasp),
            other => Err(Error::Checkpoint(format!("unknown model kind tag `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Nease(NeaseModel),
    Flvae(FlvaeModel),
    Vasp(VaspModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Nease(_) => ModelKind::Nease,
            Self::Flvae(_) => ModelKind::Flvae,
            Self::Vasp(_) => ModelKind::Vasp,
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            Self::Nease(m) => m.n_items(),
            Self::Flvae(m) => m.n_items(),
            Self::Vasp(m) => m.n_items(),
        }
    }

    pub fn as_scorer(&self) -> &dyn crate::eval::Scorer {
        match self {
            Self::Nease(m) => m,
            Self::Flvae(m) => m,
            Self::Vasp(m) => m,
        }
    }

    fn params(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        match self {
            Self::Nease(m) => m.params(),
            Self::Flvae(m) => m.params(),
            Self::Vasp(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        match self {
            Self::Nease(m) => m.params_mut(),
            Self::Flvae(m) => m.params_mut(),
            Self::Vasp(m) => m.params_mut(),
        }
    }

    pub fn expect(self, wanted: ModelKind) -> Result<Self> {
        if self.kind() != wanted {
            return Err(kind_mismatch(self.kind(), wanted));
        }
        Ok(self)
    }

    pub fn into_nease(self) -> Result<NeaseModel> {
        match self {
            Self::Nease(m) => Ok(m),
            other => Err(kind_mismatch(other.kind(), ModelKind::Nease)),
        }
    }

    pub fn into_flvae(self) -> Result<FlvaeModel> {
        match self {
            Self::Flvae(m) => Ok(m),
            other => Err(kind_mismatch(other.kind(), ModelKind::Flvae)),
        }
    }

    pub fn into_vasp(self) -> Result<VaspModel> {
        match self {
            Self::Vasp(m) => Ok(m),
            other => Err(kind_mismatch(other.kind(), ModelKind::Vasp)),
        }
    }

    /// Rounds every parameter to the nearest f32 so a save/load round trip
    /// reproduces it exactly.
    pub fn round_to_f32(&mut self) {
        for (_, mut p) in self.params_mut() {
            p.mapv_inplace(|v| v as f32 as f64);
        }
        if let Self::Nease(m) = self {
            m.project();
        }
        if let Self::Vasp(m) = self {
            m.shallow.project();
        }
    }
}

fn kind_mismatch(found: ModelKind, wanted: ModelKind) -> Error {
    Error::Checkpoint(format!("checkpoint holds a {found} model but a {wanted} model is required"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    /// Free-form settings (for example the training config) kept alongside.
    pub echo: Vec<(String, String)>,
    pub optimizers: Vec<(String, Adam)>,
}

impl Checkpoint {
    pub fn new(model: AnyModel) -> Self {
        Self { model, echo: Vec::new(), optimizers: Vec::new() }
    }
}

fn flvae_shape(prefix: &str, m: &FlvaeModel, out: &mut Vec<(String, String)>) {
    let c = &m.cfg;
    for (k, v) in [
        ("latent_dim", c.latent_dim.to_string()),
        ("hidden_dim", c.hidden_dim.to_string()),
        ("encoder_depth", c.encoder_depth.to_string()),
        ("decoder_depth", c.decoder_depth.to_string()),
        ("norm", c.norm.as_str().to_string()),
        ("focal_alpha", c.focal.alpha.to_string()),
        ("focal_gamma", c.focal.gamma.to_string()),
        ("alpha_symmetric", c.focal.alpha_symmetric.to_string()),
        ("kl_weight", c.kl_weight.to_string()),
    ] {
        out.push((format!("{prefix}{k}"), v));
    }
}

fn shape_meta(model: &AnyModel) -> Vec<(String, String)> {
    let mut out = vec![("n_items".to_string(), model.n_items().to_string())];
    match model {
        AnyModel::Nease(m) => out.push(("output".into(), m.output.as_str().into())),
        AnyModel::Flvae(m) => flvae_shape("", m, &mut out),
        AnyModel::Vasp(m) => flvae_shape("deep.", &m.deep, &mut out),
    }
    out
}

struct Meta(HashMap<String, String>);

impl Meta {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.0.get(key).ok_or_else(|| Error::Checkpoint(format!("missing header key `{key}`")))?;
        raw.parse().map_err(|_| Error::Checkpoint(format!("bad value `{raw}` for header key `{key}`")))
    }

    fn flvae_cfg(&self, prefix: &str) -> Result<FlvaeConfig> {
        let cfg = FlvaeConfig {
            latent_dim: self.get(&format!("{prefix}latent_dim"))?,
            hidden_dim: self.get(&format!("{prefix}hidden_dim"))?,
            encoder_depth: self.get(&format!("{prefix}encoder_depth"))?,
            decoder_depth: self.get(&format!("{prefix}decoder_depth"))?,
            norm: self.get(&format!("{prefix}norm"))?,
            focal: FocalConfig {
                alpha: self.get(&format!("{prefix}focal_alpha"))?,
                gamma: self.get(&format!("{prefix}focal_gamma"))?,
                alpha_symmetric: self.get(&format!("{prefix}alpha_symmetric"))?,
            },
            kl_weight: self.get(&format!("{prefix}kl_weight"))?,
        };
        cfg.validate().map_err(|e| Error::Checkpoint(format!("stored FLVAE config invalid: {e}")))?;
        Ok(cfg)
    }
}

/// Builds a zero-valued skeleton of the right shape for the stored model.
fn skeleton(kind: ModelKind, meta: &Meta) -> Result<AnyModel> {
    let n_items: usize = meta.get("n_items")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(match kind {
        ModelKind::Nease => AnyModel::Nease(NeaseModel::zeros(n_items, meta.get::<OutputMode>("output")?)),
        ModelKind::Flvae => AnyModel::Flvae(FlvaeModel::new(n_items, meta.flvae_cfg("")?, &mut rng)?),
        ModelKind::Vasp => AnyModel::Vasp(VaspModel::new(
            FlvaeModel::new(n_items, meta.flvae_cfg("deep.")?, &mut rng)?,
            NeaseModel::zeros(n_items, OutputMode::Sigmoid),
        )?),
    })
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_tensor<W: Write>(w: &mut W, name: &str, t: &ndarray::ArrayViewD<f64>) -> Result<()> {
    put_str(w, name)?;
    w.write_all(&[t.ndim() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_str(w, ckpt.model.kind().tag())?;

    let mut meta = shape_meta(&ckpt.model);
    for (name, opt) in &ckpt.optimizers {
        meta.push((format!("opt.{name}.steps"), opt.steps().to_string()));
    }
    meta.extend(ckpt.echo.iter().map(|(k, v)| (format!("{ECHO}{k}"), v.clone())));
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for (k, v) in &meta {
        put_str(w, k)?;
        put_str(w, v)?;
    }

    let params = ckpt.model.params();
    let n_opt: usize = ckpt.optimizers.iter().map(|(_, o)| 2 * o.state().count()).sum();
    w.write_all(&((params.len() + n_opt) as u32).to_le_bytes())?;
    for (name, t) in &params {
        put_tensor(w, name, t)?;
    }
    for (opt_name, opt) in &ckpt.optimizers {
        for (param, m, v) in opt.state() {
            put_tensor(w, &format!("opt/{opt_name}/{param}#m"), &m.view())?;
            put_tensor(w, &format!("opt/{opt_name}/{param}#v"), &v.view())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(Error::Checkpoint(format!("implausible string length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        String::from_utf8(buf).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
    }

    fn tensor(&mut self) -> Result<(String, ArrayD<f64>)> {
        let name = self.string()?;
        let [rank] = self.bytes::<1>()?;
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len =
            len.filter(|&l| l <= 1 << 32).ok_or_else(|| Error::Checkpoint(format!("implausible shape {dims:?}")))?;
        let mut raw = vec![0u8; len * 4];
        self.inner.read_exact(&mut raw).map_err(|e| Error::Checkpoint(format!("truncated tensor `{name}`: {e}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let t = ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length matches shape");
        Ok((name, t))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let mut r = Reader { inner: input };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic, expected VASPCKPT".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let kind = ModelKind::from_tag(&r.string()?)?;
    let n_meta = r.u32()?;
    let mut pairs = Vec::new();
    for _ in 0..n_meta {
        pairs.push((r.string()?, r.string()?));
    }
    let meta = Meta(pairs.iter().cloned().collect());
    let mut model = skeleton(kind, &meta)?;

    let n_tensors = r.u32()?;
    let mut tensors = IndexMap::new();
    for _ in 0..n_tensors {
        let (name, t) = r.tensor()?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    for (name, mut slot) in model.params_mut() {
        let t = tensors.shift_remove(&name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        slot.assign(&t);
    }
    match &mut model {
        AnyModel::Nease(m) => m.project(),
        AnyModel::Vasp(m) => m.shallow.project(),
        AnyModel::Flvae(_) => {}
    }

    let mut optimizers = Vec::new();
    for (key, steps) in &pairs {
        let Some(opt_name) = key.strip_prefix("opt.").and_then(|k| k.strip_suffix(".steps")) else {
            continue;
        };
        let steps: u64 = steps.parse().map_err(|_| Error::Checkpoint(format!("bad step count for `{opt_name}`")))?;
        let prefix = format!("opt/{opt_name}/");
        let names: Vec<String> = tensors
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix).and_then(|k| k.strip_suffix("#m")).map(str::to_string))
            .collect();
        let mut moments = IndexMap::new();
        for param in names {
            let m = tensors.shift_remove(&format!("{prefix}{param}#m")).expect("listed above");
            let v = tensors
                .shift_remove(&format!("{prefix}{param}#v"))
                .ok_or_else(|| Error::Checkpoint(format!("missing second moment for `{param}`")))?;
            moments.insert(param, (m, v));
        }
        optimizers.push((opt_name.to_string(), Adam::from_state(steps, moments)));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    let echo = pairs.into_iter().filter_map(|(k, v)| k.strip_prefix(ECHO).map(|k| (k.to_string(), v))).collect();
    Ok(Checkpoint { model, echo, optimizers })
}

pub fn checkpoint_save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(file))
}
