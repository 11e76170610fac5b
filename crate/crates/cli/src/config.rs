//! Flat `key = value` run configuration.
//!
//! Values come from built-in defaults, then an optional config file, then
//! `--key value` flags, each layer overriding the previous one.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use vasp_core::ease::EaseSolveConfig;
use vasp_core::eval::{EvalConfig, MetricMode};
use vasp_core::flvae::{AutoencoderTrainConfig, FlvaeConfig};
use vasp_core::nncore::FocalConfig;
use vasp_core::train::Schedule;

use crate::error::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
    pub flag: bool,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, default, help, flag: false }
}

const fn flag(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default: Some(default), help, flag: true }
}

pub const KEYS: &[Key] = &[
    key("ratings", None, "raw ratings file for `prepare`"),
    key("format", Some("movielens_csv"), "movielens_csv | netflix_per_movie"),
    key("dataset", None, "prepared dataset directory"),
    key("threshold", Some("4.0"), "minimum rating counted as an interaction"),
    key("min_interactions", Some("5"), "drop users with fewer interactions"),
    key("n_test", Some("10000"), "number of held-out test users"),
    key("model", Some("vasp"), "ease_closed | nease | flvae | vasp"),
    key("loss", Some("focal"), "NEASE loss: mse | cosine | focal"),
    key("regime", Some("joint"), "VASP training: pretrained_ensemble | alternating | joint"),
    key("shallow_init", Some("random"), "pretrained ensemble shallow start: random | closed_form"),
    key("lambda", None, "ridge strength for the closed-form solve"),
    key("l2", Some("0"), "weight decay on W when NEASE trains alone"),
    key("latent_dim", Some("2048"), "latent units"),
    key("hidden_dim", Some("4096"), "hidden units per residual layer"),
    key("encoder_depth", Some("7"), "encoder residual layers"),
    key("decoder_depth", Some("5"), "decoder residual layers"),
    key("norm", Some("auto"), "layer normalization: auto | on | off"),
    key("focal_alpha", Some("0.25"), "focal loss class weight"),
    key("focal_gamma", Some("2.0"), "focal loss focusing exponent"),
    flag("alpha_symmetric", "false", "weight negatives by alpha as well"),
    key("kl_weight", Some("1.0"), "weight of the KL term"),
    key("kl_anneal_epochs", Some("auto"), "linear KL warm-up length; auto = first phase, 0 = off"),
    flag("augment", "true", "split rows into input and target halves while training"),
    key("phases", Some("50@5e-5,20@1e-5,20@1e-6"), "training phases as epochs@rate, comma separated"),
    key("batch_size", Some("1024"), "users per optimizer step"),
    key("seed", None, "base seed; falls back to VASP_SEED, then 0"),
    key("cutoffs", Some("20,50,100"), "evaluation cutoffs"),
    key("foldin_ratio", Some("0.8"), "share of a test user's items used as input"),
    flag("strict_literal", "false", "literal metric and focal readings (recall, IDCG, masking, alpha)"),
    key("threads", Some("0"), "evaluation threads; 0 = all cores"),
    key("checkpoint", None, "model checkpoint path"),
    key("trace", None, "per-epoch loss trace path (default: checkpoint path + .trace)"),
    key("report", None, "write the evaluation report here as well"),
    key("scorer", Some("checkpoint"), "evaluate: checkpoint | popularity | oracle"),
    key("items", None, "recommend: comma-separated raw item ids of the history"),
    key("n", Some("10"), "recommend: list length"),
    key("out", None, "export-similarity output path (default: stdout)"),
];

pub fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: IndexMap<&'static str, String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::usage(msg)
}

impl RunConfig {
    pub fn defaults() -> Self {
        let values = KEYS.iter().filter_map(|k| k.default.map(|d| (k.name, d.to_string()))).collect();
        Self { values }
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<(), CliError> {
        let key = lookup(name).ok_or_else(|| usage(format!("unknown config key `{name}`")))?;
        self.values.insert(key.name, value.trim().to_string());
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| usage(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| usage(format!("{origin}:{}: {}", n + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Fills `seed` from `VASP_SEED` when neither file nor flag set it.
    pub fn seed_fallback(&mut self, env: Option<String>) {
        if !self.values.contains_key("seed") {
            self.values.insert("seed", env.unwrap_or_else(|| "0".into()));
        }
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError> {
        let raw = self.raw(name).ok_or_else(|| usage(format!("missing required setting `{name}`")))?;
        raw.parse().map_err(|_| usage(format!("invalid value `{raw}` for `{name}`")))
    }

    pub fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        self.get::<String>(name).map(PathBuf::from)
    }

    pub fn opt_path(&self, name: &str) -> Option<PathBuf> {
        self.raw(name).map(PathBuf::from)
    }

    pub fn flag(&self, name: &str) -> Result<bool, CliError> {
        self.get(name)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    /// The focal settings after applying `strict_literal`.
    pub fn focal(&self) -> Result<FocalConfig, CliError> {
        let cfg = FocalConfig {
            alpha: self.get("focal_alpha")?,
            gamma: self.get("focal_gamma")?,
            alpha_symmetric: self.flag("alpha_symmetric")? || self.flag("strict_literal")?,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn flvae(&self) -> Result<FlvaeConfig, CliError> {
        let cfg = FlvaeConfig {
            latent_dim: self.get("latent_dim")?,
            hidden_dim: self.get("hidden_dim")?,
            encoder_depth: self.get("encoder_depth")?,
            decoder_depth: self.get("decoder_depth")?,
            norm: self.get::<String>("norm")?.parse().map_err(|e: vasp_core::Error| usage(e.to_string()))?,
            focal: self.focal()?,
            kl_weight: self.get("kl_weight")?,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let phases = Schedule::parse_phases(&self.get::<String>("phases")?).map_err(|e| usage(e.to_string()))?;
        Schedule::new(phases, self.get("batch_size")?).map_err(|e| usage(e.to_string()))
    }

    pub fn autoencoder(&self) -> Result<AutoencoderTrainConfig, CliError> {
        let mut cfg = AutoencoderTrainConfig::new(self.schedule()?);
        match self.get::<String>("kl_anneal_epochs")?.as_str() {
            "auto" => {}
            "0" => cfg.kl_anneal_epochs = None,
            _ => cfg.kl_anneal_epochs = Some(self.get("kl_anneal_epochs")?),
        }
        cfg.augment = self.flag("augment")?;
        Ok(cfg)
    }

    pub fn ease_solve(&self) -> Result<EaseSolveConfig, CliError> {
        let lambda: f64 = self.get("lambda")?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(usage(format!("lambda must be positive, got {lambda}")));
        }
        Ok(EaseSolveConfig { lambda })
    }

    pub fn eval(&self) -> Result<EvalConfig, CliError> {
        let cutoffs = self
            .get::<String>("cutoffs")?
            .split(',')
            .map(|c| c.trim().parse::<usize>().map_err(|_| usage(format!("invalid cutoff `{c}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let strict = self.flag("strict_literal")?;
        Ok(EvalConfig {
            cutoffs,
            ratio: self.get("foldin_ratio")?,
            seed: self.seed()?,
            metric: if strict { MetricMode::strict_literal() } else { MetricMode::default() },
            mask_inputs: !strict,
            threads: self.get("threads")?,
        })
    }

    /// Settings that define a trained model, for the checkpoint echo.
    pub fn echo(&self) -> Vec<(String, String)> {
        const SKIP: &[&str] = &["checkpoint", "trace", "report", "items", "n", "out", "scorer", "threads", "ratings"];
        self.values.iter().filter(|(k, _)| !SKIP.contains(k)).map(|(k, v)| (k.to_string(), v.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_override_in_order() {
        let mut c = RunConfig::defaults();
        c.apply_text("# comment\nlatent_dim = 64  # trailing\n\nbatch_size=16\n", "test").unwrap();
        c.set("batch_size", "32").unwrap();
        assert_eq!(c.get::<usize>("latent_dim").unwrap(), 64);
        assert_eq!(c.get::<usize>("batch_size").unwrap(), 32);
        assert_eq!(c.get::<usize>("hidden_dim").unwrap(), 4096);
    }

    #[test]
    fn bad_lines_name_position() {
        let mut c = RunConfig::defaults();
        let err = c.apply_text("seed = 1\nnonsense\n", "f.cfg").unwrap_err();
        assert!(err.message.contains("f.cfg:2"), "{}", err.message);
        assert!(c.apply_text("colour = red", "f.cfg").is_err());
    }

    #[test]
    fn seed_falls_back_to_env_then_zero() {
        let mut c = RunConfig::defaults();
        c.seed_fallback(Some("17".into()));
        assert_eq!(c.seed().unwrap(), 17);
        let mut c = RunConfig::defaults();
        c.seed_fallback(None);
        assert_eq!(c.seed().unwrap(), 0);
        let mut c = RunConfig::defaults();
        c.set("seed", "3").unwrap();
        c.seed_fallback(Some("17".into()));
        assert_eq!(c.seed().unwrap(), 3);
    }

    #[test]
    fn full_scale_defaults() {
        let c = RunConfig::defaults();
        assert_eq!(c.schedule().unwrap(), Schedule::full_scale());
        assert_eq!(c.flvae().unwrap(), FlvaeConfig::full_scale());
        assert!(c.ease_solve().is_err(), "lambda has no silent default");
    }

    #[test]
    fn strict_literal_touches_only_its_modes() {
        let mut plain = RunConfig::defaults();
        plain.seed_fallback(None);
        let mut strict = plain.clone();
        strict.set("strict_literal", "true").unwrap();
        let (a, b) = (plain.eval().unwrap(), strict.eval().unwrap());
        assert_eq!(b.metric, MetricMode::strict_literal());
        assert!(a.mask_inputs && !b.mask_inputs);
        assert_eq!((a.cutoffs, a.ratio, a.seed), (b.cutoffs, b.ratio, b.seed));
        let (fa, fb) = (plain.flvae().unwrap(), strict.flvae().unwrap());
        assert!(!fa.focal.alpha_symmetric && fb.focal.alpha_symmetric);
        assert_eq!(FlvaeConfig { focal: fa.focal, ..fb }, fa);
        assert_eq!(plain.schedule().unwrap(), strict.schedule().unwrap());
    }
}
