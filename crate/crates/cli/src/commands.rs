use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use vasp_core::checkpoint::{checkpoint_load, checkpoint_save, AnyModel, Checkpoint};
use vasp_core::dataio::{
    filter_min_interactions, parse_ratings, read_dataset, read_map, split_users, to_implicit, write_dataset, Dataset,
    RatingFormat,
};
use vasp_core::ease::{ease_fit_closed_form, nease_train, NeaseModel, NeaseTrainConfig, OutputMode};
use vasp_core::eval::{evaluate, evaluate_model, rank_items, sensitivity_export, FoldInCase, Popularity, Scorer};
use vasp_core::flvae::{flvae_train, FlvaeModel};
use vasp_core::nncore::Loss;
use vasp_core::rng::{derive_seed, rng_from_seed};
use vasp_core::train::TrainReport;
use vasp_core::vasp::{vasp_train, RegimeKind, ShallowInit, TrainRegime, VaspModel};

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_TRAINING};

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg.path("dataset")?;
    read_dataset(&dir).map_err(|e| CliError::data(format!("cannot read dataset {}: {e}", dir.display())))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(PathBuf, Checkpoint), CliError> {
    let path = cfg.path("checkpoint")?;
    let ckpt = checkpoint_load(&path)?;
    Ok((path, ckpt))
}

pub fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let src = cfg.path("ratings")?;
    let format: RatingFormat = cfg.get::<String>("format")?.parse()?;
    let file = File::open(&src).map_err(|e| CliError::data(format!("cannot open {}: {e}", src.display())))?;
    let records = parse_ratings(BufReader::new(file), format)?;
    let implicit = to_implicit(&records, cfg.get("threshold")?)?;
    let filtered = filter_min_interactions(&implicit, cfg.get("min_interactions")?)?;
    let seed = cfg.seed()?;
    let split = split_users(&filtered, cfg.get("n_test")?, seed)?;

    let info: Vec<(String, String)> = [
        ("seed", seed.to_string()),
        ("format", cfg.get::<String>("format")?),
        ("threshold", cfg.get::<String>("threshold")?),
        ("min_interactions", cfg.get::<String>("min_interactions")?),
        ("n_test", cfg.get::<String>("n_test")?),
        ("records", records.len().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let dir = cfg.path("dataset")?;
    write_dataset(&dir, &split, &info)?;

    let n = filtered.n_interactions();
    println!("users         {}", filtered.n_users());
    println!("  train       {}", split.train.n_users());
    println!("  test        {}", split.test.n_users());
    println!("items         {}", filtered.n_items());
    println!("interactions  {n}");
    println!("sparsity      {:.6}", 1.0 - filtered.density());
    println!("written to    {}", dir.display());
    Ok(())
}

fn nease_loss(cfg: &RunConfig) -> Result<(Loss, OutputMode), CliError> {
    match cfg.get::<String>("loss")?.as_str() {
        "mse" => Ok((Loss::Mse, OutputMode::Linear)),
        "cosine" => Ok((Loss::Cosine, OutputMode::Linear)),
        "focal" => Ok((Loss::Focal(cfg.focal()?), OutputMode::Sigmoid)),
        other => Err(CliError::usage(format!("unknown loss `{other}`"))),
    }
}

fn train_model(cfg: &RunConfig, data: &Dataset) -> Result<(AnyModel, Option<TrainReport>), CliError> {
    let train = &data.split.train;
    let n_items = train.n_items();
    let seed = cfg.seed()?;
    let mut rng = rng_from_seed(derive_seed(seed, &[INIT_STREAM]));
    let train_seed = derive_seed(seed, &[TRAIN_STREAM]);
    let training = |e: vasp_core::Error| match e {
        vasp_core::Error::Training(m) => CliError::new(EXIT_TRAINING, format!("training diverged: {m}")),
        other => other.into(),
    };
    match cfg.get::<String>("model")?.as_str() {
        "ease_closed" => Ok((AnyModel::Nease(ease_fit_closed_form(train, &cfg.ease_solve()?)?), None)),
        "nease" => {
            let (loss, output) = nease_loss(cfg)?;
            let mut model = NeaseModel::glorot(n_items, output, &mut rng);
            let tc = NeaseTrainConfig { loss, l2: cfg.get("l2")?, schedule: cfg.schedule()? };
            let report = nease_train(&mut model, train, &tc, train_seed).map_err(training)?;
            Ok((AnyModel::Nease(model), Some(report)))
        }
        "flvae" => {
            let mut model = FlvaeModel::new(n_items, cfg.flvae()?, &mut rng)?;
            let report = flvae_train(&mut model, train, &cfg.autoencoder()?, train_seed).map_err(training)?;
            Ok((AnyModel::Flvae(model), Some(report)))
        }
        "vasp" => {
            let mut model = VaspModel::init(n_items, cfg.flvae()?, &mut rng)?;
            let shallow_init = match cfg.get::<String>("shallow_init")?.as_str() {
                "random" => ShallowInit::Random,
                "closed_form" => ShallowInit::ClosedForm(cfg.ease_solve()?),
                other => return Err(CliError::usage(format!("unknown shallow_init `{other}`"))),
            };
            let regime = TrainRegime {
                kind: cfg.get::<String>("regime")?.parse::<RegimeKind>()?,
                autoencoder: cfg.autoencoder()?,
                shallow_l2: cfg.get("l2")?,
                shallow_init,
            };
            let report = vasp_train(&mut model, train, &regime, train_seed).map_err(training)?;
            Ok((AnyModel::Vasp(model), Some(report)))
        }
        other => Err(CliError::usage(format!("unknown model `{other}`"))),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt_path = cfg.path("checkpoint")?;
    let trace_path = cfg.opt_path("trace").unwrap_or_else(|| with_suffix(&ckpt_path, ".trace"));
    let data = load_dataset(cfg)?;
    let (mut model, report) = train_model(cfg, &data)?;
    model.round_to_f32();

    let report = report.unwrap_or(TrainReport { trace: Vec::new(), optimizers: Vec::new() });
    let ckpt = Checkpoint { model, echo: cfg.echo(), optimizers: report.optimizers };
    let partial = with_suffix(&ckpt_path, ".partial");
    let saved = checkpoint_save(&partial, &ckpt).and_then(|()| fs::rename(&partial, &ckpt_path).map_err(Into::into));
    if let Err(e) = saved {
        let _ = fs::remove_file(&partial);
        return Err(CliError::checkpoint(format!("cannot write checkpoint {}: {e}", ckpt_path.display())));
    }

    let mut w = BufWriter::new(File::create(&trace_path)?);
    for (epoch, loss) in report.trace.iter().enumerate() {
        writeln!(w, "{}\t{loss}", epoch + 1)?;
    }
    w.flush()?;
    println!("trained {} ({} epochs) -> {}", ckpt.model.kind(), report.trace.len(), ckpt_path.display());
    if let Some(last) = report.trace.last() {
        println!("final loss {last:.6}");
    }
    Ok(())
}

fn check_dims(model: &AnyModel, path: &Path, n_items: usize, dataset: &Path) -> Result<(), CliError> {
    if model.n_items() != n_items {
        return Err(CliError::data(format!(
            "checkpoint {} has {} items but dataset {} has {n_items}",
            path.display(),
            model.n_items(),
            dataset.display()
        )));
    }
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let test = &data.split.test;
    let ec = cfg.eval()?;
    let scorer = cfg.get::<String>("scorer")?;
    let mut report = match scorer.as_str() {
        "checkpoint" => {
            let (path, ckpt) = load_checkpoint(cfg)?;
            check_dims(&ckpt.model, &path, test.n_items(), &cfg.path("dataset")?)?;
            let mut r = evaluate_model(ckpt.model.as_scorer(), test, &ec)?;
            r.echo.push(("model_kind".into(), ckpt.model.kind().to_string()));
            r.echo.extend(ckpt.echo.into_iter().filter(|(k, _)| k != "dataset"));
            r
        }
        "popularity" => evaluate_model(&Popularity::fit(&data.split.train), test, &ec)?,
        "oracle" => evaluate(oracle_scores(test.n_items()), test.n_items(), test, &ec)?,
        other => return Err(CliError::usage(format!("unknown scorer `{other}`"))),
    };
    report.echo.insert(0, ("scorer".into(), scorer));
    let text = report.render();
    print!("{text}");
    if let Some(path) = cfg.opt_path("report") {
        fs::write(&path, &text)?;
    }
    Ok(())
}

/// Scores exactly the held-out items; a perfect model for checking the
/// evaluation plumbing.
fn oracle_scores(n_items: usize) -> impl Fn(&[&FoldInCase]) -> Array2<f64> + Sync {
    move |cases| {
        let mut s = Array2::zeros((cases.len(), n_items));
        for (r, c) in cases.iter().enumerate() {
            for &i in &c.holdout {
                s[[r, i as usize]] = 1.0;
            }
        }
        s
    }
}

pub fn recommend(cfg: &RunConfig) -> Result<(), CliError> {
    let (path, ckpt) = load_checkpoint(cfg)?;
    let dataset = cfg.path("dataset")?;
    let item_ids = read_map(&dataset.join("items.map"))?;
    check_dims(&ckpt.model, &path, item_ids.len(), &dataset)?;
    let index: std::collections::HashMap<u64, u32> =
        item_ids.iter().enumerate().map(|(d, &raw)| (raw, d as u32)).collect();

    let requested: Vec<&str> =
        cfg.raw("items").unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let mut history = Vec::new();
    for raw in &requested {
        match raw.parse::<u64>().ok().and_then(|id| index.get(&id)) {
            Some(&d) => history.push(d),
            None => log::warn!("unknown item id `{raw}` skipped"),
        }
    }
    if !requested.is_empty() && history.is_empty() {
        return Err(CliError::data("none of the given item ids are in the catalog"));
    }
    history.sort_unstable();
    history.dedup();

    let n: usize = cfg.get("n")?;
    let scores = ckpt.model.as_scorer().score_rows(&[&history]);
    let ranked = rank_items(scores.row(0), &history, n)?;
    if ranked.short {
        log::warn!("only {} items available, fewer than the {n} requested", ranked.items.len());
    }
    let mut out = io::stdout().lock();
    for &i in &ranked.items {
        writeln!(out, "{}\t{}", item_ids[i as usize], scores[[0, i as usize]])?;
    }
    Ok(())
}

pub fn export_similarity(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, ckpt) = load_checkpoint(cfg)?;
    let scorer: &dyn Scorer = ckpt.model.as_scorer();
    match cfg.opt_path("out") {
        Some(path) => {
            let mut w = BufWriter::new(File::create(&path)?);
            sensitivity_export(scorer, &mut w)?;
        }
        None => sensitivity_export(scorer, &mut BufWriter::new(io::stdout().lock()))?,
    }
    Ok(())
}
