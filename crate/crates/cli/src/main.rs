use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

mod commands;
mod config;
mod error;

use config::{RunConfig, KEYS};
use error::CliError;

const VERBS: &[(&str, &str)] = &[
    ("prepare", "parse raw ratings, filter, split users and write a dataset directory"),
    ("train", "train a model and write a checkpoint plus loss trace"),
    ("evaluate", "run the fold-in evaluation on the test users"),
    ("recommend", "top-N items for a given history"),
    ("export-similarity", "write the model's response to every one-hot input"),
];

fn cli() -> Command {
    let mut root = Command::new("vasp")
        .about("Item recommenders trained on implicit feedback")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .value_parser(clap::value_parser!(PathBuf))
                .help("flat `key = value` config file"),
        );
    for key in KEYS {
        let mut arg = Arg::new(key.name).long(key.name).value_name("VALUE").global(true).help(key.help);
        if key.name.contains('_') {
            arg = arg.alias(key.name.replace('_', "-"));
        }
        if key.flag {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        root = root.arg(arg.action(ArgAction::Set));
    }
    for (name, about) in VERBS {
        root = root.subcommand(Command::new(*name).about(*about));
    }
    root
}

fn build_config(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::defaults();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(path)?;
    }
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key.name) {
            cfg.set(key.name, v)?;
        }
    }
    cfg.seed_fallback(std::env::var("VASP_SEED").ok());
    Ok(cfg)
}

fn run(verb: &str, m: &ArgMatches) -> Result<(), CliError> {
    let cfg = build_config(m)?;
    match verb {
        "prepare" => commands::prepare(&cfg),
        "train" => commands::train(&cfg),
        "evaluate" => commands::evaluate_cmd(&cfg),
        "recommend" => commands::recommend(&cfg),
        "export-similarity" => commands::export_similarity(&cfg),
        _ => unreachable!("clap rejects unknown verbs"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE as u8 } else { 0 });
        }
    };
    let (verb, sub) = matches.subcommand().expect("subcommand required");
    match run(verb, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vasp {verb}: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
