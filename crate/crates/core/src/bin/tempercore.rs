use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::json;
use tempercore::experiment::{run_experiment, ExperimentConfig, ExperimentKind, RunOptions};
use tempercore::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Ladder,
    RunSt,
    RunDiffusion,
    CompareSigma,
    Bounds,
    Validate,
}

impl Kind {
    fn to_kind(self) -> ExperimentKind {
        match self {
            Kind::Ladder => ExperimentKind::Ladder,
            Kind::RunSt => ExperimentKind::RunSt,
            Kind::RunDiffusion => ExperimentKind::RunDiffusion,
            Kind::CompareSigma => ExperimentKind::CompareSigma,
            Kind::Bounds => ExperimentKind::Bounds,
            Kind::Validate => ExperimentKind::Validate,
        }
    }
}

/// Run a tempercore experiment from a JSON configuration.
#[derive(Debug, Parser)]
#[command(name = "tempercore", version)]
struct Cli {
    kind: Kind,
    /// JSON configuration; `validate` may omit it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed and TEMPERCORE_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn fail(code: u8, err: &Error) -> ExitCode {
    let body = json!({ "error": err.kind(), "message": err.to_string() });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn is_config_error(err: &Error) -> bool {
    matches!(
        err,
        Error::Configuration(_)
            | Error::RejectedInput(_)
            | Error::Json(_)
            | Error::Io { .. }
            | Error::Csv(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            return fail(2, &Error::Configuration(e.to_string()));
        }
    }
    let kind = cli.kind.to_kind();
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(2, &Error::Configuration(format!("{}: {e}", path.display()))),
        },
        None if matches!(kind, ExperimentKind::Validate) => "{\"kind\": \"validate\"}".to_string(),
        None => return fail(2, &Error::Configuration("--config is required".into())),
    };
    match ExperimentConfig::from_json(&text) {
        Ok(cfg) if cfg.kind() != kind => {
            return fail(
                2,
                &Error::Configuration(format!(
                    "config kind `{}` does not match command `{}`",
                    cfg.kind().as_str(),
                    kind.as_str()
                )),
            )
        }
        Ok(_) => {}
        Err(e) => return fail(2, &e),
    }
    let opts = RunOptions {
        seed: cli.seed,
        out: cli.out,
    };
    match run_experiment(&text, &opts) {
        Ok(outcome) => {
            println!("{}", outcome.out_dir.join("result.json").display());
            match outcome.passed {
                Some(false) => ExitCode::from(1),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) if is_config_error(&e) => fail(2, &e),
        Err(e) => fail(3, &e),
    }
}
