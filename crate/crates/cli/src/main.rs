//! `vgx`: command-line front end for the vector Gaussian extremes toolkit.

mod commands;
mod config;
mod output;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use config::{Format, RunConfig};
use output::{sha256_hex, write_file, Manifest, RunOutput};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};
use vgx_core::asymptotics::AsymptoticError;
use vgx_core::models::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Qp,
    ModelCheck,
    Sample,
    Pickands,
    Piterbarg,
    ConstantsClosed,
    TailMc,
    TailMvn,
    Predict,
    Compare,
}

impl Command {
    fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "vgx", version, about = "Exceedance probabilities of vector-valued Gaussian processes")]
struct Cli {
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `estimation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `estimation.workers`. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `output.formats` with a single format.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn run(cmd: Command, cfg: &RunConfig) -> Result<RunOutput> {
    match cmd {
        Command::Qp => commands::qp(cfg),
        Command::ModelCheck => commands::model_check(cfg),
        Command::Sample => commands::sample(cfg),
        Command::Pickands => commands::pickands(cfg),
        Command::Piterbarg => commands::piterbarg(cfg),
        Command::ConstantsClosed => commands::constants_closed(cfg),
        Command::TailMc => commands::tail_mc(cfg),
        Command::TailMvn => commands::tail_mvn(cfg),
        Command::Predict => commands::predict_cmd(cfg),
        Command::Compare => commands::compare_cmd(cfg),
    }
}

/// A refusal is an input the theory does not cover, as opposed to a failure.
fn refusal(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(e.downcast_ref::<AsymptoticError>(), Some(AsymptoticError::NotCovered(_)))
            || matches!(e.downcast_ref::<ModelError>(), Some(ModelError::HypothesisFailed(_)))
    })
}

fn write_outputs(
    dir: &Path,
    cli: &Cli,
    cfg: &RunConfig,
    config_bytes: &[u8],
    out: &RunOutput,
    started: (u64, Instant),
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = cli.command.name();
    let mut records = Vec::new();
    for f in &cfg.output.formats {
        match f {
            Format::Csv => {
                write_file(dir, &format!("{name}.csv"), &out.table.to_csv()?, &mut records)?;
            }
            Format::Json => {
                let bytes = serde_json::to_vec_pretty(&out.json)?;
                write_file(dir, &format!("{name}.json"), &bytes, &mut records)?;
            }
        }
    }
    for (file, bytes) in &out.extra {
        write_file(dir, file, bytes, &mut records)?;
    }
    let manifest = Manifest {
        subcommand: name,
        config: cli.config.display().to_string(),
        config_sha256: sha256_hex(config_bytes),
        seed: cfg.estimation.seed,
        workers: cfg.estimation.workers,
        vgx_core_version: vgx_core::VERSION.into(),
        vgx_cli_version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started.0,
        wall_time_seconds: started.1.elapsed().as_secs_f64(),
        exit_code: out.exit_code,
        outputs: records,
        messages: out.messages.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)
        .with_context(|| format!("writing manifest in {}", dir.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = (SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0), Instant::now());
    let (mut cfg, bytes) = match config::load(&cli.config) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Some(s) = cli.seed {
        cfg.estimation.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.estimation.workers = w;
    }
    if let Some(d) = &cli.out {
        cfg.output.directory = d.display().to_string();
    }
    if let Some(f) = cli.format {
        cfg.output.formats = vec![match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }];
    }
    // A second build in the same process fails harmlessly.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.estimation.workers.max(1)).build_global();

    let out = match run(cli.command, &cfg) {
        Ok(o) => o,
        Err(e) if refusal(&e) => {
            eprintln!("not covered: {e:#}");
            let mut o = RunOutput::new(output::Table::default(), serde_json::json!({ "refusal": format!("{e:#}") }))
                .expect("plain json");
            o.exit_code = 2;
            o.messages.push(format!("not covered: {e:#}"));
            o
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let dir = PathBuf::from(&cfg.output.directory);
    if let Err(e) = write_outputs(&dir, &cli, &cfg, &bytes, &out, started) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    for m in &out.messages {
        eprintln!("{m}");
    }
    println!("{} -> {}", cli.command.name(), dir.display());
    ExitCode::from(out.exit_code as u8)
}
