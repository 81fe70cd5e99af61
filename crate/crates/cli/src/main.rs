//! `kgprop <subcommand> --config <path> --out <dir> [--override key=value]*`

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::commands::Subcommand;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Writer;

#[derive(Debug, Parser)]
#[command(name = "kgprop", version, about = "Klein-Gordon propagators on model spacetimes")]
struct Args {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--override grid.N=64`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("KGPROP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Core(kgprop::KgError::config("KGPROP_THREADS", format!("must be a positive integer, got `{v}`"))))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Io(e.to_string()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = init_threads()
        .and_then(|_| RunConfig::load(&args.config, &args.overrides))
        .and_then(|cfg| {
            let dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
            let out = Writer::new(&dir)?;
            let report = commands::run(args.subcommand, &cfg, &out)?;
            println!("wrote {}", out.dir().display());
            Ok(report)
        });
    match result {
        Ok(report) => {
            for (name, v) in &report.results {
                let flag = if v["pass"] == serde_json::json!(true) { "PASS" } else { "FAIL" };
                println!("{flag} {name}");
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("kgprop: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
