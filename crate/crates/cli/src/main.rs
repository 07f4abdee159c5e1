//! `magcert`: simulate, reconstruct and certify magnetization data.
//!
//! Exit codes: 0 success (classical-consistent for `certify`), 10
//! nonclassical verdict, 2 any error.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use magcert::MomentRoute;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "magcert", version, about = "Nonclassicality certification from Faraday photon counts")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "MAGCERT_CONFIG")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set bootstrap.seed=7`. Repeatable;
    /// applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouteArg {
    Factorial,
    Deconvolution,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate pulse records for the configured state.
    Simulate {
        /// Pulses per angle (overrides simulate.pulses_per_angle).
        #[arg(long)]
        pulses: Option<u64>,
        /// Seed (overrides simulate.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Sample counts from the exact photon distribution; needed for
        /// states with a negative quasi-density.
        #[arg(long)]
        via_histogram: bool,
        /// Records file to write; defaults to records.csv in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Reconstruct the marginal and the predicted photon histogram.
    Reconstruct {
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Axis and radial moments with bootstrap errors.
    Moments {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        route: RouteArg,
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Bootstrap cutoff sweep and verdict (exit 0 classical, 10 nonclassical).
    Certify {
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Cutoff sweep without bootstrap, from records, a histogram or moments.
    Sweep {
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Plain-column plot data from a sweep or a marginal file.
    EmitPlot {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// For a marginal, also write the axis density P(M) over the full
        /// line, assuming ⟨M⟩ = 0.
        #[arg(long)]
        axis_out: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let mut overrides = cli.global.overrides;
    match &cli.command {
        Command::Simulate { pulses, seed, via_histogram, .. } => {
            if let Some(p) = pulses {
                overrides.push(format!("simulate.pulses_per_angle={p}"));
            }
            if let Some(s) = seed {
                overrides.push(format!("simulate.seed={s}"));
            }
            if *via_histogram {
                overrides.push("simulate.via_histogram=true".into());
            }
        }
        Command::EmitPlot { input, out, axis_out } => {
            commands::emit_plot(input, out, axis_out.as_deref())?;
            return Ok(0);
        }
        _ => {}
    }
    let cfg = RunConfig::resolve(cli.global.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate { out, out_dir, .. } => commands::simulate(&cfg, out.as_deref(), out_dir.as_deref())?,
        Command::Reconstruct { input, out_dir } => commands::reconstruct(&cfg, &input, out_dir.as_deref())?,
        Command::Moments { input, route, k_max, out_dir } => {
            let route = match route {
                RouteArg::Factorial => Some(MomentRoute::Factorial),
                RouteArg::Deconvolution => Some(MomentRoute::Deconvolution),
                RouteArg::Both => None,
            };
            commands::moments(&cfg, &input, route, k_max, out_dir.as_deref())?
        }
        Command::Certify { input, out_dir } => return commands::certify(&cfg, &input, out_dir.as_deref()),
        Command::Sweep { input, out_dir } => commands::sweep(&cfg, &input, out_dir.as_deref())?,
        Command::Config => commands::show_config(&cfg)?,
        Command::EmitPlot { .. } => unreachable!("handled before config resolution"),
    }
    Ok(0)
}

/// The error chain joined by ": ", skipping causes already quoted by the
/// message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
