use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bwq::cli::{self, AblateArgs, MapArgs, SimulateArgs, SweepOuArgs, TrainArgs};
use bwq::mapper::Scheme;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bwq",
    version,
    about = "Block-wise mixed-precision quantization and crossbar simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with escalating regularization, then lower activation precision.
    Train {
        /// Run config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Where to write the quantized model.
        #[arg(long)]
        out: PathBuf,
        /// CSV with one row per training run.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Explicit comma-separated α values instead of the configured ramp.
        #[arg(long)]
        alpha_list: Option<String>,
    },
    /// Place a model's bit planes on crossbars and report utilization.
    Map {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// aware, consecutive or same-ou.
        #[arg(long, default_value = "aware")]
        scheme: String,
        /// Where to write the layout JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one inference and print the cost report.
    Simulate {
        /// Quantized model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Run config; without one the default crossbar takes the model's OU.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the random input activations.
        #[arg(long)]
        seed: Option<u64>,
        /// Write every OU event as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the report CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare crossbar outputs against direct integer products.
        #[arg(long)]
        verify: bool,
    },
    /// Cost a model across OU sizes.
    SweepOu {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated HxW sizes.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every combination of α and re-quantization interval.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated α values.
        #[arg(long)]
        alphas: String,
        /// Comma-separated re-quantization intervals in epochs.
        #[arg(long)]
        intervals: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> bwq::Result<i32> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Train {
            config,
            out: model_out,
            metrics,
            alpha_list,
        } => {
            let alpha_list = alpha_list
                .map(|s| cli::parse_list(&s, "alpha"))
                .transpose()?;
            let summary = cli::cmd_train(&TrainArgs {
                config,
                out: model_out,
                metrics,
                alpha_list,
            })?;
            summary.print(&mut out)?;
        }
        Command::Map {
            model,
            config,
            scheme,
            out: layout_out,
        } => {
            let scheme: Scheme = scheme.parse()?;
            let u = cli::cmd_map(&MapArgs {
                model,
                config,
                scheme,
                out: layout_out,
            })?;
            writeln!(out, "utilization,{u}")?;
        }
        Command::Simulate {
            model,
            config,
            seed,
            trace,
            out: report_out,
            verify,
        } => {
            let to_stdout = report_out.is_none();
            let outcome = cli::cmd_simulate(&SimulateArgs {
                model,
                config,
                seed,
                trace,
                out: report_out,
                verify,
            })?;
            if to_stdout {
                outcome.report.write_csv(&mut out)?;
            }
            writeln!(out, "total_cycles,{}", outcome.total_cycles)?;
            match outcome.verified {
                Some(true) => writeln!(out, "MATCH")?,
                Some(false) => {
                    writeln!(out, "MISMATCH")?;
                    return Ok(cli::EXIT_MISMATCH);
                }
                None => {}
            }
        }
        Command::SweepOu {
            model,
            config,
            sizes,
            out: csv_out,
        } => {
            let sizes = sizes.map(|s| cli::parse_sizes(&s)).transpose()?;
            cli::cmd_sweep_ou(
                &SweepOuArgs {
                    model,
                    config,
                    sizes,
                    out: csv_out,
                },
                &mut out,
            )?;
        }
        Command::Ablate {
            config,
            alphas,
            intervals,
            out: csv_out,
        } => {
            let args = AblateArgs {
                config,
                alphas: cli::parse_list(&alphas, "alpha")?,
                intervals: cli::parse_list(&intervals, "interval")?,
                out: csv_out,
            };
            cli::cmd_ablate(&args, &mut out)?;
        }
    }
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
