//! `dpd`: batch front-end for the predistortion toolkit.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dpd", version, about = "Train, apply and evaluate an APH digital predistorter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the configuration seed and DPD_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured payload waveform as binary I/Q plus sidecar.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run indirect-learning training against the simulated transmitter.
    Train {
        #[command(flatten)]
        common: Common,
        /// Coefficient JSON to write.
        #[arg(long)]
        coeffs: PathBuf,
        /// Per-iteration report JSON to write.
        #[arg(long)]
        report: PathBuf,
    },
    /// Apply trained coefficients to an I/Q file.
    Predistort {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        coeffs: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = commands::DEFAULT_CHUNK_LEN)]
        chunk_len: usize,
    },
    /// Pass an I/Q file through the simulated transmitter, optionally
    /// predistorting it first.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Coefficient JSON to apply before the transmitter.
        #[arg(long, value_name = "COEFFS")]
        with_dpd: Option<PathBuf>,
        #[arg(long, requires = "with_dpd")]
        workers: Option<usize>,
    },
    /// PSD of one capture (CSV), or per-band suppression between two (JSON).
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Capture to analyse, or the reference ("before") capture.
        #[arg(short, long)]
        input: PathBuf,
        /// Second ("after") capture; switches to suppression mode.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Throughput of the parallel predistorter for several worker counts.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'n', long, default_value_t = 1_000_000)]
        n_samples: usize,
        /// Comma-separated worker counts.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = commands::DEFAULT_CHUNK_LEN)]
        chunk_len: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Coefficient JSON; a fixed synthetic vector when omitted.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Corrupt one output sample of the engine under test.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> dpd_core::Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            commands::generate(&commands::load(&common.config, common.seed)?, &out)
        }
        Command::Train { common, coeffs, report } => {
            commands::train(&commands::load(&common.config, common.seed)?, &coeffs, &report)
        }
        Command::Predistort { common, coeffs, input, output, workers, chunk_len } => {
            let cfg = commands::load(&common.config, common.seed)?;
            commands::predistort(&cfg, &coeffs, &input, &output, workers, chunk_len)
        }
        Command::Simulate { common, input, output, with_dpd, workers } => {
            let cfg = commands::load(&common.config, common.seed)?;
            commands::simulate(&cfg, &input, &output, with_dpd.as_deref(), workers.unwrap_or(1))
        }
        Command::Evaluate { common, input, compare, output } => {
            let cfg = commands::load(&common.config, common.seed)?;
            commands::evaluate(&cfg, &input, compare.as_deref(), output.as_deref())
        }
        Command::Bench { common, n_samples, workers, chunk_len, repeats, coeffs, out, inject_fault } => {
            let cfg = commands::load(&common.config, common.seed)?;
            let opts = commands::BenchOptions {
                n_samples,
                workers,
                chunk_len,
                repeats,
                coeffs,
                inject_fault,
            };
            commands::bench(&cfg, &opts, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
