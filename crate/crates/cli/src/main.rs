use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "stone", version, about = "Sparse-sensor to dense-field operator forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sensor/field dataset.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        sensors: usize,
        /// Grid as LATxLON, e.g. 8x16.
        #[arg(long, default_value = "8x16")]
        grid: String,
        #[arg(long, default_value_t = 400)]
        days: usize,
        /// Periods of the slow driver over the whole series.
        #[arg(long, default_value_t = 2.0)]
        cycles: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one branch family, or all four with `--branch all`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// fcn, gru, lstm, transformer or all; defaults to the config's branch.
        #[arg(long)]
        branch: Option<String>,
        /// Train several branches on separate threads.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score checkpoints on the test split and write report CSVs.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Run config supplying the data section; defaults to the one stored in the first checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory holding sensors.csv and fields.stnf.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Compare the test targets with themselves (the report must be all zeros).
        #[arg(long)]
        self_check: bool,
        /// Extra report over a box, LAT0:LAT1,LON0:LON1 in degrees.
        #[arg(long, allow_hyphen_values = true)]
        region: Option<String>,
    },
    /// Forecast every lead from one sensor window.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sensor CSV with exactly k_hist rows.
        #[arg(long)]
        sensors: PathBuf,
        /// CSV of `lat,lon` query points in degrees.
        #[arg(long, conflicts_with = "grid")]
        coords: Option<PathBuf>,
        /// Regular grid of cell centres, LATxLON.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            seed,
            sensors,
            grid,
            days,
            cycles,
            out,
        } => commands::synth(seed, sensors, &grid, days, cycles, &out),
        Command::Train {
            config,
            branch,
            parallel,
            out,
        } => commands::train(&config, branch.as_deref(), parallel, &out),
        Command::Eval {
            checkpoints,
            config,
            data,
            out,
            self_check,
            region,
        } => commands::eval(&commands::EvalArgs {
            checkpoints: &checkpoints,
            config: config.as_deref(),
            data: data.as_deref(),
            out: &out,
            self_check,
            region: region.as_deref(),
        }),
        Command::Forecast {
            checkpoint,
            sensors,
            coords,
            grid,
            out,
        } => commands::forecast(&checkpoint, &sensors, coords.as_deref(), grid.as_deref(), &out),
        Command::Gradcheck { seed, eps, tol } => commands::gradcheck(seed, eps, tol),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
