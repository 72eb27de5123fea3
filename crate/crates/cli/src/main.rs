//! `sagwave`: simulate, ingest, detect, bootstrap and render stop-and-go waves.
//!
//! Exit codes: 0 success, 2 configuration or parse error, 3 simulation
//! integrity failure, 4 detection precondition failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sagwave::detector::{GapPolicy, DEFAULT_EPSILON, DEFAULT_WIDTH};
use sagwave::uq::DEFAULT_REPLICATIONS;

#[derive(Parser, Debug)]
#[command(
    name = "sagwave",
    version,
    about = "Stop-and-go wave reconstruction, detection and uncertainty maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one replication and write trajectories, detector readings and the
    /// time-space grid.
    Simulate {
        /// Scenario file; the default ring when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a time-space grid with the SAG kernel and threshold it.
    Detect {
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Reference speed for normalization, m/s.
        #[arg(long, default_value_t = 33.3)]
        v_ref: f64,
        #[arg(long, default_value = "strict")]
        gaps: GapPolicy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicate simulate+detect and aggregate a SAG probability map.
    Bootstrap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_REPLICATIONS)]
        replications: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Reference speed for normalization; defaults to the scenario's
        /// desired speed.
        #[arg(long)]
        v_ref: Option<f64>,
        #[arg(long, env = "SAGWAVE_WORKERS")]
        workers: Option<usize>,
        /// Uncertainty band `lo,hi`.
        #[arg(long, default_value = "0.25,0.75")]
        u_band: String,
        #[arg(long, default_value = "filled")]
        gaps: GapPolicy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a nearest-station time-space grid from loop-detector CSV.
    Ingest {
        #[arg(long)]
        detectors: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = sagwave::ingest::DEFAULT_BIN_S)]
        bin_s: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a grid, activation or probability CSV as a Netpbm image.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Upper end of the speed scale for grids; the grid maximum when omitted.
        #[arg(long)]
        max_speed: Option<f64>,
        /// Image file to write (`.pgm` or `.ppm` by content).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct DetectorArgs {
    /// Kernel width in grid columns (positive, even).
    #[arg(long, default_value_t = DEFAULT_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args, Debug, Clone, Copy)]
struct GridArgs {
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, default_value_t = sagwave::grid::DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = sagwave::grid::DEFAULT_DX)]
    dx: f64,
    #[arg(long, default_value_t = 900)]
    n_t: usize,
    #[arg(long, default_value_t = 50)]
    n_x: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, seed, out } => {
            commands::simulate(config.as_deref(), seed, &out)
        }
        Command::Detect {
            grid,
            detector,
            v_ref,
            gaps,
            out,
        } => commands::detect(&grid, detector.width, detector.epsilon, v_ref, gaps, &out),
        Command::Bootstrap {
            config,
            replications,
            seed,
            detector,
            v_ref,
            workers,
            u_band,
            gaps,
            out,
        } => commands::bootstrap(commands::BootstrapArgs {
            config: config.as_deref(),
            replications,
            seed,
            width: detector.width,
            epsilon: detector.epsilon,
            v_ref,
            workers,
            u_band: &u_band,
            gaps,
            out: &out,
        }),
        Command::Ingest {
            detectors,
            grid,
            bin_s,
            out,
        } => commands::ingest(&detectors, grid, bin_s, &out),
        Command::Render {
            input,
            max_speed,
            out,
        } => commands::render(&input, max_speed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
