use std::fs;
use std::io::BufReader;
use std::path::Path;

use sagwave::detector::{classify, kernel_activation, GapPolicy};
use sagwave::ingest::{parse_detector_csv, series_to_grid, write_detector_csv};
use sagwave::render::{boost_overlay, render_grid, ColorScale};
use sagwave::simulator::{run_replication, write_trajectories_csv};
use sagwave::uq::{replication_grid, run_bootstrap};
use sagwave::{
    ActivationMap, BootstrapConfig, DetectorConfig, Error, GridSpec, ProbabilityMap, RunConfig,
    TimeSpaceGrid,
};

use crate::manifest::Manifest;
use crate::GridArgs;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Replication { source, .. } => exit_code(source),
        Error::Collision { .. } | Error::VehicleOverlap { .. } => 3,
        Error::GridTooSmall { .. } | Error::EmptyMap | Error::Boundary { .. } => 4,
        Error::Io(_) => 1,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure::new(exit_code(&err), err.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::new(1, err.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::new(2, format!("cannot read {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<(RunConfig, String), Failure> {
    let cfg = match path {
        Some(p) => RunConfig::parse(&read_text(p)?)
            .map_err(|e| Failure::new(2, format!("{}: {e}", p.display())))?,
        None => RunConfig::default_ring(),
    };
    let resolved = cfg.to_config_string();
    Ok((cfg, resolved))
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> sagwave::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn prepare_out(out: &Path) -> CmdResult {
    fs::create_dir_all(out)
        .map_err(|e| Failure::new(2, format!("cannot create {}: {e}", out.display())))
}

fn max_speed_of(grid: &TimeSpaceGrid) -> f64 {
    grid.speeds.iter().copied().fold(1.0, f64::max)
}

pub fn simulate(config: Option<&Path>, seed: u64, out: &Path) -> CmdResult {
    let (cfg, resolved) = load_config(config)?;
    prepare_out(out)?;
    let run = run_replication(&cfg.scenario, seed)?;
    let v0 = cfg.scenario.base_params.v0;
    let grid = replication_grid(&run.trajectories, &cfg.grid, v0)?;

    let mut m = Manifest::new("simulate");
    m.set_config(&resolved);
    m.set("seed", seed);
    if let Some(p) = config {
        m.set("input.config", p.display());
    }
    m.set("deferred_entries", run.deferred_entries);
    m.write_output(
        out,
        "trajectories.csv",
        &to_bytes(|b| write_trajectories_csv(&run.trajectories, b))?,
    )?;
    m.write_output(
        out,
        "detectors.csv",
        &to_bytes(|b| write_detector_csv(&run.detectors, b))?,
    )?;
    m.write_output(out, "grid.csv", &to_bytes(|b| grid.write_csv(b))?)?;
    let scale = ColorScale::speeds(max_speed_of(&grid).max(v0))?;
    m.write_output(out, "speed.pgm", &render_grid(&grid, &scale)?)?;
    m.write(out)?;
    println!(
        "simulated {} vehicles, {} trajectory samples",
        run.trajectories.len(),
        run.trajectories
            .iter()
            .map(|t| t.samples.len())
            .sum::<usize>()
    );
    Ok(())
}

pub fn detect(
    grid_path: &Path,
    width: usize,
    epsilon: f64,
    v_ref: f64,
    gaps: GapPolicy,
    out: &Path,
) -> CmdResult {
    let file = fs::File::open(grid_path)
        .map_err(|e| Failure::new(2, format!("cannot read {}: {e}", grid_path.display())))?;
    let grid = TimeSpaceGrid::read_csv(BufReader::new(file))
        .map_err(|e| Failure::new(2, format!("{}: {e}", grid_path.display())))?;
    let cfg = DetectorConfig::new(width, epsilon, v_ref)?.with_gaps(gaps);
    prepare_out(out)?;
    let activation = kernel_activation(&grid, &cfg)?;
    let binary = classify(&activation, cfg.epsilon);

    let mut m = Manifest::new("detect");
    m.set("input.grid", grid_path.display());
    m.set("flags.width", width);
    m.set("flags.epsilon", epsilon);
    m.set("flags.v_ref", v_ref);
    m.set("flags.gaps", gaps);
    m.set("flagged_cells", binary.flagged());
    m.set(
        "valid_cells",
        activation.valid.iter().filter(|&&v| v).count(),
    );
    m.set("clamped_cells", activation.clamped);
    m.write_output(
        out,
        "activation.csv",
        &to_bytes(|b| activation.write_csv(b))?,
    )?;
    m.write_output(out, "binary.csv", &to_bytes(|b| binary.write_csv(b))?)?;
    m.write_output(
        out,
        "activation.ppm",
        &render_grid(&activation, &ColorScale::activation())?,
    )?;
    m.write_output(
        out,
        "overlay.ppm",
        &boost_overlay(&activation, cfg.epsilon)?,
    )?;
    m.write(out)?;
    if activation.clamped > 0 {
        eprintln!(
            "warning: {} activations clamped (speeds above v_ref)",
            activation.clamped
        );
    }
    println!("flagged={}", binary.flagged());
    Ok(())
}

pub struct BootstrapArgs<'a> {
    pub config: Option<&'a Path>,
    pub replications: usize,
    pub seed: u64,
    pub width: usize,
    pub epsilon: f64,
    pub v_ref: Option<f64>,
    pub workers: Option<usize>,
    pub u_band: &'a str,
    pub gaps: GapPolicy,
    pub out: &'a Path,
}

fn parse_band(text: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::new(2, format!("--u-band expects `lo,hi`, got `{text}`"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Failure::new(
            2,
            format!("--u-band needs 0 <= lo < hi <= 1, got {lo},{hi}"),
        ));
    }
    Ok((lo, hi))
}

pub fn bootstrap(args: BootstrapArgs<'_>) -> CmdResult {
    let (cfg, resolved) = load_config(args.config)?;
    let band = parse_band(args.u_band)?;
    if args.replications == 0 {
        return Err(Failure::new(2, "--replications must be at least 1"));
    }
    let v_ref = args.v_ref.unwrap_or(cfg.scenario.base_params.v0);
    let detector = DetectorConfig::new(args.width, args.epsilon, v_ref)?.with_gaps(args.gaps);
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    prepare_out(args.out)?;

    let report = run_bootstrap(
        &cfg.scenario,
        &BootstrapConfig {
            detector,
            grid: cfg.grid,
            replications: args.replications,
            master_seed: args.seed,
            workers,
            band,
        },
    )?;

    let mut m = Manifest::new("bootstrap");
    m.set_config(&resolved);
    if let Some(p) = args.config {
        m.set("input.config", p.display());
    }
    m.set("seed", args.seed);
    m.set("flags.replications", args.replications);
    m.set("flags.width", args.width);
    m.set("flags.epsilon", args.epsilon);
    m.set("flags.v_ref", v_ref);
    m.set("flags.u_band", format!("{},{}", band.0, band.1));
    m.set("flags.gaps", args.gaps);
    m.set("flags.workers", workers);
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    m.set("replication_seeds", seeds.join(","));
    m.set("U", report.uncertainty);
    m.write_output(
        args.out,
        "probability.csv",
        &to_bytes(|b| report.map.write_csv(b))?,
    )?;
    m.write_output(args.out, "summary.txt", report.summary().as_bytes())?;
    m.write_output(
        args.out,
        "probability.ppm",
        &render_grid(&report.map, &ColorScale::probability())?,
    )?;
    m.write(args.out)?;
    eprintln!(
        "{} replications on {} workers in {:.2?}",
        report.k, report.workers, report.elapsed
    );
    println!("U={}", report.uncertainty);
    Ok(())
}

pub fn ingest(detectors: &Path, grid: GridArgs, bin_s: f64, out: &Path) -> CmdResult {
    let file = fs::File::open(detectors)
        .map_err(|e| Failure::new(2, format!("cannot read {}: {e}", detectors.display())))?;
    let parsed = parse_detector_csv(BufReader::new(file), bin_s)
        .map_err(|e| Failure::new(exit_code(&e), format!("{}: {e}", detectors.display())))?;
    prepare_out(out)?;
    if !parsed.rejects.is_empty() {
        let report = out.join("rejects.txt");
        fs::write(&report, parsed.rejects_report())?;
        return Err(Failure::new(
            2,
            format!(
                "{} malformed rows; see {}",
                parsed.rejects.len(),
                report.display()
            ),
        ));
    }
    if parsed.series.is_empty() {
        return Err(Failure::new(2, "no data rows"));
    }
    let spec = GridSpec::new(grid.t0, grid.x0, grid.dt, grid.dx, grid.n_t, grid.n_x)?;
    let coarse = series_to_grid(&parsed.series, &spec)?;

    let mut m = Manifest::new("ingest");
    m.set("input.detectors", detectors.display());
    m.set("flags.t0", grid.t0);
    m.set("flags.x0", grid.x0);
    m.set("flags.dt", grid.dt);
    m.set("flags.dx", grid.dx);
    m.set("flags.n_t", grid.n_t);
    m.set("flags.n_x", grid.n_x);
    m.set("flags.bin_s", bin_s);
    m.set("stations", parsed.series.len());
    m.write_output(out, "grid.csv", &to_bytes(|b| coarse.write_csv(b))?)?;
    m.write(out)?;
    println!("stations={}", parsed.series.len());
    Ok(())
}

/// Dispatches on the first header field, which names the map kind.
pub fn render(input: &Path, max_speed: Option<f64>, out: &Path) -> CmdResult {
    let text = read_text(input)?;
    let parse_err = |e: Error| Failure::new(2, format!("{}: {e}", input.display()));
    let tag = text
        .lines()
        .next()
        .unwrap_or("")
        .trim_start_matches('#')
        .trim();
    let image = if tag.starts_with("sagwave-grid") {
        let grid = TimeSpaceGrid::read_csv(text.as_bytes()).map_err(parse_err)?;
        let top = max_speed.unwrap_or_else(|| max_speed_of(&grid));
        render_grid(&grid, &ColorScale::speeds(top)?)?
    } else if tag.starts_with("sagwave-activation") {
        let map = ActivationMap::read_csv(text.as_bytes()).map_err(parse_err)?;
        render_grid(&map, &ColorScale::activation())?
    } else if tag.starts_with("sagwave-prob") {
        let map = ProbabilityMap::read_csv(text.as_bytes()).map_err(parse_err)?;
        render_grid(&map, &ColorScale::probability())?
    } else {
        return Err(Failure::new(
            2,
            format!("{}: not a renderable map", input.display()),
        ));
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_out(dir)?;
    }
    fs::write(out, image)?;
    Ok(())
}
