//! `tramnav` command line: simulate scenarios, run the filter on observation
//! files, evaluate trajectories against a track map and reproduce the RMSE
//! comparison grid.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use tramnav::estimation::{StateEstimate, StateVector, CLOCK_BIAS, POS};
use tramnav::gnss::{least_squares_fix, SPEED_OF_LIGHT};
use tramnav::io::{self, FileError, MetricsReport};
use tramnav::navigation::{run_filter, EpochSolution, Features, FilterConfig};
use tramnav::sim::{self, initial_covariance, InitialSigma, ScenarioConfig};
use tramnav::track::TrackMap;

#[derive(Parser, Debug)]
#[command(name = "tramnav", version, about = "GNSS rail-vehicle localization toolkit")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Filter configuration (TOML); replaces the scenario's filter section.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate observations from a scenario and run every filter variant.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the filter on an observation file.
    Filter {
        observations: PathBuf,
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        mixing: bool,
        #[arg(long)]
        constraint: bool,
        /// Initial state (JSON); defaults to a least-squares fix on the first epoch.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report distance-to-track, step lengths and optional truth error.
    Evaluate {
        trajectory: PathBuf,
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Mean RMSE grid over consecutive seeds, with and without each feature.
    Table1 {
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<FileError> for Failure {
    fn from(e: FileError) -> Self {
        match e {
            FileError::Missing { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<tramnav::Error> for Failure {
    fn from(e: tramnav::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::Usage(format!("{}: file not found", path.display())),
        _ => Failure::Runtime(format!("{}: {e}", path.display())),
    })?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_scenario(cli: &Cli, path: &Path) -> CliResult<ScenarioConfig> {
    let mut scenario: ScenarioConfig = read_toml(path)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(cfg) = &cli.config {
        scenario.filter = read_toml(cfg)?;
    }
    scenario
        .validate()
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(scenario)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

/// Writes the trajectory and step series of one variant and returns its
/// metrics.
fn write_variant(
    dir: &Path,
    label: &str,
    solutions: &[EpochSolution],
    map: &TrackMap,
    truth: Option<&[nalgebra::Vector3<f64>]>,
) -> CliResult<io::VariantMetrics> {
    let rows = io::trajectory_rows(solutions, Some(map))?;
    io::write_trajectory(&dir.join(format!("trajectory_{label}.csv")), &rows)?;
    let positions: Vec<_> = rows.iter().map(|r| r.position).collect();
    let metrics = io::evaluate(label, &positions, map, truth)?;
    let times: Vec<_> = rows.iter().map(|r| r.time).collect();
    io::write_steps(
        &dir.join(format!("steps_{label}.csv")),
        &times,
        &metrics.consecutive_step_distances_m,
    )?;
    Ok(metrics)
}

fn print_metrics(report: &MetricsReport) {
    println!("label,rmse_to_truth_m,rms_distance_to_track_m");
    for v in &report.variants {
        let rmse = v.rmse_to_truth_m.map(|r| format!("{r:.3}")).unwrap_or_default();
        println!("{},{rmse},{:.3}", v.label, v.rms_distance_to_track_m);
    }
}

fn simulate(cli: &Cli, scenario: &Path, out: &Path) -> CliResult<()> {
    let config = load_scenario(cli, scenario)?;
    create_dir(out)?;
    let data = sim::generate(&config)?;
    io::write_observations(&out.join("observations.csv"), &data.epochs)?;
    io::write_truth(&out.join("truth.csv"), &data.epochs)?;
    io::write_track(&out.join("track.geojson"), std::slice::from_ref(&data.track))?;
    io::write_initial_state(&out.join("initial_state.json"), &data.initial)?;
    let filter_toml = toml::to_string(&config.filter).expect("filter config serializes");
    std::fs::write(out.join("filter.toml"), filter_toml)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;

    let truth = data.truth();
    let mut report = MetricsReport::default();
    for features in Features::ALL {
        let run = sim::run_variant(&data, &config.filter, features)?;
        report.variants.push(write_variant(
            out,
            features.label(),
            &run.solutions,
            &data.map,
            Some(&truth),
        )?);
    }
    io::write_metrics(&out.join("metrics.csv"), &report)?;
    print_metrics(&report);
    Ok(())
}

/// Position and clock bias from the first epoch, zero velocity and drift.
fn least_squares_initial(epochs: &[sim::EpochRecord]) -> CliResult<StateEstimate> {
    let first = epochs
        .first()
        .ok_or_else(|| Failure::Runtime("observation file has no epochs".into()))?;
    let sats: Vec<_> = first.observations.iter().map(|o| o.sat_position).collect();
    let ranges: Vec<_> = first
        .observations
        .iter()
        .map(|o| o.pseudorange + SPEED_OF_LIGHT * o.sat_clock_offset)
        .collect();
    let (position, bias) = least_squares_fix(&sats, &ranges)?;
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<3>(POS).copy_from(&position);
    mean[CLOCK_BIAS] = bias;
    Ok(StateEstimate::new(mean, initial_covariance(&InitialSigma::default()))?)
}

fn filter(
    cli: &Cli,
    observations: &Path,
    track: &Path,
    features: Features,
    init: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let config: FilterConfig = match &cli.config {
        Some(path) => read_toml(path)?,
        None => FilterConfig::default(),
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(format!("filter configuration: {e}")))?;
    let epochs = io::load_observations(observations)?;
    let map = io::load_track(track)?;
    let initial = match init {
        Some(path) => io::load_initial_state(path)?,
        None => least_squares_initial(&epochs)?,
    };
    create_dir(out)?;
    let solutions = run_filter(&epochs, initial, &config, features, Some(&map))?;
    let metrics = write_variant(out, features.label(), &solutions, &map, None)?;
    let report = MetricsReport {
        variants: vec![metrics],
    };
    io::write_metrics(&out.join("metrics.csv"), &report)?;
    print_metrics(&report);
    Ok(())
}

fn evaluate(trajectory: &Path, track: &Path, truth: Option<&Path>) -> CliResult<()> {
    let rows = io::load_trajectory(trajectory)?;
    let map = io::load_track(track)?;
    let positions: Vec<_> = rows.iter().map(|r| r.position).collect();
    let truth = truth.map(io::load_truth).transpose()?;
    let truth_positions = match &truth {
        Some(t) => {
            if t.len() != rows.len() || t.iter().zip(&rows).any(|(a, b)| a.time != b.time) {
                return Err(Failure::Runtime(
                    "truth and trajectory epochs do not match".into(),
                ));
            }
            Some(t.iter().map(|r| r.position).collect::<Vec<_>>())
        }
        None => None,
    };
    let label = trajectory
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trajectory");
    let metrics = io::evaluate(label, &positions, &map, truth_positions.as_deref())?;
    print_metrics(&MetricsReport {
        variants: vec![metrics],
    });
    Ok(())
}

fn table1(cli: &Cli, scenario: &Path, seeds: usize) -> CliResult<()> {
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    let config = load_scenario(cli, scenario)?;
    let summary = sim::multi_seed_grid(&config, seeds)?;
    let mean = summary.mean();
    println!(",without_soft_constraint,with_soft_constraint");
    println!("with_mixing,{:.2},{:.2}", mean.cells[0][0], mean.cells[0][1]);
    println!("without_mixing,{:.2},{:.2}", mean.cells[1][0], mean.cells[1][1]);
    let held = summary.grids.iter().filter(|g| g.ordering_holds()).count();
    eprintln!("ordering held in {held} of {seeds} seeds");
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate { scenario, out } => simulate(cli, scenario, out),
        Command::Filter {
            observations,
            track,
            mixing,
            constraint,
            init,
            out,
        } => filter(
            cli,
            observations,
            track,
            Features::new(*mixing, *constraint),
            init.as_deref(),
            out,
        ),
        Command::Evaluate {
            trajectory,
            track,
            truth,
        } => evaluate(trajectory, track, truth.as_deref()),
        Command::Table1 { scenario, seeds } => table1(cli, scenario, *seeds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
