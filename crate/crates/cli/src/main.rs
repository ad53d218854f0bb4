#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evfleet_core::demand::{
    extract_trips, read_pings, synthesize, write_trips, DemandDensity, DemandProfile, DensityLevel,
    FareSchedule, SpeedDistribution, TimeWindow,
};
use evfleet_core::engine::{load_demand, site_stations, Simulation};
use evfleet_core::experiment::{run_sweep, write_rows, SweepSpec};
use evfleet_core::geo::{PlanePoint, Region};
use evfleet_core::output::{prepare_run_dir, write_run};
use evfleet_core::siting::{kmeans_sites, write_sites, KMeansOptions};
use evfleet_core::{CoreError, ScenarioConfig};

#[derive(Parser)]
#[command(name = "evfleet", version, about = "Electric taxi fleet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Site charging stations at k-means centroids of trip origins.
    Site {
        #[arg(long)]
        trips: PathBuf,
        #[arg(long, default_value_t = 100)]
        stations: usize,
        #[arg(long, default_value_t = 16)]
        capacity: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn raw vehicle pings into trip records.
    Extract {
        #[arg(long)]
        pings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a synthetic trips file from a demand profile.
    GenDemand {
        /// Profile file (JSON or TOML); the built-in two-peak profile if omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// low, middle, high, or a plain multiplier.
        #[arg(long, default_value = "1")]
        density: String,
        #[arg(long, default_value_t = 20_000.0)]
        weekly_total: f64,
        #[arg(long, default_value_t = 0.01)]
        desk_scale: f64,
        #[arg(long, default_value_t = 7)]
        days: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario and write its artifacts to a new run directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Parent directory of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        bin_minutes: Option<f64>,
    },
    /// Run a parameter sweep and write aggregate and per-seed tables.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long)]
        bin_minutes: Option<f64>,
    },
}

enum Failure {
    /// Bad arguments, files or configuration.
    Input(String),
    /// A run broke down after starting, or some sweep cells failed.
    Run(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Invariant { .. } | CoreError::EmptyIncomes => Failure::Run(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

fn parse_density(text: &str) -> Result<DemandDensity, Failure> {
    match text.to_ascii_lowercase().as_str() {
        "low" => Ok(DemandDensity::Level(DensityLevel::Low)),
        "middle" => Ok(DemandDensity::Level(DensityLevel::Middle)),
        "high" => Ok(DemandDensity::Level(DensityLevel::High)),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|f| f.is_finite() && *f >= 0.0)
            .map(DemandDensity::Factor)
            .ok_or_else(|| {
                Failure::Input(format!(
                    "density `{text}` is not low, middle, high or a non-negative number"
                ))
            }),
    }
}

fn read_profile(path: &Path) -> Result<DemandProfile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn cmd_site(
    trips: &Path,
    stations: usize,
    capacity: u32,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let region = Region::default();
    let load = evfleet_core::demand::load_trips(trips)?;
    if !load.rejected.is_empty() {
        log::warn!("skipped {} invalid trip rows", load.rejected.len());
    }
    let origins: Vec<PlanePoint> = load
        .trips
        .iter()
        .filter_map(|t| region.project(t.origin).ok())
        .collect();
    let sites = kmeans_sites(
        &origins,
        stations,
        capacity,
        seed,
        &KMeansOptions::default(),
    )?;
    write_sites(out, &sites, &region)?;
    println!("wrote {} sites to {}", sites.len(), out.display());
    Ok(())
}

fn cmd_extract(pings: &Path, out: &Path) -> Result<(), Failure> {
    let load = read_pings(pings)?;
    let bad_rows = load.rejected.len();
    let result = extract_trips(load.pings, &Region::default(), &FareSchedule::default());
    write_trips(out, &result.trips)?;
    let r = &result.report;
    println!(
        "{} trips from {} vehicles; skipped {} bad rows, {} duplicate pings, {} too short, {} unlocated, {} out of region, {} zero length",
        result.trips.len(),
        r.vehicles,
        bad_rows,
        r.duplicate_pings,
        r.too_short,
        r.unlocated,
        r.out_of_region,
        r.zero_length
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_demand(
    profile: Option<&Path>,
    density: &str,
    weekly_total: f64,
    desk_scale: f64,
    days: i64,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let density = parse_density(density)?;
    if days <= 0 || !(desk_scale > 0.0) || !(weekly_total >= 0.0) {
        return Err(Failure::Input(
            "days, desk-scale and weekly-total must be positive".into(),
        ));
    }
    let mut profile = match profile {
        Some(p) => read_profile(p)?,
        None => DemandProfile::two_ring_default(weekly_total),
    };
    profile.weekly_total = density.weekly_total(profile.weekly_total, desk_scale);
    let trips = synthesize(
        &profile,
        TimeWindow::days(days),
        seed,
        &Region::default(),
        &FareSchedule::default(),
        &SpeedDistribution::default(),
    )?;
    write_trips(out, &trips)?;
    println!("wrote {} trips to {}", trips.len(), out.display());
    Ok(())
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    bin_minutes: Option<f64>,
) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(b) = bin_minutes {
        cfg.bin_minutes = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    force: bool,
    bin_minutes: Option<f64>,
) -> Result<(), Failure> {
    let cfg = load_config(config, seed, bin_minutes)?;
    let dir = out.join(cfg.run_name());
    prepare_run_dir(&dir, force)?;
    let trips = load_demand(&cfg)?;
    let sites = site_stations(&cfg, &trips)?;
    let output = Simulation::new(cfg.clone(), sites, &trips)?.run()?;
    write_run(&dir, &cfg, &output)?;
    let m = &output.summary.metrics;
    println!(
        "{}: fill rate {:.4}, mean wait {:.2} min, gini {:.4}",
        dir.display(),
        m.fill_rate,
        m.avg_wait_min,
        m.gini
    );
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    parallelism: usize,
    out: &Path,
    bin_minutes: Option<f64>,
) -> Result<(), Failure> {
    let mut spec = SweepSpec::from_path(config)?;
    if let Some(b) = bin_minutes {
        spec.base.bin_minutes = b;
    }
    spec.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    let result = run_sweep(&spec, parallelism, Some(&out.join("runs")))?;
    write_rows(&out.join("aggregate.csv"), &result.aggregate)?;
    write_rows(&out.join("details.csv"), &result.details)?;
    println!(
        "{} cells, {} runs ({} cached), {} failed; tables in {}",
        result.aggregate.len(),
        result.details.len() + result.failures.len(),
        result.cached,
        result.failures.len(),
        out.display()
    );
    if result.failures.is_empty() {
        Ok(())
    } else {
        for f in &result.failures {
            eprintln!("failed: {} seed {}: {}", f.cell.label(), f.seed, f.message);
        }
        Err(Failure::Run(format!(
            "{} runs failed",
            result.failures.len()
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Site {
            trips,
            stations,
            capacity,
            seed,
            out,
        } => cmd_site(trips, *stations, *capacity, *seed, out),
        Command::Extract { pings, out } => cmd_extract(pings, out),
        Command::GenDemand {
            profile,
            density,
            weekly_total,
            desk_scale,
            days,
            seed,
            out,
        } => cmd_gen_demand(
            profile.as_deref(),
            density,
            *weekly_total,
            *desk_scale,
            *days,
            *seed,
            out,
        ),
        Command::Simulate {
            config,
            seed,
            out,
            force,
            bin_minutes,
        } => cmd_simulate(config, *seed, out, *force, *bin_minutes),
        Command::Sweep {
            config,
            parallelism,
            out,
            bin_minutes,
        } => cmd_sweep(config, *parallelism, out, *bin_minutes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
