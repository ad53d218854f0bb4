//! Parameter sweeps: a base scenario crossed with lists of alternative values,
//! each cell repeated over several seeds and run in parallel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, StrategySpec};
use crate::demand::{DemandDensity, TripRequest};
use crate::engine::{load_demand, site_stations, RunSummary, Simulation};
use crate::error::{CoreError, Result};
use crate::output::SUMMARY_FILE;
use crate::siting::StationSite;

/// Alternative values per axis; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub fleet_size: Vec<usize>,
    pub battery_range_km: Vec<f64>,
    pub station_capacity: Vec<u32>,
    pub strategy_index: Vec<usize>,
    pub demand_density: Vec<DemandDensity>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: ScenarioConfig,
    #[serde(default)]
    pub axes: SweepAxes,
    /// Upper bound on the number of runs (cells times seeds).
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
}

fn default_max_runs() -> usize {
    10_000
}

impl SweepSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed: std::result::Result<Self, String> = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let mut spec = parsed.map_err(|message| CoreError::Parse {
            path: path.into(),
            message,
        })?;
        if let Some(dir) = path.parent() {
            spec.base.resolve_paths(dir);
        }
        Ok(spec)
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
            if axis.is_empty() {
                vec![base]
            } else {
                axis.to_vec()
            }
        }
        let b = &self.base;
        let strategies: Vec<StrategySpec> = if self.axes.strategy_index.is_empty() {
            vec![b.strategy]
        } else {
            self.axes
                .strategy_index
                .iter()
                .map(|&i| StrategySpec::Index(i))
                .collect()
        };
        let mut cells = Vec::new();
        for &fleet_size in &or_base(&self.axes.fleet_size, b.fleet_size) {
            for &station_capacity in &or_base(&self.axes.station_capacity, b.station_capacity) {
                for &battery_range_km in &or_base(&self.axes.battery_range_km, b.battery_range_km) {
                    for &strategy in &strategies {
                        for &density in &or_base(&self.axes.demand_density, b.demand.density()) {
                            cells.push(SweepCell {
                                fleet_size,
                                station_capacity,
                                battery_range_km,
                                strategy,
                                density,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.axes.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.axes.seeds.clone()
        }
    }

    pub fn run_count(&self) -> usize {
        self.cells().len() * self.seeds().len()
    }

    /// Checks the run cap and every cell's configuration.
    pub fn validate(&self) -> Result<()> {
        let runs = self.run_count();
        if runs > self.max_runs {
            return Err(CoreError::InvalidConfig(format!(
                "sweep has {runs} runs, above max_runs = {}",
                self.max_runs
            )));
        }
        for cell in self.cells() {
            cell.apply(&self.base, self.base.seed)
                .validate()
                .map_err(|e| CoreError::InvalidConfig(format!("cell {}: {e}", cell.label())))?;
        }
        Ok(())
    }
}

/// One coordinate of the sweep grid, seeds excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub fleet_size: usize,
    pub station_capacity: u32,
    pub battery_range_km: f64,
    pub strategy: StrategySpec,
    pub density: DemandDensity,
}

impl SweepCell {
    pub fn apply(&self, base: &ScenarioConfig, seed: u64) -> ScenarioConfig {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.fleet_size = self.fleet_size;
        cfg.station_capacity = self.station_capacity;
        cfg.battery_range_km = self.battery_range_km;
        cfg.strategy = self.strategy;
        cfg.demand.set_density(self.density);
        cfg
    }

    pub fn strategy_label(&self) -> String {
        match self.strategy {
            StrategySpec::Index(i) => i.to_string(),
            StrategySpec::Weights(w) => w.map(|x| x.to_string()).join(";"),
        }
    }

    pub fn label(&self) -> String {
        format!(
            "fleet={} capacity={} range={} strategy={} density={}",
            self.fleet_size,
            self.station_capacity,
            self.battery_range_km,
            self.strategy_label(),
            self.density.label()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub fleet_size: usize,
    pub station_capacity: u32,
    pub battery_range_km: f64,
    pub strategy: String,
    pub demand_density: String,
    pub seed: u64,
    pub config_hash: String,
    pub fill_rate: f64,
    pub avg_wait_min: f64,
    pub gini: f64,
    pub unsatisfied_rate: f64,
    pub total_requests: usize,
    pub charge_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub fleet_size: usize,
    pub station_capacity: u32,
    pub battery_range_km: f64,
    pub strategy: String,
    pub demand_density: String,
    pub runs: usize,
    pub fill_rate: f64,
    pub fill_rate_se: f64,
    pub avg_wait_min: f64,
    pub avg_wait_se: f64,
    pub gini: f64,
    pub gini_se: f64,
    pub unsatisfied_rate: f64,
    pub unsatisfied_rate_se: f64,
}

#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub cell: SweepCell,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub aggregate: Vec<AggregateRow>,
    pub details: Vec<DetailRow>,
    pub failures: Vec<SweepFailure>,
    /// Runs answered from an existing run directory.
    pub cached: usize,
}

/// Mean and standard error of the mean; the error is 0 for fewer than two
/// values.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type Inputs = (Arc<Vec<TripRequest>>, Arc<Vec<StationSite>>);

/// Demand and sites depend only on the seed and the demand density, so they
/// are built once per pair and shared by every cell.
fn prepare_inputs(
    spec: &SweepSpec,
    cells: &[SweepCell],
    seeds: &[u64],
) -> BTreeMap<(u64, String), Result<Inputs, String>> {
    let mut keys: Vec<(u64, DemandDensity)> = Vec::new();
    for &seed in seeds {
        for c in cells {
            if !keys
                .iter()
                .any(|(s, d)| *s == seed && d.label() == c.density.label())
            {
                keys.push((seed, c.density));
            }
        }
    }
    keys.par_iter()
        .map(|&(seed, density)| {
            let mut cfg = spec.base.clone();
            cfg.seed = seed;
            cfg.demand.set_density(density);
            let built = load_demand(&cfg)
                .and_then(|trips| {
                    site_stations(&cfg, &trips).map(|sites| (Arc::new(trips), Arc::new(sites)))
                })
                .map_err(|e| e.to_string());
            ((seed, density.label()), built)
        })
        .collect()
}

fn read_cached(dir: &Path) -> Option<RunSummary> {
    let text = std::fs::read_to_string(dir.join(SUMMARY_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Runs every cell and seed on a pool of `parallelism` threads. With
/// `runs_dir`, each run's summary is stored under `<hash>-<seed>` and
/// existing summaries are reused instead of re-running.
pub fn run_sweep(
    spec: &SweepSpec,
    parallelism: usize,
    runs_dir: Option<&Path>,
) -> Result<SweepResult> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| CoreError::InvalidConfig(format!("thread pool: {e}")))?;
    let cells = spec.cells();
    let seeds = spec.seeds();

    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();

    let outcomes: Vec<(usize, u64, bool, Result<RunSummary, String>)> = pool.install(|| {
        let need_inputs: Vec<(usize, u64)> = jobs
            .iter()
            .copied()
            .filter(|&(c, s)| {
                let dir = runs_dir.map(|d| d.join(cells[c].apply(&spec.base, s).run_name()));
                dir.and_then(|d| read_cached(&d)).is_none()
            })
            .collect();
        let mut needed_cells = Vec::new();
        let mut needed_seeds = Vec::new();
        for &(c, s) in &need_inputs {
            needed_cells.push(cells[c]);
            if !needed_seeds.contains(&s) {
                needed_seeds.push(s);
            }
        }
        let inputs = prepare_inputs(spec, &needed_cells, &needed_seeds);

        jobs.par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let cfg = cell.apply(&spec.base, seed);
                let dir: Option<PathBuf> = runs_dir.map(|d| d.join(cfg.run_name()));
                if let Some(summary) = dir.as_deref().and_then(read_cached) {
                    return (c, seed, true, Ok(summary));
                }
                let result = match inputs.get(&(seed, cell.density.label())) {
                    Some(Ok((trips, sites))) => Simulation::new(cfg.clone(), sites.to_vec(), trips)
                        .and_then(Simulation::run)
                        .map_err(|e| e.to_string()),
                    Some(Err(e)) => Err(e.clone()),
                    None => Err("demand inputs missing".to_string()),
                }
                .and_then(|out| {
                    if let Some(dir) = &dir {
                        store_summary(dir, &out.summary).map_err(|e| e.to_string())?;
                    }
                    Ok(out.summary)
                });
                (c, seed, false, result)
            })
            .collect()
    });

    let mut result = SweepResult::default();
    let mut per_cell: Vec<Vec<RunSummary>> = vec![Vec::new(); cells.len()];
    for (c, seed, cached, outcome) in outcomes {
        match outcome {
            Ok(summary) => {
                if cached {
                    result.cached += 1;
                }
                let cell = &cells[c];
                let m = &summary.metrics;
                result.details.push(DetailRow {
                    fleet_size: cell.fleet_size,
                    station_capacity: cell.station_capacity,
                    battery_range_km: cell.battery_range_km,
                    strategy: cell.strategy_label(),
                    demand_density: cell.density.label(),
                    seed,
                    config_hash: summary.config_hash.clone(),
                    fill_rate: m.fill_rate,
                    avg_wait_min: m.avg_wait_min,
                    gini: m.gini,
                    unsatisfied_rate: m.unsatisfied_rate,
                    total_requests: m.total_requests,
                    charge_sessions: m.charge_sessions,
                });
                per_cell[c].push(summary);
            }
            Err(message) => {
                log::error!("{} seed {seed}: {message}", cells[c].label());
                result.failures.push(SweepFailure {
                    cell: cells[c],
                    seed,
                    message,
                });
            }
        }
    }

    for (cell, runs) in cells.iter().zip(&per_cell) {
        let pick = |f: fn(&RunSummary) -> f64| mean_se(&runs.iter().map(f).collect::<Vec<_>>());
        let (fill_rate, fill_rate_se) = pick(|s| s.metrics.fill_rate);
        let (avg_wait_min, avg_wait_se) = pick(|s| s.metrics.avg_wait_min);
        let (gini, gini_se) = pick(|s| s.metrics.gini);
        let (unsatisfied_rate, unsatisfied_rate_se) = pick(|s| s.metrics.unsatisfied_rate);
        result.aggregate.push(AggregateRow {
            fleet_size: cell.fleet_size,
            station_capacity: cell.station_capacity,
            battery_range_km: cell.battery_range_km,
            strategy: cell.strategy_label(),
            demand_density: cell.density.label(),
            runs: runs.len(),
            fill_rate,
            fill_rate_se,
            avg_wait_min,
            avg_wait_se,
            gini,
            gini_se,
            unsatisfied_rate,
            unsatisfied_rate_se,
        });
    }
    Ok(result)
}

fn store_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(summary)? + "\n";
    std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}
