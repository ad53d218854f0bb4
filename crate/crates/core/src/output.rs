//! Run directory layout and writers.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::ScenarioConfig;
use crate::engine::RunOutput;
use crate::error::{CoreError, Result};
use crate::station::{write_chart_csv, write_chart_jsonl};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const CHART_CSV_FILE: &str = "station_chart.csv";
pub const CHART_JSONL_FILE: &str = "station_chart.jsonl";
pub const TAXI_LEDGER_FILE: &str = "taxi_ledger.csv";
pub const TRIP_LEDGER_FILE: &str = "trip_ledger.csv";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CoreError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Writes every artifact of one run into `dir`, which must exist.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, out: &RunOutput) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &serde_json::to_value(cfg)?)?;
    writeln!(w).map_err(|e| CoreError::io(&path, e))?;
    finish(w, &path)?;

    let path = dir.join(SUMMARY_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &out.summary)?;
    writeln!(w).map_err(|e| CoreError::io(&path, e))?;
    finish(w, &path)?;

    let path = dir.join(CURVES_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["bin_start_min", "customer_count", "charging_count"])?;
    for (i, (c, g)) in out
        .curves
        .customer
        .iter()
        .zip(&out.curves.charging)
        .enumerate()
    {
        let start = i as f64 * out.curves.bin_minutes;
        w.write_record([start.to_string(), c.to_string(), g.to_string()])?;
    }
    w.flush().map_err(|e| CoreError::io(&path, e))?;

    let path = dir.join(TIMESERIES_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let stations = out.stations.len();
    let mut header: Vec<String> = [
        "bin_start_min",
        "customer_requests",
        "charging_arrivals",
        "waiting_list",
        "occupied_chargers",
        "queued_at_stations",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..stations).map(|s| format!("station_{s}_occupied")));
    w.write_record(&header)?;
    for b in &out.timeseries {
        let mut row = vec![
            b.bin_start_min.to_string(),
            b.customer_requests.to_string(),
            b.charging_arrivals.to_string(),
            b.waiting_list.to_string(),
            b.occupied_chargers.to_string(),
            b.queued_at_stations.to_string(),
        ];
        row.extend(b.station_occupancy.iter().map(u32::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CoreError::io(&path, e))?;

    let path = dir.join(CHART_CSV_FILE);
    let mut w = create(&path)?;
    let last = out.summary.steps_simulated.saturating_sub(1);
    write_chart_csv(&mut w, &out.stations, last).map_err(|e| CoreError::io(&path, e))?;
    finish(w, &path)?;

    let path = dir.join(CHART_JSONL_FILE);
    let mut w = create(&path)?;
    write_chart_jsonl(&mut w, &out.stations).map_err(|e| CoreError::io(&path, e))?;
    finish(w, &path)?;

    let path = dir.join(TAXI_LEDGER_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    for row in &out.taxis {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CoreError::io(&path, e))?;

    let path = dir.join(TRIP_LEDGER_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "trip_id",
        "request_step",
        "origin_region",
        "status",
        "taxi_id",
        "pickup_step",
        "dropoff_step",
    ])?;
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in &out.trips {
        let status = serde_json::to_value(t.status)?;
        w.write_record([
            t.trip_id.to_string(),
            t.request_step.to_string(),
            t.origin_region.to_string(),
            status.as_str().unwrap_or_default().to_string(),
            opt(t.taxi_id.map(|x| x as u64)),
            opt(t.pickup_step),
            opt(t.dropoff_step),
        ])?;
    }
    w.flush().map_err(|e| CoreError::io(&path, e))?;
    Ok(())
}

/// Creates `dir` for a new run. An existing directory is refused unless
/// `force`, in which case it is emptied first.
pub fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(CoreError::InvalidConfig(format!(
                "run directory {} already exists (use --force to overwrite)",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}
