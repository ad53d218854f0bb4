use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TRIP_HEADER: &str =
    "trip_id,request_time_s,origin_lon,origin_lat,dest_lon,dest_lat,distance_km,duration_min,fare\n";

fn evfleet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evfleet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn one_trip_scenario(dir: &Path) {
    fs::write(
        dir.join("trips.csv"),
        format!("{TRIP_HEADER}0,600,116.40,40.00,116.45,40.00,4.4,12,15.5\n"),
    )
    .unwrap();
    fs::write(
        dir.join("sites.csv"),
        "station_id,lon,lat,capacity\n0,116.40,40.00,1\n",
    )
    .unwrap();
    fs::write(
        dir.join("scenario.toml"),
        r#"
fleet_size = 1
station_count = 1
station_capacity = 1
sites_path = "sites.csv"

[window]
start_s = 0
duration_s = 14400

[demand]
kind = "trips"
path = "trips.csv"
"#,
    )
    .unwrap();
}

#[test]
fn site_writes_one_row_per_station() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("trips.csv"),
        format!(
            "{TRIP_HEADER}\
             0,0,116.00,40.00,116.1,40.0,5,10,15\n\
             1,60,116.01,40.00,116.1,40.0,5,10,15\n\
             2,120,116.80,40.30,116.1,40.0,5,10,15\n\
             3,180,116.81,40.30,116.1,40.0,5,10,15\n"
        ),
    )
    .unwrap();
    let out = evfleet(
        &[
            "site",
            "--trips",
            "trips.csv",
            "--stations",
            "2",
            "--capacity",
            "5",
            "--out",
            "sites.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("sites.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",5")));
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = evfleet(
        &["site", "--trips", "nope.csv", "--out", "sites.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.csv"));

    let out = evfleet(&["simulate", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_reported_with_its_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "fleet_size = 10\nstation_count = 0\n",
    )
    .unwrap();
    let out = evfleet(&["simulate", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("station_count"), "{}", stderr(&out));

    fs::write(dir.path().join("typo.toml"), "fleet_sise = 10\n").unwrap();
    let out = evfleet(&["simulate", "--config", "typo.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_demand_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "gen-demand",
            "--days",
            "1",
            "--density",
            "low",
            "--seed",
            "9",
            "--out",
            out,
        ]
    };
    assert!(evfleet(&args("a.csv"), dir.path()).status.success());
    assert!(evfleet(&args("b.csv"), dir.path()).status.success());
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().lines().count() > 10);

    let out = evfleet(
        &["gen-demand", "--density", "lots", "--out", "c.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_a_run_directory_once() {
    let dir = tempfile::tempdir().unwrap();
    one_trip_scenario(dir.path());
    let args = ["simulate", "--config", "scenario.toml", "--out", "runs"];
    let out = evfleet(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));

    let runs: Vec<_> = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-0"));
    for f in [
        "summary.json",
        "config.json",
        "curves.csv",
        "timeseries.csv",
        "station_chart.csv",
        "station_chart.jsonl",
        "taxi_ledger.csv",
        "trip_ledger.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metrics"]["fill_rate"], 1.0);
    assert_eq!(summary["metrics"]["served"], 1);

    let again = evfleet(&args, dir.path());
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"));

    let forced = evfleet(
        &[
            "simulate",
            "--config",
            "scenario.toml",
            "--out",
            "runs",
            "--force",
        ],
        dir.path(),
    );
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn sweep_writes_aggregate_and_detail_tables() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        r#"
[base]
station_count = 4
[base.window]
start_s = 0
duration_s = 21600
[base.demand]
kind = "synthetic"
weekly_total = 2000.0
desk_scale = 1.0

[axes]
fleet_size = [5, 10]
station_capacity = [1, 2]
seeds = [1, 2, 3]
"#,
    )
    .unwrap();
    let out = evfleet(
        &[
            "sweep",
            "--config",
            "sweep.toml",
            "--parallelism",
            "2",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = |f: &str| {
        fs::read_to_string(dir.path().join("out").join(f))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("aggregate.csv"), 1 + 4);
    assert_eq!(lines("details.csv"), 1 + 12);
    let runs = fs::read_dir(dir.path().join("out/runs")).unwrap().count();
    assert_eq!(runs, 12);
}
