//! Customer demand: trip records, extraction from vehicle pings, trip files
//! and synthetic generation.

mod extract;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;

pub use extract::{extract_trips, Extraction, ExtractionReport, VehiclePing, MIN_TRIP_SECONDS};
pub use io::{load_trips, read_pings, write_trips, PingLoad, RowIssue, TripLoad};
pub use synth::{
    scale_density, synthesize, DemandDensity, DemandProfile, DensityLevel, IntensityCurve,
    SpatialCluster, SpeedDistribution, TimeWindow, HIGH_WEEKLY_TRIPS, LOW_WEEKLY_TRIPS,
    MIDDLE_WEEKLY_TRIPS,
};

/// Shortest trip that survives cleaning, in minutes.
pub const MIN_TRIP_MINUTES: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRequest {
    pub trip_id: u64,
    /// Seconds on the scenario's time axis (epoch seconds for extracted data).
    pub request_time_s: i64,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
    pub distance_km: f64,
    pub duration_min: f64,
    pub fare: f64,
}

impl TripRequest {
    /// Checks the record-level invariants; the error names the broken rule.
    pub fn validate(&self) -> Result<(), &'static str> {
        let finite = [
            self.origin.lon,
            self.origin.lat,
            self.destination.lon,
            self.destination.lat,
            self.distance_km,
            self.duration_min,
            self.fare,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite field");
        }
        if self.duration_min < MIN_TRIP_MINUTES {
            return Err("duration below two minutes");
        }
        if self.origin == self.destination {
            return Err("origin equals destination");
        }
        if self.distance_km <= 0.0 {
            return Err("non-positive distance");
        }
        if self.fare < 0.0 {
            return Err("negative fare");
        }
        Ok(())
    }
}

/// Flag-fall fare covering the first `included_km`, then a per-km rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FareSchedule {
    pub flag_fall: f64,
    pub included_km: f64,
    pub per_km: f64,
}

impl Default for FareSchedule {
    fn default() -> Self {
        Self {
            flag_fall: 13.0,
            included_km: 3.0,
            per_km: 2.3,
        }
    }
}

impl FareSchedule {
    pub fn fare(&self, distance_km: f64) -> f64 {
        self.flag_fall + self.per_km * (distance_km - self.included_km).max(0.0)
    }
}
