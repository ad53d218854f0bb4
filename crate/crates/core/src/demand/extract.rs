//! Trip extraction from raw vehicle pings.
//!
//! Pings are grouped per vehicle and ordered by time. Every maximal run of
//! in-service pings becomes one candidate trip; the candidate is kept when
//! both endpoints can be located and it lasted at least two minutes.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{FareSchedule, TripRequest};
use crate::geo::{manhattan, GeoPoint, Region};

/// Trips shorter than this are cleaning artefacts.
pub const MIN_TRIP_SECONDS: i64 = 120;

/// Missing endpoint coordinates are borrowed from the closest ping no further
/// than this from the trip's start or end time.
pub const ENDPOINT_WINDOW_SECONDS: i64 = 180;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehiclePing {
    pub vehicle_id: String,
    pub timestamp: i64,
    pub location: Option<GeoPoint>,
    pub speed_kmh: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExtractionReport {
    pub vehicles: usize,
    pub in_service_runs: usize,
    pub duplicate_pings: usize,
    pub too_short: usize,
    pub unlocated: usize,
    pub out_of_region: usize,
    pub zero_length: usize,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub trips: Vec<TripRequest>,
    pub report: ExtractionReport,
}

struct Candidate<'a> {
    vehicle: &'a str,
    start: i64,
    end: i64,
    origin: GeoPoint,
    destination: GeoPoint,
}

fn locate_endpoint(pings: &[&VehiclePing], idx: usize) -> Option<GeoPoint> {
    if let Some(loc) = pings[idx].location {
        return Some(loc);
    }
    let t = pings[idx].timestamp;
    pings
        .iter()
        .filter_map(|p| {
            p.location
                .map(|loc| ((p.timestamp - t).abs(), p.timestamp, loc))
        })
        .filter(|(gap, _, _)| *gap <= ENDPOINT_WINDOW_SECONDS)
        // closest in time, earlier ping on ties
        .min_by_key(|(gap, ts, _)| (*gap, *ts))
        .map(|(_, _, loc)| loc)
}

pub fn extract_trips(
    pings: impl IntoIterator<Item = VehiclePing>,
    region: &Region,
    fare: &FareSchedule,
) -> Extraction {
    let mut by_vehicle: BTreeMap<String, Vec<VehiclePing>> = BTreeMap::new();
    for p in pings {
        by_vehicle.entry(p.vehicle_id.clone()).or_default().push(p);
    }

    let mut report = ExtractionReport {
        vehicles: by_vehicle.len(),
        ..Default::default()
    };
    let mut candidates = Vec::new();

    for (vehicle, pings) in &mut by_vehicle {
        pings.sort_by_key(|p| p.timestamp);
        let before = pings.len();
        pings.dedup_by_key(|p| p.timestamp);
        if pings.len() != before {
            warn!(
                "vehicle {vehicle}: dropped {} duplicate pings",
                before - pings.len()
            );
            report.duplicate_pings += before - pings.len();
        }
        let refs: Vec<&VehiclePing> = pings.iter().collect();

        let mut i = 0;
        while i < refs.len() {
            if !refs[i].in_service {
                i += 1;
                continue;
            }
            let mut j = i;
            while j + 1 < refs.len() && refs[j + 1].in_service {
                j += 1;
            }
            report.in_service_runs += 1;

            let (start, end) = (refs[i].timestamp, refs[j].timestamp);
            if end - start < MIN_TRIP_SECONDS {
                report.too_short += 1;
            } else {
                match (locate_endpoint(&refs, i), locate_endpoint(&refs, j)) {
                    (Some(origin), Some(destination)) => candidates.push(Candidate {
                        vehicle: vehicle.as_str(),
                        start,
                        end,
                        origin,
                        destination,
                    }),
                    _ => report.unlocated += 1,
                }
            }
            i = j + 1;
        }
    }

    candidates.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.vehicle.cmp(b.vehicle)));

    let mut trips = Vec::with_capacity(candidates.len());
    for c in candidates {
        let (o, d) = match (region.project(c.origin), region.project(c.destination)) {
            (Ok(o), Ok(d)) => (o, d),
            _ => {
                report.out_of_region += 1;
                continue;
            }
        };
        let distance_km = manhattan(o, d);
        if distance_km <= 0.0 {
            report.zero_length += 1;
            continue;
        }
        trips.push(TripRequest {
            trip_id: trips.len() as u64,
            request_time_s: c.start,
            origin: c.origin,
            destination: c.destination,
            distance_km,
            duration_min: (c.end - c.start) as f64 / 60.0,
            fare: fare.fare(distance_km),
        });
    }

    Extraction { trips, report }
}
