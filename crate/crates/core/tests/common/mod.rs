//! Oracles and scenario builders shared by the integration targets.
#![allow(dead_code)]

use evfleet_core::demand::{TimeWindow, TripRequest};
use evfleet_core::dispatch::{Candidate, StrategyWeights, TripContext, CANONICAL_STRATEGIES};
use evfleet_core::engine::Simulation;
use evfleet_core::geo::{PlanePoint, Region};
use evfleet_core::siting::StationSite;
use evfleet_core::ScenarioConfig;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Gini straight from the mean absolute difference over all ordered pairs.
pub fn pairwise_gini(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in xs {
        for b in xs {
            total += (a - b).abs();
        }
    }
    total / (2.0 * n * n * mean)
}

/// One randomised dispatch decision.
#[derive(Debug, Clone)]
pub struct MicroState {
    pub candidates: Vec<Candidate>,
    pub trip: TripContext,
    pub weights: StrategyWeights,
    pub threshold_km: f64,
}

/// Draws candidates from small integer grids so that equal scores, and so
/// the tie rule, come up often.
pub fn micro_state(rng: &mut ChaCha8Rng) -> MicroState {
    let range = [100.0, 200.0, 300.0][rng.random_range(0..3)];
    let w = CANONICAL_STRATEGIES[rng.random_range(0..16)];
    let mut weights = StrategyWeights::new(w, range);
    if rng.random_bool(0.3) {
        weights.q = [
            rng.random_range(0.01..2.0),
            rng.random_range(0.01..2.0),
            rng.random_range(0.01..2.0),
            rng.random_range(0.001..0.1),
        ];
    }
    let n = rng.random_range(0..12);
    let mut ids: Vec<usize> = (0..40).collect();
    for i in 0..ids.len() {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    let candidates = ids[..n]
        .iter()
        .map(|&taxi_id| {
            let operating_min = [0.0, 60.0, 120.0][rng.random_range(0..3)];
            Candidate {
                taxi_id,
                pickup_km: rng.random_range(0..8) as f64,
                empty_min: (rng.random_range(0..4) * 5) as f64,
                income: (rng.random_range(0..3) * 60) as f64,
                operating_min,
                soc_km: (rng.random_range(0..=(range as u32 / 10)) * 10) as f64,
            }
        })
        .collect();
    MicroState {
        candidates,
        trip: TripContext {
            trip_km: rng.random_range(1..30) as f64,
            dest_station_km: rng.random_range(0..15) as f64,
            dest_station_busy: rng.random_bool(0.5),
        },
        weights,
        threshold_km: 20.0,
    }
}

fn oracle_eligible(c: &Candidate, trip: &TripContext, threshold_km: f64) -> bool {
    let left = c.soc_km - c.pickup_km - trip.trip_km;
    let needs_charge = left <= threshold_km;
    left >= 0.0 && (!needs_charge || left >= trip.dest_station_km)
}

fn oracle_score(c: &Candidate, busy: bool, wt: &StrategyWeights) -> f64 {
    let rate = if c.operating_min > 0.0 {
        c.income / c.operating_min
    } else {
        0.0
    };
    let sign = if busy { 1.0 } else { -1.0 };
    let terms = [-c.pickup_km, c.empty_min, -rate, sign * c.soc_km];
    (0..4).map(|i| wt.w[i] * wt.q[i] * terms[i]).sum()
}

/// Eligible taxi ids whose score no other eligible taxi beats, ascending.
pub fn oracle_maxima(s: &MicroState) -> Vec<usize> {
    let eligible: Vec<&Candidate> = s
        .candidates
        .iter()
        .filter(|c| oracle_eligible(c, &s.trip, s.threshold_km))
        .collect();
    let mut out: Vec<usize> = eligible
        .iter()
        .filter(|a| {
            let sa = oracle_score(a, s.trip.dest_station_busy, &s.weights);
            eligible
                .iter()
                .all(|b| oracle_score(b, s.trip.dest_station_busy, &s.weights) <= sa)
        })
        .map(|c| c.taxi_id)
        .collect();
    out.sort_unstable();
    out
}

/// Brute-force pick with the tie rule: lowest id, or a uniform draw among
/// the maxima for the all-zero strategy.
pub fn oracle_select(s: &MicroState, rng: &mut ChaCha8Rng) -> Option<usize> {
    let maxima = oracle_maxima(s);
    if maxima.is_empty() {
        return None;
    }
    if s.weights.w.iter().all(|w| *w == 0.0) && maxima.len() > 1 {
        Some(maxima[rng.random_range(0..maxima.len())])
    } else {
        Some(maxima[0])
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random scenario in a 20 km square.
pub fn small_scenario(seed: u64) -> (ScenarioConfig, Vec<StationSite>, Vec<TripRequest>) {
    let mut r = rng(seed);
    let region = Region::default();
    let point = |r: &mut ChaCha8Rng| {
        PlanePoint::new(r.random_range(60.0..80.0), r.random_range(60.0..80.0))
    };
    let stations = r.random_range(1..5);
    let capacity = r.random_range(1..4);
    let sites: Vec<StationSite> = (0..stations)
        .map(|station_id| StationSite {
            station_id,
            location: point(&mut r),
            capacity,
        })
        .collect();
    let hours = 6;
    let n = r.random_range(0..250);
    let trips = (0..n)
        .map(|i| {
            let from = point(&mut r);
            let to = point(&mut r);
            let km = (from.x - to.x).abs() + (from.y - to.y).abs();
            TripRequest {
                trip_id: i as u64,
                request_time_s: r.random_range(0..hours * 3600),
                origin: region.unproject(from),
                destination: region.unproject(to),
                distance_km: km,
                duration_min: km * 2.0 + 1.0,
                fare: 13.0 + 2.3 * (km - 3.0).max(0.0),
            }
        })
        .collect();
    let cfg = ScenarioConfig {
        seed,
        fleet_size: r.random_range(0..25),
        battery_range_km: r.random_range(40.0..200.0),
        station_count: stations,
        station_capacity: capacity,
        recharge_threshold_km: 20.0,
        strategy: evfleet_core::StrategySpec::Index(r.random_range(1..=16)),
        window: TimeWindow {
            start_s: 0,
            duration_s: hours * 3600,
        },
        ..Default::default()
    };
    (cfg, sites, trips)
}

/// Per-step checks a caller can run between `Simulation::step` calls.
pub fn check_state(sim: &Simulation) -> Result<(), String> {
    use evfleet_core::engine::Activity;
    let step = sim.now();
    for t in sim.taxis() {
        if !(t.soc_km >= 0.0 && t.soc_km <= t.battery_range_km + 1e-9) {
            return Err(format!("step {step}: taxi {} soc {}", t.id, t.soc_km));
        }
    }
    let mut charging = 0usize;
    let mut queued = 0usize;
    for s in sim.stations() {
        if s.occupied() + s.vacant() != s.capacity() || s.occupied() > s.capacity() {
            return Err(format!("step {step}: station {} chargers", s.id()));
        }
        if s.active().len() != s.occupied() as usize {
            return Err(format!("step {step}: station {} sessions", s.id()));
        }
        let arrivals: Vec<u64> = s.queued().map(|q| q.arrival_step).collect();
        if arrivals.windows(2).any(|w| w[0] > w[1]) {
            return Err(format!("step {step}: station {} queue order", s.id()));
        }
        if s.queue_len() > 0 && s.vacant() > 0 {
            return Err(format!("step {step}: station {} idle charger", s.id()));
        }
        charging += s.occupied() as usize;
        queued += s.queue_len();
    }
    let count = |a: Activity| sim.taxis().iter().filter(|t| t.activity == a).count();
    if count(Activity::Charging) != charging || count(Activity::QueuedAtStation) != queued {
        return Err(format!("step {step}: taxi and station counts disagree"));
    }
    Ok(())
}
