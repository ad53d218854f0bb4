//! Rule-based taxi dispatch.
//!
//! A request is offered to the available taxis of its origin sub-region.
//! Taxis whose charge cannot cover pickup, trip and (when they will need it)
//! the run to the destination's station are screened out; the rest are graded
//! and the best one is dispatched. Unserved requests wait in a FIFO list that
//! is retried every step, widening to the adjacent sub-regions once the
//! customer has waited past the escalation threshold and declining the
//! request at the cancel threshold.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geo::PlanePoint;
use crate::rng::SimRng;
use crate::siting::Partition;

/// Weight vectors `(w1, w2, w3, w4)` of the sixteen canonical strategies,
/// numbered from 1. Strategy 16 grades every taxi equally, i.e. picks a
/// random reachable one.
pub const CANONICAL_STRATEGIES: [[f64; 4]; 16] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0, 0.0],
    [1.0, 0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 0.0],
    [1.0, 1.0, 0.0, 1.0],
    [1.0, 0.0, 1.0, 1.0],
    [0.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0],
    [0.0, 0.0, 0.0, 0.0],
];

/// Canonical strategy number (1-based) of a weight vector, if it is one.
pub fn strategy_index(w: [f64; 4]) -> Option<usize> {
    CANONICAL_STRATEGIES
        .iter()
        .position(|s| *s == w)
        .map(|i| i + 1)
}

pub const DEFAULT_BUSY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyWeights {
    /// Pickup distance, empty time, income rate, state of charge.
    pub w: [f64; 4],
    /// Magnitude scales for the same four terms.
    pub q: [f64; 4],
    pub busy_threshold: f64,
}

impl StrategyWeights {
    /// Scales putting each term near `[0, 1]`: 5 km of pickup, 30 minutes
    /// idle, 100 currency per hour of income, a full battery.
    /// The income rate is taken per minute, so its scale is 60 / 100.
    pub fn default_q(battery_range_km: f64) -> [f64; 4] {
        [1.0 / 5.0, 1.0 / 30.0, 60.0 / 100.0, 1.0 / battery_range_km]
    }

    pub fn new(w: [f64; 4], battery_range_km: f64) -> Self {
        Self {
            w,
            q: Self::default_q(battery_range_km),
            busy_threshold: DEFAULT_BUSY_THRESHOLD,
        }
    }

    pub fn canonical(index: usize, battery_range_km: f64) -> Option<Self> {
        let w = *CANONICAL_STRATEGIES.get(index.checked_sub(1)?)?;
        Some(Self::new(w, battery_range_km))
    }

    /// All weights zero: every reachable taxi scores the same.
    pub fn is_random(&self) -> bool {
        self.w.iter().all(|w| *w == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "strategy weights must be finite and >= 0".into(),
            ));
        }
        if self.q.iter().any(|q| !(*q > 0.0) || !q.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "strategy scales q must be finite and > 0".into(),
            ));
        }
        if !(self.busy_threshold > 0.0 && self.busy_threshold <= 1.0) {
            return Err(CoreError::InvalidConfig(
                "busy_threshold must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// What the grader knows about one available taxi relative to one request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub taxi_id: usize,
    pub pickup_km: f64,
    pub empty_min: f64,
    pub income: f64,
    pub operating_min: f64,
    pub soc_km: f64,
}

impl Candidate {
    /// Income per operating minute; zero before the taxi has operated at all.
    pub fn income_rate(&self) -> f64 {
        if self.operating_min > 0.0 {
            self.income / self.operating_min
        } else {
            0.0
        }
    }
}

/// Request-side inputs to screening and grading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TripContext {
    pub trip_km: f64,
    /// Distance from the destination to its nearest station.
    pub dest_station_km: f64,
    /// Whether that station's charger utilisation meets the busy threshold.
    pub dest_station_busy: bool,
}

/// Battery screen: the taxi must finish the trip, and if it will then be
/// below the recharge threshold it must still reach the destination's
/// station.
pub fn reachable(
    soc_km: f64,
    pickup_km: f64,
    trip_km: f64,
    dest_station_km: f64,
    recharge_threshold_km: f64,
) -> bool {
    let remaining = soc_km - pickup_km - trip_km;
    if remaining < 0.0 {
        return false;
    }
    remaining > recharge_threshold_km || remaining - dest_station_km >= 0.0
}

pub fn score(c: &Candidate, dest_station_busy: bool, weights: &StrategyWeights) -> f64 {
    let [w1, w2, w3, w4] = weights.w;
    let [q1, q2, q3, q4] = weights.q;
    let soc_term = w4 * q4 * c.soc_km;
    -w1 * q1 * c.pickup_km + w2 * q2 * c.empty_min - w3 * q3 * c.income_rate()
        + if dest_station_busy {
            soc_term
        } else {
            -soc_term
        }
}

/// Picks the best reachable candidate. Ties go to the lowest taxi id, except
/// for the all-zero strategy which draws uniformly among the tied maxima.
pub fn select(
    candidates: &[Candidate],
    trip: &TripContext,
    weights: &StrategyWeights,
    recharge_threshold_km: f64,
    rng: &mut SimRng,
) -> Option<usize> {
    let mut best_score = f64::NEG_INFINITY;
    let mut best: Vec<usize> = Vec::new();
    for c in candidates {
        if !reachable(
            c.soc_km,
            c.pickup_km,
            trip.trip_km,
            trip.dest_station_km,
            recharge_threshold_km,
        ) {
            continue;
        }
        let s = score(c, trip.dest_station_busy, weights);
        if s > best_score {
            best_score = s;
            best.clear();
            best.push(c.taxi_id);
        } else if s == best_score {
            best.push(c.taxi_id);
        }
    }
    if best.is_empty() {
        return None;
    }
    if weights.is_random() && best.len() > 1 {
        best.sort_unstable();
        Some(best[rng.random_range(0..best.len())])
    } else {
        best.into_iter().min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WaitingEntry {
    /// Index of the trip in the engine's trip table.
    pub trip: usize,
    pub enqueue_step: u64,
    pub escalated: bool,
    pub origin_region: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WaitingOutcome {
    Assigned {
        trip: usize,
        taxi_id: usize,
        region: usize,
        escalated: bool,
    },
    Cancelled {
        trip: usize,
    },
}

/// Read-only view of fleet and request state the dispatcher decides on.
pub trait FleetView {
    /// Origin and grading context of a trip, evaluated now.
    fn request(&self, trip: usize) -> (PlanePoint, TripContext);
    /// Available taxis currently inside `region`, graded against `origin`.
    fn candidates(&self, region: usize, origin: PlanePoint) -> Vec<Candidate>;
}

#[derive(Debug, Clone)]
pub struct Dispatcher {
    pub weights: StrategyWeights,
    pub recharge_threshold_km: f64,
    pub waiting_threshold_steps: u64,
    pub cancel_threshold_steps: u64,
    rng: SimRng,
}

impl Dispatcher {
    pub fn new(
        weights: StrategyWeights,
        recharge_threshold_km: f64,
        waiting_threshold_steps: u64,
        cancel_threshold_steps: u64,
        rng: SimRng,
    ) -> Self {
        Self {
            weights,
            recharge_threshold_km,
            waiting_threshold_steps,
            cancel_threshold_steps,
            rng,
        }
    }

    fn pick<F: FleetView>(
        &mut self,
        fleet: &F,
        region: usize,
        origin: PlanePoint,
        ctx: &TripContext,
        claimed: &BTreeSet<usize>,
    ) -> Option<usize> {
        let mut cands = fleet.candidates(region, origin);
        if cands.is_empty() {
            return None;
        }
        cands.retain(|c| !claimed.contains(&c.taxi_id));
        select(
            &cands,
            ctx,
            &self.weights,
            self.recharge_threshold_km,
            &mut self.rng,
        )
    }

    /// Tries to serve a request from its origin sub-region only.
    pub fn dispatch_new<F: FleetView>(
        &mut self,
        fleet: &F,
        trip: usize,
        region: usize,
        claimed: &BTreeSet<usize>,
    ) -> Option<usize> {
        let (origin, ctx) = fleet.request(trip);
        self.pick(fleet, region, origin, &ctx, claimed)
    }

    /// One pass over the waiting list in FIFO order. Served and declined
    /// entries are removed; taxis assigned here are added to `claimed`.
    pub fn process_waiting<F: FleetView>(
        &mut self,
        list: &mut VecDeque<WaitingEntry>,
        fleet: &F,
        partition: &Partition,
        now: u64,
        claimed: &mut BTreeSet<usize>,
    ) -> Vec<WaitingOutcome> {
        let mut outcomes = Vec::new();
        let mut kept = VecDeque::with_capacity(list.len());

        while let Some(mut entry) = list.pop_front() {
            let waited = now.saturating_sub(entry.enqueue_step);
            let escalate = waited > self.waiting_threshold_steps;
            let (origin, ctx) = fleet.request(entry.trip);

            let mut assigned = None;
            let mut regions = vec![entry.origin_region];
            if escalate {
                entry.escalated = true;
                regions.extend_from_slice(partition.adjacent(entry.origin_region));
            }
            for region in regions {
                if let Some(taxi_id) = self.pick(fleet, region, origin, &ctx, claimed) {
                    assigned = Some((taxi_id, region));
                    break;
                }
            }

            match assigned {
                Some((taxi_id, region)) => {
                    claimed.insert(taxi_id);
                    outcomes.push(WaitingOutcome::Assigned {
                        trip: entry.trip,
                        taxi_id,
                        region,
                        escalated: region != entry.origin_region,
                    });
                }
                None if waited >= self.cancel_threshold_steps => {
                    outcomes.push(WaitingOutcome::Cancelled { trip: entry.trip });
                }
                None => kept.push_back(entry),
            }
        }
        *list = kept;
        outcomes
    }
}
