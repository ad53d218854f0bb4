//! Fixed-step simulation loop: fleet state machine, dispatch, charging and
//! metric collection.
//!
//! Each step runs, in order: movement and arrivals, charge completions, the
//! waiting-list pass, then the requests that arrive this step.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DemandSource, ScenarioConfig};
use crate::demand::{load_trips, scale_density, synthesize, DemandProfile, TripRequest};
use crate::dispatch::{
    Candidate, Dispatcher, FleetView, TripContext, WaitingEntry, WaitingOutcome,
};
use crate::error::{CoreError, Result};
use crate::geo::{along_manhattan, manhattan, minutes_to_steps, travel_steps, PlanePoint};
use crate::metrics::{demand_curves, DemandCurves, RunMetrics, TripFate};
use crate::rng::{stream, Stream};
use crate::siting::{kmeans_sites, read_sites, Partition, StationSite};
use crate::station::Station;

const PLACEMENT_ATTEMPTS: usize = 64;
/// Steps allowed after the window for in-flight trips to finish.
const MAX_OVERSHOOT_STEPS: u64 = 10 * 24 * 120;
const SOC_TOLERANCE_KM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Available,
    ToPickup,
    Occupied,
    ToStation,
    QueuedAtStation,
    Charging,
}

impl Activity {
    pub fn may_become(self, next: Activity) -> bool {
        use Activity::*;
        matches!(
            (self, next),
            (Available, ToPickup)
                | (ToPickup, Occupied)
                | (Occupied, Available)
                | (Occupied, ToStation)
                | (ToStation, QueuedAtStation)
                | (ToStation, Charging)
                | (QueuedAtStation, Charging)
                | (Charging, Available)
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Leg {
    from: PlanePoint,
    to: PlanePoint,
    start_step: u64,
    end_step: u64,
    km: f64,
    soc_start: f64,
}

#[derive(Debug, Clone)]
pub struct Taxi {
    pub id: usize,
    pub location: PlanePoint,
    pub soc_km: f64,
    pub battery_range_km: f64,
    pub activity: Activity,
    pub available_since: u64,
    pub income: f64,
    pub entered_at: u64,
    pub assigned_trip: Option<usize>,
    /// Sub-region the taxi is parked in while available.
    pub region: usize,
    pub station: Option<usize>,
    pub trips_served: u32,
    pub km_driven: f64,
    pub charge_events: u32,
    leg: Option<Leg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripStatus {
    Pending,
    Waiting,
    Assigned,
    InService,
    Served,
    Cancelled,
    Residual,
}

#[derive(Debug, Clone)]
struct TripSlot {
    request: TripRequest,
    origin: PlanePoint,
    destination: PlanePoint,
    request_step: u64,
    origin_region: usize,
    dest_region: usize,
    dest_station_km: f64,
    status: TripStatus,
    taxi: Option<usize>,
    pickup_step: Option<u64>,
    dropoff_step: Option<u64>,
}

/// Final per-taxi totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxiLedgerRow {
    pub taxi_id: usize,
    pub income: f64,
    pub trips_served: u32,
    pub km_driven: f64,
    pub charge_events: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripLedgerRow {
    pub trip_id: u64,
    pub request_step: u64,
    pub origin_region: usize,
    pub status: TripStatus,
    pub taxi_id: Option<usize>,
    pub pickup_step: Option<u64>,
    pub dropoff_step: Option<u64>,
}

/// State at the end of one time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSample {
    pub bin_start_min: f64,
    pub customer_requests: u64,
    pub charging_arrivals: u64,
    pub waiting_list: usize,
    pub occupied_chargers: u32,
    pub queued_at_stations: usize,
    pub station_occupancy: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub fleet_size: usize,
    pub station_count: usize,
    pub window_steps: u64,
    pub steps_simulated: u64,
    /// Trips outside the time window or the region, never offered.
    pub trips_dropped: usize,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub curves: DemandCurves,
    pub timeseries: Vec<BinSample>,
    pub taxis: Vec<TaxiLedgerRow>,
    pub trips: Vec<TripLedgerRow>,
    pub stations: Vec<Station>,
    pub sites: Vec<StationSite>,
}

/// Trips of the scenario's demand source, density-scaled, sorted by request
/// time.
pub fn load_demand(cfg: &ScenarioConfig) -> Result<Vec<TripRequest>> {
    match &cfg.demand {
        DemandSource::Trips { path, density } => {
            let load = load_trips(path)?;
            if !load.rejected.is_empty() {
                log::warn!(
                    "{}: skipped {} invalid trip rows",
                    path.display(),
                    load.rejected.len()
                );
            }
            let factor = density.factor();
            if factor == 1.0 {
                Ok(load.trips)
            } else {
                scale_density(&load.trips, factor, cfg.seed, cfg.step_seconds)
            }
        }
        DemandSource::Synthetic {
            profile,
            profile_path,
            weekly_total,
            density,
            desk_scale,
            speed,
        } => {
            let mut profile = match (profile, profile_path) {
                (Some(p), _) => p.clone(),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
                    serde_json::from_str::<DemandProfile>(&text)
                        .or_else(|_| {
                            toml::from_str::<DemandProfile>(&text).map_err(|e| e.to_string())
                        })
                        .map_err(|message| CoreError::Parse {
                            path: path.clone(),
                            message,
                        })?
                }
                (None, None) => DemandProfile::two_ring_default(*weekly_total),
            };
            profile.weekly_total = density.weekly_total(*weekly_total, *desk_scale);
            synthesize(
                &profile,
                cfg.window,
                cfg.seed,
                &cfg.region,
                &cfg.fare,
                speed,
            )
        }
    }
}

/// Station sites from the configured file, or k-means over the trip origins.
/// Every station gets the configured capacity.
pub fn site_stations(cfg: &ScenarioConfig, trips: &[TripRequest]) -> Result<Vec<StationSite>> {
    let mut sites = match &cfg.sites_path {
        Some(path) => read_sites(path, &cfg.region)?,
        None => {
            let origins: Vec<PlanePoint> = trips
                .iter()
                .filter_map(|t| cfg.region.project(t.origin).ok())
                .collect();
            kmeans_sites(
                &origins,
                cfg.station_count,
                cfg.station_capacity,
                cfg.seed,
                &cfg.kmeans,
            )?
        }
    };
    for s in &mut sites {
        s.capacity = cfg.station_capacity;
    }
    Ok(sites)
}

/// Loads demand, sites stations and runs the scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let trips = load_demand(cfg)?;
    let sites = site_stations(cfg, &trips)?;
    Simulation::new(cfg.clone(), sites, &trips)?.run()
}

struct View<'a> {
    taxis: &'a [Taxi],
    available: &'a [BTreeSet<usize>],
    trips: &'a [TripSlot],
    stations: &'a [Station],
    now: u64,
    step_min: f64,
    busy_threshold: f64,
}

impl FleetView for View<'_> {
    fn request(&self, trip: usize) -> (PlanePoint, TripContext) {
        let t = &self.trips[trip];
        (
            t.origin,
            TripContext {
                trip_km: t.request.distance_km,
                dest_station_km: t.dest_station_km,
                dest_station_busy: self.stations[t.dest_region].is_busy(self.busy_threshold),
            },
        )
    }

    fn candidates(&self, region: usize, origin: PlanePoint) -> Vec<Candidate> {
        self.available[region]
            .iter()
            .map(|&id| {
                let taxi = &self.taxis[id];
                Candidate {
                    taxi_id: id,
                    pickup_km: manhattan(taxi.location, origin),
                    empty_min: (self.now - taxi.available_since) as f64 * self.step_min,
                    income: taxi.income,
                    operating_min: (self.now - taxi.entered_at) as f64 * self.step_min,
                    soc_km: taxi.soc_km,
                }
            })
            .collect()
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    partition: Partition,
    stations: Vec<Station>,
    taxis: Vec<Taxi>,
    trips: Vec<TripSlot>,
    next_request: usize,
    waiting: VecDeque<WaitingEntry>,
    available: Vec<BTreeSet<usize>>,
    dispatcher: Dispatcher,
    now: u64,
    window_steps: u64,
    charge_steps: u64,
    steps_per_bin: f64,
    charge_arrivals: Vec<u64>,
    bins: Vec<BinSample>,
    trips_dropped: usize,
}

impl Simulation {
    pub fn new(
        cfg: ScenarioConfig,
        sites: Vec<StationSite>,
        trips: &[TripRequest],
    ) -> Result<Self> {
        cfg.validate()?;
        let weights = cfg.weights()?;
        let mut sites = sites;
        for s in &mut sites {
            s.capacity = cfg.station_capacity;
        }
        let partition = Partition::build(sites, cfg.k_adjacent)?;
        let stations: Vec<Station> = partition.sites().iter().map(Station::new).collect();
        let step_s = i64::from(cfg.step_seconds);

        let mut ordered: Vec<&TripRequest> = trips.iter().collect();
        ordered.sort_by_key(|t| (t.request_time_s, t.trip_id));
        let mut slots = Vec::with_capacity(ordered.len());
        let mut dropped = 0;
        for t in ordered {
            if t.request_time_s < cfg.window.start_s || t.request_time_s >= cfg.window.end_s() {
                dropped += 1;
                continue;
            }
            let (Ok(origin), Ok(destination)) = (
                cfg.region.project(t.origin),
                cfg.region.project(t.destination),
            ) else {
                dropped += 1;
                continue;
            };
            let (dest_region, dest_station_km) = partition.nearest(destination);
            slots.push(TripSlot {
                request: t.clone(),
                origin,
                destination,
                request_step: ((t.request_time_s - cfg.window.start_s) / step_s) as u64,
                origin_region: partition.locate(origin),
                dest_region,
                dest_station_km,
                status: TripStatus::Pending,
                taxi: None,
                pickup_step: None,
                dropoff_step: None,
            });
        }
        if dropped > 0 {
            log::info!("{dropped} trips fall outside the window or region");
        }

        let window_steps = (cfg.window.duration_s as u64).div_ceil(u64::from(cfg.step_seconds));
        let taxis = place_fleet(&cfg, &partition, &slots);
        let mut available = vec![BTreeSet::new(); partition.len()];
        for t in &taxis {
            available[t.region].insert(t.id);
        }
        let dispatcher = Dispatcher::new(
            weights,
            cfg.recharge_threshold_km,
            minutes_to_steps(cfg.waiting_threshold_min, cfg.step_seconds),
            minutes_to_steps(cfg.cancel_threshold_min, cfg.step_seconds),
            stream(cfg.seed, Stream::Dispatch),
        );
        Ok(Self {
            charge_steps: minutes_to_steps(cfg.recharge_time_min, cfg.step_seconds).max(1),
            steps_per_bin: cfg.bin_minutes * 60.0 / f64::from(cfg.step_seconds),
            cfg,
            partition,
            stations,
            taxis,
            trips: slots,
            next_request: 0,
            waiting: VecDeque::new(),
            available,
            dispatcher,
            now: 0,
            window_steps,
            charge_arrivals: Vec::new(),
            bins: Vec::new(),
            trips_dropped: dropped,
        })
    }

    pub fn taxis(&self) -> &[Taxi] {
        &self.taxis
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    fn step_min(&self) -> f64 {
        f64::from(self.cfg.step_seconds) / 60.0
    }

    fn invariant(&self, message: impl Into<String>) -> CoreError {
        CoreError::Invariant {
            step: self.now,
            message: message.into(),
        }
    }

    fn set_activity(&mut self, id: usize, next: Activity) -> Result<()> {
        let cur = self.taxis[id].activity;
        if !cur.may_become(next) {
            return Err(
                self.invariant(format!("taxi {id}: illegal transition {cur:?} -> {next:?}"))
            );
        }
        self.taxis[id].activity = next;
        Ok(())
    }

    fn make_available(&mut self, id: usize) {
        let region = self.partition.locate(self.taxis[id].location);
        let taxi = &mut self.taxis[id];
        taxi.region = region;
        taxi.available_since = self.now;
        self.available[region].insert(id);
    }

    /// Starts a leg; zero-length legs complete at once.
    fn start_leg(&mut self, id: usize, to: PlanePoint, steps: u64, km: f64) -> Result<()> {
        let taxi = &mut self.taxis[id];
        taxi.leg = Some(Leg {
            from: taxi.location,
            to,
            start_step: self.now,
            end_step: self.now + steps,
            km,
            soc_start: taxi.soc_km,
        });
        if steps == 0 {
            self.complete_leg(id)?;
        }
        Ok(())
    }

    fn complete_leg(&mut self, id: usize) -> Result<()> {
        let leg = self.taxis[id].leg.take().expect("moving taxi has a leg");
        {
            let taxi = &mut self.taxis[id];
            taxi.location = leg.to;
            taxi.soc_km = leg.soc_start - leg.km;
            taxi.km_driven += leg.km;
        }
        match self.taxis[id].activity {
            Activity::ToPickup => self.pick_up(id),
            Activity::Occupied => self.drop_off(id),
            Activity::ToStation => self.reach_station(id),
            other => Err(self.invariant(format!("taxi {id} finished a leg while {other:?}"))),
        }
    }

    fn assign(&mut self, id: usize, trip: usize) -> Result<()> {
        let status = self.trips[trip].status;
        if !matches!(status, TripStatus::Pending | TripStatus::Waiting) {
            return Err(self.invariant(format!("trip {trip} assigned while {status:?}")));
        }
        if self.taxis[id].assigned_trip.is_some() {
            return Err(self.invariant(format!("taxi {id} already holds a trip")));
        }
        let region = self.taxis[id].region;
        if !self.available[region].remove(&id) {
            return Err(self.invariant(format!("taxi {id} dispatched but not available")));
        }
        self.set_activity(id, Activity::ToPickup)?;
        let slot = &mut self.trips[trip];
        slot.status = TripStatus::Assigned;
        slot.taxi = Some(id);
        let origin = slot.origin;
        self.taxis[id].assigned_trip = Some(trip);
        let km = manhattan(self.taxis[id].location, origin);
        let steps = travel_steps(km, self.cfg.empty_speed_kmh, self.cfg.step_seconds);
        self.start_leg(id, origin, steps, km)
    }

    fn pick_up(&mut self, id: usize) -> Result<()> {
        self.set_activity(id, Activity::Occupied)?;
        let trip = self.taxis[id]
            .assigned_trip
            .expect("picking up taxi holds a trip");
        let slot = &mut self.trips[trip];
        slot.status = TripStatus::InService;
        slot.pickup_step = Some(self.now);
        let (to, km) = (slot.destination, slot.request.distance_km);
        let steps = minutes_to_steps(slot.request.duration_min, self.cfg.step_seconds).max(1);
        self.start_leg(id, to, steps, km)
    }

    fn drop_off(&mut self, id: usize) -> Result<()> {
        let trip = self.taxis[id]
            .assigned_trip
            .take()
            .expect("occupied taxi holds a trip");
        let slot = &mut self.trips[trip];
        slot.status = TripStatus::Served;
        slot.dropoff_step = Some(self.now);
        let fare = slot.request.fare;
        let taxi = &mut self.taxis[id];
        taxi.income += fare;
        taxi.trips_served += 1;

        if taxi.soc_km < self.cfg.recharge_threshold_km {
            let (station, km) = self.partition.nearest(taxi.location);
            if taxi.soc_km + SOC_TOLERANCE_KM < km {
                return Err(self.invariant(format!(
                    "taxi {id} routed to station {station} {km} km away with {} km left",
                    self.taxis[id].soc_km
                )));
            }
            self.set_activity(id, Activity::ToStation)?;
            self.taxis[id].station = Some(station);
            let to = self.partition.site(station).location;
            let steps = travel_steps(km, self.cfg.empty_speed_kmh, self.cfg.step_seconds);
            self.start_leg(id, to, steps, km)
        } else {
            self.set_activity(id, Activity::Available)?;
            self.make_available(id);
            Ok(())
        }
    }

    fn charge_duration(&self, soc_km: f64, range_km: f64) -> u64 {
        if self.cfg.soc_proportional_charging {
            let missing = ((range_km - soc_km) / range_km).clamp(0.0, 1.0);
            minutes_to_steps(self.cfg.recharge_time_min * missing, self.cfg.step_seconds).max(1)
        } else {
            self.charge_steps
        }
    }

    fn reach_station(&mut self, id: usize) -> Result<()> {
        let station = self.taxis[id].station.expect("taxi heading to a station");
        let duration = self.charge_duration(self.taxis[id].soc_km, self.taxis[id].battery_range_km);
        let session = self.stations[station].arrive(id, self.now, duration);
        self.charge_arrivals.push(self.now);
        let charging = self.stations[station]
            .active()
            .iter()
            .any(|s| s.taxi_id == id);
        debug_assert!(!charging || session.start_step == self.now);
        self.set_activity(
            id,
            if charging {
                Activity::Charging
            } else {
                Activity::QueuedAtStation
            },
        )
    }

    fn advance_fleet(&mut self) -> Result<()> {
        let now = self.now;
        for id in 0..self.taxis.len() {
            let Some(leg) = self.taxis[id].leg else {
                continue;
            };
            if now >= leg.end_step {
                self.complete_leg(id)?;
            } else {
                let f = (now - leg.start_step) as f64 / (leg.end_step - leg.start_step) as f64;
                let taxi = &mut self.taxis[id];
                taxi.location = along_manhattan(leg.from, leg.to, f);
                taxi.soc_km = leg.soc_start - leg.km * f;
            }
        }
        Ok(())
    }

    fn finish_charging(&mut self) -> Result<()> {
        for s in 0..self.stations.len() {
            for id in self.stations[s].finishing(self.now) {
                let promoted = self.stations[s]
                    .release(id, self.now)
                    .map_err(|e| self.invariant(e.to_string()))?;
                self.set_activity(id, Activity::Available)?;
                let taxi = &mut self.taxis[id];
                taxi.soc_km = taxi.battery_range_km;
                taxi.location = self.stations[s].location();
                taxi.station = None;
                taxi.charge_events += 1;
                self.make_available(id);
                if let Some(p) = promoted {
                    self.set_activity(p.taxi_id, Activity::Charging)?;
                }
            }
        }
        Ok(())
    }

    fn serve_waiting(&mut self) -> Result<()> {
        if self.waiting.is_empty() {
            return Ok(());
        }
        let view = View {
            taxis: &self.taxis,
            available: &self.available,
            trips: &self.trips,
            stations: &self.stations,
            now: self.now,
            step_min: f64::from(self.cfg.step_seconds) / 60.0,
            busy_threshold: self.cfg.busy_threshold,
        };
        let mut claimed = BTreeSet::new();
        let outcomes = self.dispatcher.process_waiting(
            &mut self.waiting,
            &view,
            &self.partition,
            self.now,
            &mut claimed,
        );
        for o in outcomes {
            match o {
                WaitingOutcome::Assigned { trip, taxi_id, .. } => self.assign(taxi_id, trip)?,
                WaitingOutcome::Cancelled { trip } => {
                    self.trips[trip].status = TripStatus::Cancelled
                }
            }
        }
        Ok(())
    }

    fn serve_new_requests(&mut self) -> Result<()> {
        let claimed = BTreeSet::new();
        while self.next_request < self.trips.len()
            && self.trips[self.next_request].request_step <= self.now
        {
            let trip = self.next_request;
            self.next_request += 1;
            let region = self.trips[trip].origin_region;
            let view = View {
                taxis: &self.taxis,
                available: &self.available,
                trips: &self.trips,
                stations: &self.stations,
                now: self.now,
                step_min: f64::from(self.cfg.step_seconds) / 60.0,
                busy_threshold: self.cfg.busy_threshold,
            };
            match self.dispatcher.dispatch_new(&view, trip, region, &claimed) {
                Some(id) => self.assign(id, trip)?,
                None => {
                    self.trips[trip].status = TripStatus::Waiting;
                    self.waiting.push_back(WaitingEntry {
                        trip,
                        enqueue_step: self.now,
                        escalated: false,
                        origin_region: region,
                    });
                }
            }
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<()> {
        let mut charging = vec![0u32; self.stations.len()];
        let mut queued = vec![0usize; self.stations.len()];
        for t in &self.taxis {
            if !(t.soc_km >= -SOC_TOLERANCE_KM && t.soc_km <= t.battery_range_km + SOC_TOLERANCE_KM)
            {
                return Err(self.invariant(format!("taxi {} has SOC {} km", t.id, t.soc_km)));
            }
            match t.activity {
                Activity::Charging => charging[t.station.expect("charging at a station")] += 1,
                Activity::QueuedAtStation => queued[t.station.expect("queued at a station")] += 1,
                _ => {}
            }
        }
        for (s, st) in self.stations.iter().enumerate() {
            if st.occupied() != charging[s] || st.occupied() + st.vacant() != st.capacity() {
                return Err(self.invariant(format!(
                    "station {s}: {} occupied, {} vacant of {}, {} taxis charging",
                    st.occupied(),
                    st.vacant(),
                    st.capacity(),
                    charging[s]
                )));
            }
            if st.queue_len() != queued[s] {
                return Err(self.invariant(format!(
                    "station {s}: queue holds {} but {} taxis are queued",
                    st.queue_len(),
                    queued[s]
                )));
            }
        }
        if self
            .waiting
            .iter()
            .zip(self.waiting.iter().skip(1))
            .any(|(a, b)| a.enqueue_step > b.enqueue_step)
        {
            return Err(self.invariant("waiting list out of FIFO order"));
        }
        Ok(())
    }

    fn sample_bin(&mut self) {
        let bin = (self.now as f64 / self.steps_per_bin).floor() as usize;
        let occupancy: Vec<u32> = self.stations.iter().map(Station::occupied).collect();
        let sample = BinSample {
            bin_start_min: bin as f64 * self.cfg.bin_minutes,
            customer_requests: 0,
            charging_arrivals: 0,
            waiting_list: self.waiting.len(),
            occupied_chargers: occupancy.iter().sum(),
            queued_at_stations: self.stations.iter().map(Station::queue_len).sum(),
            station_occupancy: occupancy,
        };
        while self.bins.len() <= bin {
            self.bins.push(sample.clone());
        }
        self.bins[bin] = sample;
    }

    /// Advances one step; requests are taken only inside the window.
    pub fn step(&mut self) -> Result<()> {
        self.advance_fleet()?;
        self.finish_charging()?;
        if self.now < self.window_steps {
            self.serve_waiting()?;
            self.serve_new_requests()?;
        }
        self.check_invariants()?;
        self.sample_bin();
        self.now += 1;
        Ok(())
    }

    fn in_flight(&self) -> bool {
        self.taxis
            .iter()
            .any(|t| matches!(t.activity, Activity::ToPickup | Activity::Occupied))
    }

    pub fn run(mut self) -> Result<RunOutput> {
        while self.now < self.window_steps {
            self.step()?;
        }
        for entry in std::mem::take(&mut self.waiting) {
            self.trips[entry.trip].status = TripStatus::Residual;
        }
        while self.in_flight() {
            if self.now >= self.window_steps + MAX_OVERSHOOT_STEPS {
                return Err(self.invariant("trips still in flight long after the window closed"));
            }
            self.step()?;
        }
        self.finish()
    }

    fn finish(self) -> Result<RunOutput> {
        let step_min = self.step_min();
        let mut fates = Vec::with_capacity(self.trips.len());
        for (i, t) in self.trips.iter().enumerate() {
            fates.push(match t.status {
                TripStatus::Served => TripFate::Served {
                    wait_min: (t.pickup_step.expect("served trip was picked up") - t.request_step)
                        as f64
                        * step_min,
                },
                TripStatus::Cancelled => TripFate::Cancelled,
                TripStatus::Residual => TripFate::Residual,
                other => return Err(self.invariant(format!("trip {i} ended the run {other:?}"))),
            });
        }

        let request_min: Vec<f64> = self
            .trips
            .iter()
            .map(|t| t.request_step as f64 * step_min)
            .collect();
        let charge_min: Vec<f64> = self
            .charge_arrivals
            .iter()
            .map(|&s| s as f64 * step_min)
            .collect();
        let horizon = self.window_steps as f64 * step_min;
        let curves = demand_curves(&request_min, &charge_min, self.cfg.bin_minutes, horizon);
        let incomes: Vec<f64> = self.taxis.iter().map(|t| t.income).collect();
        let metrics = RunMetrics::compute(&fates, &incomes, &curves, self.cfg.smoothing_bins);
        if metrics.served + metrics.cancelled + metrics.residual != metrics.total_requests {
            return Err(self.invariant("trip conservation violated"));
        }

        let mut timeseries = self.bins;
        if let Some(last) = timeseries.last().cloned() {
            while timeseries.len() < curves.len() {
                let mut s = last.clone();
                s.bin_start_min = timeseries.len() as f64 * self.cfg.bin_minutes;
                timeseries.push(s);
            }
        }
        for (i, s) in timeseries.iter_mut().enumerate() {
            s.customer_requests = curves.customer.get(i).copied().unwrap_or(0);
            s.charging_arrivals = curves.charging.get(i).copied().unwrap_or(0);
        }

        let summary = RunSummary {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            fleet_size: self.taxis.len(),
            station_count: self.stations.len(),
            window_steps: self.window_steps,
            steps_simulated: self.now,
            trips_dropped: self.trips_dropped,
            metrics,
        };
        let taxis = self
            .taxis
            .iter()
            .map(|t| TaxiLedgerRow {
                taxi_id: t.id,
                income: t.income,
                trips_served: t.trips_served,
                km_driven: t.km_driven,
                charge_events: t.charge_events,
            })
            .collect();
        let trips = self
            .trips
            .iter()
            .map(|t| TripLedgerRow {
                trip_id: t.request.trip_id,
                request_step: t.request_step,
                origin_region: t.origin_region,
                status: t.status,
                taxi_id: t.taxi,
                pickup_step: t.pickup_step,
                dropoff_step: t.dropoff_step,
            })
            .collect();
        Ok(RunOutput {
            summary,
            curves,
            timeseries,
            taxis,
            trips,
            sites: self.partition.sites().to_vec(),
            stations: self.stations,
        })
    }
}

/// Splits `total` in proportion to `weights` by largest remainder; ties in
/// the remainder go to the lower index.
pub fn largest_remainder(total: usize, weights: &[u64]) -> Vec<usize> {
    let sum: u64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if sum == 0 {
        return largest_remainder(total, &vec![1; weights.len()]);
    }
    let mut shares: Vec<usize> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let exact = total as u128 * w as u128;
        shares.push((exact / sum as u128) as usize);
        rems.push((exact % sum as u128, i));
    }
    let left = total - shares.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rems.iter().take(left) {
        shares[i] += 1;
    }
    shares
}

/// Spreads the fleet over sub-regions in proportion to early demand, each
/// taxi at a random point of its region's origin bounding box.
fn place_fleet(cfg: &ScenarioConfig, partition: &Partition, trips: &[TripSlot]) -> Vec<Taxi> {
    let step_s = f64::from(cfg.step_seconds);
    let mut early: Vec<&TripSlot> = trips
        .iter()
        .filter(|t| t.request_step as f64 * step_s < cfg.placement_window_min * 60.0)
        .collect();
    if early.is_empty() {
        early = trips.iter().collect();
    }
    let mut origins: Vec<Vec<PlanePoint>> = vec![Vec::new(); partition.len()];
    for t in early {
        origins[t.origin_region].push(t.origin);
    }
    let counts: Vec<u64> = origins.iter().map(|o| o.len() as u64).collect();
    let shares = largest_remainder(cfg.fleet_size, &counts);

    let mut rng = stream(cfg.seed, Stream::Placement);
    let mut taxis = Vec::with_capacity(cfg.fleet_size);
    for (region, &n) in shares.iter().enumerate() {
        let pts = &origins[region];
        for _ in 0..n {
            let location = if pts.is_empty() {
                partition.site(region).location
            } else {
                let (lo_x, hi_x) = pts
                    .iter()
                    .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.x), a.1.max(p.x)));
                let (lo_y, hi_y) = pts
                    .iter()
                    .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.y), a.1.max(p.y)));
                let mut chosen = None;
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let p = PlanePoint::new(
                        if hi_x > lo_x {
                            rng.random_range(lo_x..hi_x)
                        } else {
                            lo_x
                        },
                        if hi_y > lo_y {
                            rng.random_range(lo_y..hi_y)
                        } else {
                            lo_y
                        },
                    );
                    if partition.locate(p) == region {
                        chosen = Some(p);
                        break;
                    }
                }
                chosen.unwrap_or_else(|| pts[rng.random_range(0..pts.len())])
            };
            let id = taxis.len();
            taxis.push(Taxi {
                id,
                location,
                soc_km: cfg.battery_range_km,
                battery_range_km: cfg.battery_range_km,
                activity: Activity::Available,
                available_since: 0,
                income: 0.0,
                entered_at: 0,
                assigned_trip: None,
                region: partition.locate(location),
                station: None,
                trips_served: 0,
                km_driven: 0.0,
                charge_events: 0,
                leg: None,
            });
        }
    }
    taxis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::TimeWindow;
    use crate::geo::{GeoPoint, Region};

    fn site(id: usize, x: f64, y: f64) -> StationSite {
        StationSite {
            station_id: id,
            location: PlanePoint::new(x, y),
            capacity: 1,
        }
    }

    fn trip(id: u64, t: i64, from: PlanePoint, to: PlanePoint, minutes: f64) -> TripRequest {
        let r = Region::default();
        let d = manhattan(from, to);
        TripRequest {
            trip_id: id,
            request_time_s: t,
            origin: r.unproject(from),
            destination: r.unproject(to),
            distance_km: d,
            duration_min: minutes,
            fare: 13.0 + 2.3 * (d - 3.0).max(0.0),
        }
    }

    fn small_config(fleet: usize) -> ScenarioConfig {
        ScenarioConfig {
            fleet_size: fleet,
            station_count: 1,
            station_capacity: 1,
            window: TimeWindow {
                start_s: 0,
                duration_s: 4 * 3600,
            },
            ..Default::default()
        }
    }

    #[test]
    fn proportional_allocation() {
        assert_eq!(largest_remainder(4, &[75, 25]), vec![3, 1]);
        assert_eq!(largest_remainder(3, &[1, 1]), vec![2, 1]);
        assert_eq!(largest_remainder(0, &[5, 5]), vec![0, 0]);
        assert_eq!(largest_remainder(5, &[0, 0, 0]), vec![2, 2, 1]);
        assert_eq!(
            largest_remainder(10, &[1, 2, 3, 4]).iter().sum::<usize>(),
            10
        );
    }

    #[test]
    fn transition_graph() {
        use Activity::*;
        assert!(Available.may_become(ToPickup));
        assert!(Occupied.may_become(ToStation));
        assert!(!Available.may_become(Occupied));
        assert!(!Charging.may_become(ToPickup));
        assert!(!QueuedAtStation.may_become(Available));
    }

    #[test]
    fn single_taxi_single_trip() {
        let cfg = small_config(1);
        let s = site(0, 50.0, 50.0);
        let o = PlanePoint::new(50.0, 50.0);
        let d = PlanePoint::new(56.0, 50.0);
        let trips = vec![trip(0, 600, o, d, 12.0)];
        let sim = Simulation::new(cfg, vec![s], &trips).unwrap();
        let start = sim.taxis()[0].location;
        let out = sim.run().unwrap();
        let m = &out.summary.metrics;
        assert_eq!(m.fill_rate, 1.0);
        let pickup_km = manhattan(start, o);
        let expected = crate::geo::travel_time_empty(pickup_km, 30);
        assert!(
            (m.avg_wait_min - expected).abs() < 1e-9,
            "{} vs {expected}",
            m.avg_wait_min
        );
        assert_eq!(out.taxis[0].trips_served, 1);
        assert_eq!(out.taxis[0].income, trips[0].fare);
    }

    #[test]
    fn pickup_six_km_away_takes_twelve_minutes() {
        let cfg = small_config(1);
        let origin = PlanePoint::new(50.0, 50.0);
        let trips = vec![trip(0, 0, origin, PlanePoint::new(40.0, 50.0), 20.0)];
        let mut sim = Simulation::new(cfg, vec![site(0, 50.0, 50.0)], &trips).unwrap();
        sim.taxis[0].location = PlanePoint::new(56.0, 50.0);
        let out = sim.run().unwrap();
        assert_eq!(out.summary.metrics.avg_wait_min, 12.0);
        assert_eq!(out.trips[0].pickup_step, Some(24));
        assert_eq!(out.trips[0].dropoff_step, Some(64));
    }

    #[test]
    fn zero_fleet_cancels_everything() {
        let cfg = small_config(0);
        let o = PlanePoint::new(50.0, 50.0);
        let trips: Vec<TripRequest> = (0..5)
            .map(|i| trip(i, 60 * i as i64, o, PlanePoint::new(60.0, 50.0), 20.0))
            .collect();
        let out = Simulation::new(cfg, vec![site(0, 50.0, 50.0)], &trips)
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(out.summary.metrics.cancelled, 5);
        assert_eq!(out.summary.metrics.fill_rate, 0.0);
    }

    #[test]
    fn zero_trips() {
        let out = Simulation::new(small_config(3), vec![site(0, 50.0, 50.0)], &[])
            .unwrap()
            .run()
            .unwrap();
        let m = &out.summary.metrics;
        assert_eq!(
            (m.fill_rate, m.avg_wait_min, m.charge_sessions),
            (1.0, 0.0, 0)
        );
        assert!(out.taxis.iter().all(|t| t.km_driven == 0.0));
    }

    #[test]
    fn low_battery_drop_off_goes_charging() {
        let mut cfg = small_config(1);
        cfg.battery_range_km = 60.0;
        let st = site(0, 70.0, 73.0);
        let o = PlanePoint::new(50.0, 50.0);
        // 45 km trip leaves 15 km, below the 20 km threshold, 2 km from the station
        let d = PlanePoint::new(72.0, 73.0);
        let trips = vec![trip(0, 0, o, d, 90.0)];
        let mut sim = Simulation::new(cfg, vec![st], &trips).unwrap();
        sim.taxis[0].location = o;
        let out = sim.run().unwrap();
        assert_eq!(out.summary.metrics.served, 1);
        assert_eq!(out.summary.metrics.charge_sessions, 1);
        assert!((out.taxis[0].km_driven - 47.0).abs() < 1e-9);
    }

    #[test]
    fn unreachable_trip_is_not_dispatched() {
        let mut cfg = small_config(1);
        cfg.battery_range_km = 40.0;
        cfg.recharge_threshold_km = 10.0;
        let o = PlanePoint::new(50.0, 50.0);
        let trips = vec![trip(0, 0, o, PlanePoint::new(95.0, 50.0), 90.0)];
        let mut sim = Simulation::new(cfg, vec![site(0, 50.0, 50.0)], &trips).unwrap();
        sim.taxis[0].location = o;
        let out = sim.run().unwrap();
        assert_eq!(out.summary.metrics.cancelled, 1);
    }

    #[test]
    fn placement_follows_early_demand_and_seed() {
        let mut cfg = small_config(4);
        cfg.station_count = 2;
        let sites = vec![site(0, 20.0, 20.0), site(1, 120.0, 100.0)];
        let mut trips = Vec::new();
        for i in 0..100u64 {
            let near0 = i % 4 != 0;
            let base = if near0 {
                PlanePoint::new(20.0, 20.0)
            } else {
                PlanePoint::new(120.0, 100.0)
            };
            let o = PlanePoint::new(base.x + (i % 7) as f64, base.y + (i % 5) as f64);
            trips.push(trip(
                i,
                i as i64 * 10,
                o,
                PlanePoint::new(o.x + 3.0, o.y),
                10.0,
            ));
        }
        let a = Simulation::new(cfg.clone(), sites.clone(), &trips).unwrap();
        let regions: Vec<usize> = a.taxis().iter().map(|t| t.region).collect();
        assert_eq!(regions, vec![0, 0, 0, 1]);
        let b = Simulation::new(cfg, sites, &trips).unwrap();
        for (x, y) in a.taxis().iter().zip(b.taxis()) {
            assert_eq!(x.location, y.location);
        }
    }

    #[test]
    fn trips_outside_window_or_region_are_dropped() {
        let cfg = small_config(1);
        let o = PlanePoint::new(50.0, 50.0);
        let mut late = trip(0, 5 * 3600, o, PlanePoint::new(55.0, 50.0), 10.0);
        late.trip_id = 1;
        let mut away = trip(2, 0, o, PlanePoint::new(55.0, 50.0), 10.0);
        away.origin = GeoPoint::new(100.0, 30.0);
        let sim = Simulation::new(cfg, vec![site(0, 50.0, 50.0)], &[late, away]).unwrap();
        let out = sim.run().unwrap();
        assert_eq!(out.summary.trips_dropped, 2);
        assert_eq!(out.summary.metrics.total_requests, 0);
    }
}
