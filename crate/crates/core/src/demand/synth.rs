//! Synthetic demand generation and demand-density scaling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{FareSchedule, TripRequest, MIN_TRIP_MINUTES};
use crate::error::{CoreError, Result};
use crate::geo::{manhattan, GeoPoint, PlanePoint, Region};
use crate::rng::{stream, SimRng, Stream};

pub const LOW_WEEKLY_TRIPS: f64 = 1.66e6;
pub const MIDDLE_WEEKLY_TRIPS: f64 = 1.84e6;
pub const HIGH_WEEKLY_TRIPS: f64 = 2.03e6;

const MINUTES_PER_WEEK: f64 = 7.0 * 1440.0;
const PLACEMENT_ATTEMPTS: usize = 32;
const DESTINATION_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialCluster {
    pub center: GeoPoint,
    pub weight: f64,
    pub spread_km: f64,
}

/// Relative arrival intensity per bin over one repeating cycle (normally a day).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityCurve {
    pub bin_minutes: u32,
    pub rates: Vec<f64>,
}

impl IntensityCurve {
    pub fn flat(bin_minutes: u32, bins: usize) -> Self {
        Self {
            bin_minutes,
            rates: vec![1.0; bins],
        }
    }

    /// Daily curve with a morning and an evening rush on top of a daytime
    /// plateau and a quiet night.
    pub fn two_peak_day() -> Self {
        let bin_minutes = 15;
        let bump = |m: f64, centre: f64, width: f64| (-0.5 * ((m - centre) / width).powi(2)).exp();
        let rates = (0..96)
            .map(|b| {
                let m = (b as f64 + 0.5) * 15.0;
                let day = 0.25
                    + 0.75
                        / (1.0 + (-(m - 390.0) / 40.0).exp())
                        / (1.0 + ((m - 1350.0) / 50.0).exp());
                day + 1.3 * bump(m, 8.0 * 60.0, 60.0) + 1.5 * bump(m, 18.0 * 60.0, 75.0)
            })
            .collect();
        Self { bin_minutes, rates }
    }

    fn cycle_minutes(&self) -> f64 {
        self.rates.len() as f64 * f64::from(self.bin_minutes)
    }

    fn mean_rate(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub clusters: Vec<SpatialCluster>,
    pub intensity: IntensityCurve,
    pub weekly_total: f64,
}

impl DemandProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidConfig(format!("demand profile: {m}")));
        if self.clusters.is_empty() {
            return bad("no spatial clusters");
        }
        let total: f64 = self.clusters.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-6 || self.clusters.iter().any(|c| c.weight < 0.0) {
            return bad("cluster weights must be non-negative and sum to 1");
        }
        if self.clusters.iter().any(|c| !(c.spread_km >= 0.0)) {
            return bad("negative cluster spread");
        }
        if self.intensity.bin_minutes == 0 || self.intensity.rates.is_empty() {
            return bad("empty intensity curve");
        }
        if self.intensity.rates.iter().any(|r| !(*r >= 0.0)) || self.intensity.mean_rate() <= 0.0 {
            return bad("intensity must be non-negative and not all zero");
        }
        if !(self.weekly_total >= 0.0) {
            return bad("weekly_total must be non-negative");
        }
        Ok(())
    }

    /// Dense urban core plus a ring of suburban centres around central
    /// Beijing, with the two-peak daily curve.
    pub fn two_ring_default(weekly_total: f64) -> Self {
        let centre = GeoPoint::new(116.40, 39.91);
        let mut clusters = vec![SpatialCluster {
            center: centre,
            weight: 0.52,
            spread_km: 4.0,
        }];
        let ring_km = 16.0;
        let region = Region::default();
        for k in 0..8 {
            let angle = std::f64::consts::TAU * k as f64 / 8.0;
            clusters.push(SpatialCluster {
                center: GeoPoint::new(
                    centre.lon + ring_km * angle.cos() / region.km_per_deg_lon(),
                    centre.lat + ring_km * angle.sin() / region.km_per_deg_lat(),
                ),
                weight: 0.06,
                spread_km: 3.0,
            });
        }
        Self {
            clusters,
            intensity: IntensityCurve::two_peak_day(),
            weekly_total,
        }
    }
}

/// Passenger-carrying speed drawn per synthetic trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedDistribution {
    pub mean_kmh: f64,
    pub sd_kmh: f64,
    pub min_kmh: f64,
    pub max_kmh: f64,
}

impl Default for SpeedDistribution {
    fn default() -> Self {
        Self {
            mean_kmh: 25.0,
            sd_kmh: 5.0,
            min_kmh: 10.0,
            max_kmh: 60.0,
        }
    }
}

impl SpeedDistribution {
    fn sample(&self, rng: &mut SimRng) -> f64 {
        if self.sd_kmh <= 0.0 {
            return self.mean_kmh.clamp(self.min_kmh, self.max_kmh);
        }
        let normal = Normal::new(self.mean_kmh, self.sd_kmh).expect("finite speed parameters");
        for _ in 0..1000 {
            let v = normal.sample(rng);
            if (self.min_kmh..=self.max_kmh).contains(&v) {
                return v;
            }
        }
        self.mean_kmh.clamp(self.min_kmh, self.max_kmh)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_s: i64,
    pub duration_s: i64,
}

impl TimeWindow {
    pub fn days(days: i64) -> Self {
        Self {
            start_s: 0,
            duration_s: days * 86_400,
        }
    }

    pub fn end_s(&self) -> i64 {
        self.start_s + self.duration_s
    }
}

/// Weekly demand level: one of the named levels or a plain multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DemandDensity {
    Level(DensityLevel),
    Factor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityLevel {
    Low,
    Middle,
    High,
}

impl DensityLevel {
    pub fn weekly_trips(self) -> f64 {
        match self {
            Self::Low => LOW_WEEKLY_TRIPS,
            Self::Middle => MIDDLE_WEEKLY_TRIPS,
            Self::High => HIGH_WEEKLY_TRIPS,
        }
    }
}

impl Default for DemandDensity {
    fn default() -> Self {
        Self::Factor(1.0)
    }
}

impl DemandDensity {
    /// Multiplier relative to the middle level (or the factor itself).
    pub fn factor(self) -> f64 {
        match self {
            Self::Factor(f) => f,
            Self::Level(l) => l.weekly_trips() / MIDDLE_WEEKLY_TRIPS,
        }
    }

    /// Weekly trips implied for a synthetic profile: named levels are the
    /// full-city totals times `desk_scale`, factors multiply the profile's own
    /// total.
    pub fn weekly_total(self, profile_total: f64, desk_scale: f64) -> f64 {
        match self {
            Self::Factor(f) => profile_total * f,
            Self::Level(l) => l.weekly_trips() * desk_scale,
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Factor(f) => format!("{f}"),
            Self::Level(DensityLevel::Low) => "low".into(),
            Self::Level(DensityLevel::Middle) => "middle".into(),
            Self::Level(DensityLevel::High) => "high".into(),
        }
    }
}

fn sample_point(
    region: &Region,
    centres: &[PlanePoint],
    clusters: &[SpatialCluster],
    pick: &WeightedIndex<f64>,
    rng: &mut SimRng,
) -> PlanePoint {
    let k = pick.sample(rng);
    let c = centres[k];
    let spread = clusters[k].spread_km;
    if spread == 0.0 {
        return region.clamp(c);
    }
    let noise = Normal::new(0.0, spread).expect("finite spread");
    let mut p = c;
    for _ in 0..PLACEMENT_ATTEMPTS {
        p = PlanePoint::new(c.x + noise.sample(rng), c.y + noise.sample(rng));
        if region.contains_plane(p) {
            return p;
        }
    }
    region.clamp(p)
}

fn poisson(lambda: f64, rng: &mut SimRng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as u64
}

/// Draws trips from an inhomogeneous Poisson process whose rate follows the
/// profile's cyclic intensity curve, normalised so that a full week has
/// `weekly_total` expected arrivals.
pub fn synthesize(
    profile: &DemandProfile,
    window: TimeWindow,
    seed: u64,
    region: &Region,
    fare: &FareSchedule,
    speed: &SpeedDistribution,
) -> Result<Vec<TripRequest>> {
    profile.validate()?;
    region.validate()?;
    if profile.weekly_total == 0.0 || window.duration_s <= 0 {
        return Ok(Vec::new());
    }
    let mut rng = stream(seed, Stream::Demand);

    let curve = &profile.intensity;
    let per_minute = profile.weekly_total / MINUTES_PER_WEEK / curve.mean_rate();
    let bin_s = i64::from(curve.bin_minutes) * 60;
    let cycle_s = (curve.cycle_minutes() * 60.0) as i64;

    // arrival times
    let mut times = Vec::new();
    let mut t = window.start_s;
    while t < window.end_s() {
        let phase = t.rem_euclid(cycle_s);
        let bin = (phase / bin_s) as usize;
        let bin_end = (t - phase + (bin as i64 + 1) * bin_s).min(window.end_s());
        let span = bin_end - t;
        let lambda = curve.rates[bin] * per_minute * span as f64 / 60.0;
        for _ in 0..poisson(lambda, &mut rng) {
            times.push(rng.random_range(t..bin_end));
        }
        t = bin_end;
    }
    times.sort_unstable();

    let centres: Vec<PlanePoint> = profile
        .clusters
        .iter()
        .map(|c| region.project(c.center))
        .collect::<Result<_>>()?;
    let pick = WeightedIndex::new(profile.clusters.iter().map(|c| c.weight))
        .map_err(|e| CoreError::InvalidConfig(format!("cluster weights: {e}")))?;

    let mut trips = Vec::with_capacity(times.len());
    for request_time_s in times {
        let o = sample_point(region, &centres, &profile.clusters, &pick, &mut rng);
        let kmh = speed.sample(&mut rng);
        for _ in 0..DESTINATION_ATTEMPTS {
            let d = sample_point(region, &centres, &profile.clusters, &pick, &mut rng);
            let distance_km = manhattan(o, d);
            let duration_min = distance_km / kmh * 60.0;
            if distance_km <= 0.0 || duration_min < MIN_TRIP_MINUTES {
                continue;
            }
            let trip = TripRequest {
                trip_id: trips.len() as u64,
                request_time_s,
                origin: region.unproject(o),
                destination: region.unproject(d),
                distance_km,
                duration_min,
                fare: fare.fare(distance_km),
            };
            if trip.validate().is_ok() {
                trips.push(trip);
            }
            break;
        }
    }
    Ok(trips)
}

/// Thins (`factor < 1`) or bootstraps (`factor > 1`) a trip list. Bootstrapped
/// copies get their request time jittered by up to one step either way.
pub fn scale_density(
    trips: &[TripRequest],
    factor: f64,
    seed: u64,
    step_seconds: u32,
) -> Result<Vec<TripRequest>> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(CoreError::InvalidConfig(format!(
            "density factor must be positive, got {factor}"
        )));
    }
    if factor == 1.0 {
        return Ok(trips.to_vec());
    }
    let mut rng = stream(seed, Stream::Density);
    let mut out = Vec::with_capacity((trips.len() as f64 * factor * 1.05) as usize + 8);

    if factor < 1.0 {
        out.extend(trips.iter().filter(|_| rng.random_bool(factor)).cloned());
    } else {
        let whole = factor.floor() as usize;
        let frac = factor - whole as f64;
        let jitter = i64::from(step_seconds);
        for t in trips {
            out.push(t.clone());
            let extra = whole - 1 + usize::from(frac > 0.0 && rng.random_bool(frac));
            for _ in 0..extra {
                let mut copy = t.clone();
                copy.request_time_s =
                    (t.request_time_s + rng.random_range(-jitter..=jitter)).max(0);
                out.push(copy);
            }
        }
    }

    out.sort_by(|a, b| {
        a.request_time_s
            .cmp(&b.request_time_s)
            .then(a.trip_id.cmp(&b.trip_id))
    });
    for (i, t) in out.iter_mut().enumerate() {
        t.trip_id = i as u64;
    }
    Ok(out)
}
