//! Region geometry, planar projection and step-based travel times.
//!
//! All distance math in the simulator happens on a flat kilometre grid
//! obtained by scaling longitude and latitude linearly onto the region
//! rectangle. Distances are Manhattan distances on that grid.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Tolerance used when a floating-point duration is converted to whole steps,
/// so that values like `1200.0000000002` seconds do not spill into an extra step.
const STEP_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Kilometres east (`x`) and north (`y`) of the region's south-west corner.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Rectangular simulation region with its planar extent in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Region {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub width_km: f64,
    pub height_km: f64,
}

impl Default for Region {
    /// Greater Beijing: 115.5–117.37°E, 39.47–40.68°N, a 165 km × 138 km box.
    fn default() -> Self {
        Self {
            lon_min: 115.5,
            lon_max: 117.37,
            lat_min: 39.47,
            lat_max: 40.68,
            width_km: 165.0,
            height_km: 138.0,
        }
    }
}

impl Region {
    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = self.lon_max > self.lon_min
            && self.lat_max > self.lat_min
            && self.width_km > 0.0
            && self.height_km > 0.0
            && [self.lon_min, self.lon_max, self.lat_min, self.lat_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidRegion)
        }
    }

    pub fn km_per_deg_lon(&self) -> f64 {
        self.width_km / (self.lon_max - self.lon_min)
    }

    pub fn km_per_deg_lat(&self) -> f64 {
        self.height_km / (self.lat_max - self.lat_min)
    }

    pub fn contains_geo(&self, p: GeoPoint) -> bool {
        (self.lon_min..=self.lon_max).contains(&p.lon)
            && (self.lat_min..=self.lat_max).contains(&p.lat)
    }

    pub fn contains_plane(&self, p: PlanePoint) -> bool {
        (0.0..=self.width_km).contains(&p.x) && (0.0..=self.height_km).contains(&p.y)
    }

    pub fn project(&self, p: GeoPoint) -> Result<PlanePoint, CoreError> {
        if !self.contains_geo(p) {
            return Err(CoreError::OutOfRegion {
                lon: p.lon,
                lat: p.lat,
            });
        }
        Ok(PlanePoint {
            x: (p.lon - self.lon_min) * self.km_per_deg_lon(),
            y: (p.lat - self.lat_min) * self.km_per_deg_lat(),
        })
    }

    pub fn unproject(&self, p: PlanePoint) -> GeoPoint {
        GeoPoint {
            lon: self.lon_min + p.x / self.km_per_deg_lon(),
            lat: self.lat_min + p.y / self.km_per_deg_lat(),
        }
    }

    /// Pulls a planar point back inside the rectangle.
    pub fn clamp(&self, p: PlanePoint) -> PlanePoint {
        PlanePoint {
            x: p.x.clamp(0.0, self.width_km),
            y: p.y.clamp(0.0, self.height_km),
        }
    }
}

pub fn manhattan(a: PlanePoint, b: PlanePoint) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}

/// Point reached after covering `fraction` of the x-then-y Manhattan path
/// from `from` to `to`.
pub fn along_manhattan(from: PlanePoint, to: PlanePoint, fraction: f64) -> PlanePoint {
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    let total = dx.abs() + dy.abs();
    if total == 0.0 || fraction >= 1.0 {
        return to;
    }
    if fraction <= 0.0 {
        return from;
    }
    let covered = total * fraction;
    if covered <= dx.abs() {
        PlanePoint::new(from.x + dx.signum() * covered, from.y)
    } else {
        PlanePoint::new(to.x, from.y + dy.signum() * (covered - dx.abs()))
    }
}

/// Fixed-length simulation clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub step_index: u64,
    pub step_seconds: u32,
}

impl SimClock {
    pub fn new(step_seconds: u32) -> Self {
        assert!(step_seconds > 0, "step length must be positive");
        Self {
            step_index: 0,
            step_seconds,
        }
    }

    pub fn tick(&mut self) {
        self.step_index += 1;
    }

    pub fn wall_seconds(&self) -> u64 {
        self.step_index * u64::from(self.step_seconds)
    }

    pub fn minutes(&self) -> f64 {
        self.wall_seconds() as f64 / 60.0
    }
}

/// Whole steps needed to cover `seconds`, rounded up.
pub fn seconds_to_steps(seconds: f64, step_seconds: u32) -> u64 {
    debug_assert!(seconds >= 0.0);
    let steps = seconds / f64::from(step_seconds);
    (steps - STEP_EPSILON).ceil().max(0.0) as u64
}

pub fn minutes_to_steps(minutes: f64, step_seconds: u32) -> u64 {
    seconds_to_steps(minutes * 60.0, step_seconds)
}

/// Whole steps needed to drive `distance_km` at `speed_kmh`, rounded up.
pub fn travel_steps(distance_km: f64, speed_kmh: f64, step_seconds: u32) -> u64 {
    debug_assert!(speed_kmh > 0.0);
    seconds_to_steps(distance_km * 3600.0 / speed_kmh, step_seconds)
}

pub const EMPTY_SPEED_KMH: f64 = 30.0;

/// Empty-cruise travel time in minutes at 30 km/h, rounded up to whole steps.
pub fn travel_time_empty(distance_km: f64, step_seconds: u32) -> f64 {
    let steps = travel_steps(distance_km, EMPTY_SPEED_KMH, step_seconds);
    steps as f64 * f64::from(step_seconds) / 60.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projects_region_corners_and_midpoint() {
        let r = Region::default();
        let sw = r.project(GeoPoint::new(115.5, 39.47)).unwrap();
        assert_eq!(sw, PlanePoint::new(0.0, 0.0));
        let ne = r.project(GeoPoint::new(117.37, 40.68)).unwrap();
        assert!((ne.x - 165.0).abs() < 1e-9 && (ne.y - 138.0).abs() < 1e-9);
        let mid = r.project(GeoPoint::new(116.435, 40.075)).unwrap();
        assert!((mid.x - 82.5).abs() < 1e-9, "{mid:?}");
        assert!((mid.y - 69.0).abs() < 1e-9, "{mid:?}");
    }

    #[test]
    fn out_of_region_is_rejected() {
        let r = Region::default();
        assert!(matches!(
            r.project(GeoPoint::new(118.0, 40.0)),
            Err(CoreError::OutOfRegion { .. })
        ));
        assert!(r.project(GeoPoint::new(116.0, 39.0)).is_err());
    }

    #[test]
    fn manhattan_examples() {
        let o = PlanePoint::new(0.0, 0.0);
        assert_eq!(manhattan(o, o), 0.0);
        assert_eq!(manhattan(o, PlanePoint::new(3.0, 4.0)), 7.0);

        // 0.1 degree in both directions near the city centre.
        let r = Region::default();
        let a = r.project(GeoPoint::new(116.40, 39.90)).unwrap();
        let b = r.project(GeoPoint::new(116.50, 40.00)).unwrap();
        let lon_km: f64 = 165.0 / 1.87 * 0.1;
        let lat_km: f64 = 138.0 / 1.21 * 0.1;
        assert!((lon_km - 8.8235).abs() < 1e-3);
        assert!((lat_km - 11.4050).abs() < 1e-3);
        let d = manhattan(a, b);
        assert!((d - (lon_km + lat_km)).abs() < 1e-9);
        assert!((d - 20.23).abs() < 0.01, "{d}");
    }

    #[test]
    fn empty_travel_time_rounds_up_to_steps() {
        assert_eq!(travel_time_empty(0.0, 30), 0.0);
        assert_eq!(travel_time_empty(10.0, 30), 20.0);
        assert_eq!(travel_steps(10.0, 30.0, 30), 40);
        // 0.1 km is 12 s, one full 30 s step.
        assert_eq!(travel_steps(0.1, 30.0, 30), 1);
        assert_eq!(travel_time_empty(0.1, 30), 0.5);
    }

    #[test]
    fn clock_wall_time() {
        let mut c = SimClock::new(30);
        for _ in 0..4 {
            c.tick();
        }
        assert_eq!(c.wall_seconds(), 120);
        assert_eq!(c.minutes(), 2.0);
    }

    #[test]
    fn manhattan_path_goes_x_first() {
        let a = PlanePoint::new(0.0, 0.0);
        let b = PlanePoint::new(4.0, -2.0);
        assert_eq!(along_manhattan(a, b, 0.5), PlanePoint::new(3.0, 0.0));
        assert_eq!(along_manhattan(a, b, 0.75), PlanePoint::new(4.0, -0.5));
        assert_eq!(along_manhattan(a, b, 1.0), b);
    }

    fn plane() -> impl Strategy<Value = PlanePoint> {
        (0.0..165.0f64, 0.0..138.0f64).prop_map(|(x, y)| PlanePoint::new(x, y))
    }

    proptest! {
        #[test]
        fn projection_round_trips(lon in 115.5..=117.37f64, lat in 39.47..=40.68f64) {
            let r = Region::default();
            let p = r.project(GeoPoint::new(lon, lat)).unwrap();
            prop_assert!(r.contains_plane(r.clamp(p)));
            let back = r.project(r.unproject(p)).unwrap();
            prop_assert!(manhattan(p, back) < 1e-9);
        }

        #[test]
        fn manhattan_is_a_metric(a in plane(), b in plane(), c in plane()) {
            prop_assert!(manhattan(a, b) >= 0.0);
            prop_assert_eq!(manhattan(a, b), manhattan(b, a));
            prop_assert!(manhattan(a, c) <= manhattan(a, b) + manhattan(b, c) + 1e-9);
        }

        #[test]
        fn empty_travel_time_is_monotone(d1 in 0.0..200.0f64, d2 in 0.0..200.0f64) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(travel_time_empty(lo, 30) <= travel_time_empty(hi, 30));
        }
    }
}
