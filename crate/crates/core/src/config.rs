//! Scenario configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{DemandDensity, DemandProfile, FareSchedule, SpeedDistribution, TimeWindow};
use crate::dispatch::{StrategyWeights, CANONICAL_STRATEGIES, DEFAULT_BUSY_THRESHOLD};
use crate::error::{CoreError, Result};
use crate::geo::Region;
use crate::siting::KMeansOptions;

/// Dispatch strategy: a canonical number (1 to 16) or explicit weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    Index(usize),
    Weights([f64; 4]),
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self::Index(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSource {
    /// A trips CSV, optionally thinned or resampled by `density`.
    Trips {
        path: PathBuf,
        #[serde(default)]
        density: DemandDensity,
    },
    /// Trips drawn from a demand profile. Without `profile` or
    /// `profile_path` the built-in two-ring, two-peak profile is used.
    Synthetic {
        #[serde(default)]
        profile: Option<DemandProfile>,
        #[serde(default)]
        profile_path: Option<PathBuf>,
        #[serde(default = "default_weekly_total")]
        weekly_total: f64,
        #[serde(default)]
        density: DemandDensity,
        #[serde(default = "default_desk_scale")]
        desk_scale: f64,
        #[serde(default)]
        speed: SpeedDistribution,
    },
}

fn default_weekly_total() -> f64 {
    20_000.0
}

fn default_desk_scale() -> f64 {
    0.01
}

impl Default for DemandSource {
    fn default() -> Self {
        Self::Synthetic {
            profile: None,
            profile_path: None,
            weekly_total: default_weekly_total(),
            density: DemandDensity::default(),
            desk_scale: default_desk_scale(),
            speed: SpeedDistribution::default(),
        }
    }
}

impl DemandSource {
    pub fn density(&self) -> DemandDensity {
        match self {
            Self::Trips { density, .. } | Self::Synthetic { density, .. } => *density,
        }
    }

    pub fn set_density(&mut self, d: DemandDensity) {
        match self {
            Self::Trips { density, .. } | Self::Synthetic { density, .. } => *density = d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub fleet_size: usize,
    pub battery_range_km: f64,
    pub station_count: usize,
    /// Chargers per station; applies to every station, including ones read
    /// from a sites file.
    pub station_capacity: u32,
    pub k_adjacent: usize,
    pub strategy: StrategySpec,
    /// Overrides the default magnitude scales of the grading terms.
    pub q: Option<[f64; 4]>,
    pub busy_threshold: f64,
    pub step_seconds: u32,
    pub empty_speed_kmh: f64,
    pub waiting_threshold_min: f64,
    pub cancel_threshold_min: f64,
    pub recharge_threshold_km: f64,
    pub recharge_time_min: f64,
    /// Charge time proportional to the missing range instead of fixed.
    pub soc_proportional_charging: bool,
    pub window: TimeWindow,
    /// Leading part of the window whose origins decide initial placement.
    pub placement_window_min: f64,
    pub bin_minutes: f64,
    pub smoothing_bins: usize,
    pub region: Region,
    pub fare: FareSchedule,
    pub demand: DemandSource,
    /// Station sites CSV; when absent stations are sited by k-means on the
    /// trip origins.
    pub sites_path: Option<PathBuf>,
    pub kmeans: KMeansOptions,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fleet_size: 300,
            battery_range_km: 200.0,
            station_count: 20,
            station_capacity: 16,
            k_adjacent: 3,
            strategy: StrategySpec::default(),
            q: None,
            busy_threshold: DEFAULT_BUSY_THRESHOLD,
            step_seconds: 30,
            empty_speed_kmh: 30.0,
            waiting_threshold_min: 3.0,
            cancel_threshold_min: 15.0,
            recharge_threshold_km: 20.0,
            recharge_time_min: 30.0,
            soc_proportional_charging: false,
            window: TimeWindow::days(7),
            placement_window_min: 1440.0,
            bin_minutes: 15.0,
            smoothing_bins: 3,
            region: Region::default(),
            fare: FareSchedule::default(),
            demand: DemandSource::default(),
            sites_path: None,
            kmeans: KMeansOptions::default(),
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::InvalidConfig(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::InvalidConfig(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML. Relative paths
    /// inside the file are resolved against the file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        let mut cfg = parsed.map_err(|e| match e {
            CoreError::InvalidConfig(m) => CoreError::Parse {
                path: path.into(),
                message: m,
            },
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.sites_path.as_mut() {
            fix(p);
        }
        match &mut self.demand {
            DemandSource::Trips { path, .. } => fix(path),
            DemandSource::Synthetic {
                profile_path: Some(p),
                ..
            } => fix(p),
            DemandSource::Synthetic { .. } => {}
        }
    }

    pub fn weights(&self) -> Result<StrategyWeights> {
        let mut w = match self.strategy {
            StrategySpec::Index(i) => StrategyWeights::canonical(i, self.battery_range_km)
                .ok_or_else(|| {
                    CoreError::InvalidConfig(format!(
                        "strategy: index {i} is not in 1..={}",
                        CANONICAL_STRATEGIES.len()
                    ))
                })?,
            StrategySpec::Weights(w) => StrategyWeights::new(w, self.battery_range_km),
        };
        if let Some(q) = self.q {
            w.q = q;
        }
        w.busy_threshold = self.busy_threshold;
        w.validate()?;
        Ok(w)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        fn check(problems: &mut Vec<String>, ok: bool, field: &str, what: &str) {
            if !ok {
                problems.push(format!("{field}: {what}"));
            }
        }
        check(
            &mut problems,
            positive(self.battery_range_km),
            "battery_range_km",
            "must be positive",
        );
        check(
            &mut problems,
            self.station_count > 0,
            "station_count",
            "must be at least 1",
        );
        check(
            &mut problems,
            self.station_capacity > 0,
            "station_capacity",
            "must be at least 1",
        );
        check(
            &mut problems,
            self.step_seconds > 0,
            "step_seconds",
            "must be positive",
        );
        check(
            &mut problems,
            positive(self.empty_speed_kmh),
            "empty_speed_kmh",
            "must be positive",
        );
        check(
            &mut problems,
            self.waiting_threshold_min.is_finite() && self.waiting_threshold_min >= 0.0,
            "waiting_threshold_min",
            "must be non-negative",
        );
        check(
            &mut problems,
            self.cancel_threshold_min.is_finite()
                && self.cancel_threshold_min >= self.waiting_threshold_min,
            "cancel_threshold_min",
            "must be at least waiting_threshold_min",
        );
        check(
            &mut problems,
            self.recharge_threshold_km.is_finite()
                && self.recharge_threshold_km >= 0.0
                && self.recharge_threshold_km < self.battery_range_km,
            "recharge_threshold_km",
            "must lie in [0, battery_range_km)",
        );
        check(
            &mut problems,
            positive(self.recharge_time_min),
            "recharge_time_min",
            "must be positive",
        );
        check(
            &mut problems,
            self.busy_threshold > 0.0 && self.busy_threshold <= 1.0,
            "busy_threshold",
            "must lie in (0, 1]",
        );
        check(
            &mut problems,
            self.window.duration_s > 0,
            "window.duration_s",
            "must be positive",
        );
        check(
            &mut problems,
            self.placement_window_min.is_finite() && self.placement_window_min >= 0.0,
            "placement_window_min",
            "must be non-negative",
        );
        check(
            &mut problems,
            self.bin_minutes.is_finite() && self.bin_minutes * 60.0 >= f64::from(self.step_seconds),
            "bin_minutes",
            "must be at least one step long",
        );
        check(
            &mut problems,
            self.smoothing_bins >= 1,
            "smoothing_bins",
            "must be at least 1",
        );
        check(
            &mut problems,
            self.region.validate().is_ok(),
            "region",
            "bounds are empty or not finite",
        );
        check(
            &mut problems,
            self.fare.flag_fall >= 0.0 && self.fare.per_km >= 0.0 && self.fare.included_km >= 0.0,
            "fare",
            "components must be non-negative",
        );
        if let DemandSource::Synthetic {
            weekly_total,
            desk_scale,
            profile,
            ..
        } = &self.demand
        {
            check(
                &mut problems,
                weekly_total.is_finite() && *weekly_total >= 0.0,
                "demand.weekly_total",
                "must be non-negative",
            );
            check(
                &mut problems,
                positive(*desk_scale),
                "demand.desk_scale",
                "must be positive",
            );
            if let Some(Err(e)) = profile.as_ref().map(DemandProfile::validate) {
                problems.push(format!("demand.profile: {e}"));
            }
        }
        let factor = self.demand.density().factor();
        check(
            &mut problems,
            factor.is_finite() && factor >= 0.0,
            "demand.density",
            "must be non-negative",
        );
        if let Err(e) = self.weights() {
            problems.push(format!("strategy: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CoreError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Key-sorted compact JSON rendering; the basis of [`Self::hash`].
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string(&value).expect("value serialises")
    }

    /// Short content hash identifying this exact configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Run directory name: configuration hash plus seed.
    pub fn run_name(&self) -> String {
        format!("{}-{}", self.hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_parameters() {
        let c = ScenarioConfig::default();
        assert_eq!(c.waiting_threshold_min, 3.0);
        assert_eq!(c.cancel_threshold_min, 15.0);
        assert_eq!(c.recharge_threshold_km, 20.0);
        assert_eq!(c.empty_speed_kmh, 30.0);
        assert_eq!(c.k_adjacent, 3);
        assert_eq!(c.step_seconds, 30);
        c.validate().unwrap();
    }

    #[test]
    fn toml_and_json_agree() {
        let toml = r#"
            seed = 7
            fleet_size = 200
            strategy = [1.0, 0.0, 1.0, 1.0]

            [demand]
            kind = "synthetic"
            weekly_total = 5000
            density = "high"
        "#;
        let a = ScenarioConfig::from_toml_str(toml).unwrap();
        let json = r#"{"seed": 7, "fleet_size": 200, "strategy": [1.0, 0.0, 1.0, 1.0],
            "demand": {"kind": "synthetic", "weekly_total": 5000, "density": "high"}}"#;
        let b = ScenarioConfig::from_json_str(json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.weights().unwrap().w, [1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.fleet_size += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert!(a.run_name().ends_with("-0"));
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let text = ScenarioConfig::default().canonical_json();
        let bat = text.find("\"battery_range_km\"").unwrap();
        let win = text.find("\"window\"").unwrap();
        assert!(bat < win);
    }

    #[test]
    fn field_level_diagnostics() {
        let c = ScenarioConfig {
            battery_range_km: -1.0,
            strategy: StrategySpec::Index(17),
            busy_threshold: 0.0,
            ..Default::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("battery_range_km"), "{msg}");
        assert!(msg.contains("strategy"), "{msg}");
        assert!(msg.contains("busy_threshold"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml_str("fleet_sise = 3").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "sites_path = \"sites.csv\"\n[demand]\nkind = \"trips\"\npath = \"trips.csv\"\n",
        )
        .unwrap();
        let c = ScenarioConfig::from_path(&path).unwrap();
        assert_eq!(c.sites_path.unwrap(), dir.path().join("sites.csv"));
        match c.demand {
            DemandSource::Trips { path, .. } => assert_eq!(path, dir.path().join("trips.csv")),
            other => panic!("{other:?}"),
        }
    }
}
