use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geo::{manhattan, PlanePoint, Region};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSite {
    pub station_id: usize,
    pub location: PlanePoint,
    pub capacity: u32,
}

/// Nearest-station sub-regions of the simulation area.
///
/// Every point belongs to the sub-region of its Manhattan-nearest site, ties
/// going to the lower station id. Each sub-region also keeps its `k` nearest
/// neighbouring sites, which dispatch escalates to when local supply runs
/// out.
#[derive(Debug, Clone)]
pub struct Partition {
    sites: Vec<StationSite>,
    adjacency: Vec<Vec<usize>>,
}

impl Partition {
    /// `k_adjacent` is clamped to `sites.len() - 1`.
    pub fn build(sites: Vec<StationSite>, k_adjacent: usize) -> Result<Self> {
        if sites.is_empty() {
            return Err(CoreError::InvalidConfig(
                "partition needs at least one site".into(),
            ));
        }
        if sites.iter().enumerate().any(|(i, s)| s.station_id != i) {
            return Err(CoreError::InvalidConfig(
                "station ids must be 0..S-1 in order".into(),
            ));
        }
        if sites.iter().any(|s| s.capacity == 0) {
            return Err(CoreError::InvalidConfig(
                "station capacity must be at least 1".into(),
            ));
        }
        let k = k_adjacent.min(sites.len() - 1);
        let adjacency = sites
            .iter()
            .map(|s| {
                let mut others: Vec<(f64, usize)> = sites
                    .iter()
                    .filter(|o| o.station_id != s.station_id)
                    .map(|o| (manhattan(s.location, o.location), o.station_id))
                    .collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                others.into_iter().take(k).map(|(_, id)| id).collect()
            })
            .collect();
        Ok(Self { sites, adjacency })
    }

    pub fn sites(&self) -> &[StationSite] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, id: usize) -> &StationSite {
        &self.sites[id]
    }

    pub fn adjacent(&self, id: usize) -> &[usize] {
        &self.adjacency[id]
    }

    pub fn locate(&self, p: PlanePoint) -> usize {
        self.nearest(p).0
    }

    /// Nearest site and its Manhattan distance.
    pub fn nearest(&self, p: PlanePoint) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for s in &self.sites {
            let d = manhattan(p, s.location);
            if d < best.1 {
                best = (s.station_id, d);
            }
        }
        best
    }
}

#[derive(Serialize, Deserialize)]
struct SiteRow {
    station_id: usize,
    lon: f64,
    lat: f64,
    capacity: u32,
}

pub fn write_sites(path: impl AsRef<Path>, sites: &[StationSite], region: &Region) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for s in sites {
        let g = region.unproject(s.location);
        w.serialize(SiteRow {
            station_id: s.station_id,
            lon: g.lon,
            lat: g.lat,
            capacity: s.capacity,
        })?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

/// Reads a sites file; rows are re-ordered by station id, which must form 0..S-1.
pub fn read_sites(path: impl AsRef<Path>, region: &Region) -> Result<Vec<StationSite>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize::<SiteRow>() {
        rows.push(row?);
    }
    rows.sort_by_key(|r| r.station_id);
    let mut sites = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        if r.station_id != i {
            return Err(CoreError::Parse {
                path: path.into(),
                message: format!(
                    "station ids must be 0..S-1, found {} at position {i}",
                    r.station_id
                ),
            });
        }
        let location = region.project(crate::geo::GeoPoint::new(r.lon, r.lat))?;
        sites.push(StationSite {
            station_id: i,
            location,
            capacity: r.capacity,
        });
    }
    Ok(sites)
}
