//! Lloyd's k-means with k-means++ seeding on projected kilometre coordinates.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::StationSite;
use crate::error::{CoreError, Result};
use crate::geo::PlanePoint;
use crate::rng::{stream, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansOptions {
    pub max_iterations: usize,
    /// Stop once no centroid moves further than this (km).
    pub tolerance_km: f64,
    /// Independent k-means++ seedings; the lowest final WCSS wins.
    pub restarts: usize,
    /// Points beyond this count are subsampled before clustering.
    pub sample_cap: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            tolerance_km: 1e-6,
            restarts: 3,
            sample_cap: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<PlanePoint>,
    pub assignment: Vec<usize>,
    /// WCSS after the initial assignment and after every Lloyd iteration.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn wcss(&self) -> f64 {
        *self.wcss_history.last().expect("history is never empty")
    }
}

fn sq_dist(a: PlanePoint, b: PlanePoint) -> f64 {
    let (dx, dy) = (a.x - b.x, a.y - b.y);
    dx * dx + dy * dy
}

fn nearest(p: PlanePoint, centroids: &[PlanePoint]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, *c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub fn wcss(points: &[PlanePoint], centroids: &[PlanePoint], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &k)| sq_dist(*p, centroids[k]))
        .sum()
}

fn distinct_count(points: &[PlanePoint]) -> usize {
    let mut keys: Vec<(u64, u64)> = points
        .iter()
        .map(|p| (p.x.to_bits(), p.y.to_bits()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

pub fn kmeans_plus_plus(points: &[PlanePoint], k: usize, rng: &mut SimRng) -> Vec<PlanePoint> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(*p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(*p, c));
        }
    }
    centroids
}

/// Runs Lloyd iterations from the given centroids. Empty clusters are
/// re-seeded at the point farthest from its current centroid.
pub fn lloyd(points: &[PlanePoint], init: Vec<PlanePoint>, opts: &KMeansOptions) -> KMeansFit {
    let k = init.len();
    let mut centroids = init;
    let mut assignment = vec![0usize; points.len()];
    let mut cost = vec![0f64; points.len()];

    let assign = |centroids: &[PlanePoint], assignment: &mut [usize], cost: &mut [f64]| -> f64 {
        let mut total = 0.0;
        for ((p, a), c) in points
            .iter()
            .zip(assignment.iter_mut())
            .zip(cost.iter_mut())
        {
            let (idx, d) = nearest(*p, centroids);
            *a = idx;
            *c = d;
            total += d;
        }
        total
    };

    let mut history = vec![assign(&centroids, &mut assignment, &mut cost)];
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (p, &a) in points.iter().zip(&assignment) {
            let s = &mut sums[a];
            s.0 += p.x;
            s.1 += p.y;
            s.2 += 1;
        }

        let mut taken = vec![false; points.len()];
        let mut next = centroids.clone();
        for (c, (sx, sy, n)) in next.iter_mut().zip(&sums) {
            if *n > 0 {
                *c = PlanePoint::new(sx / *n as f64, sy / *n as f64);
            } else {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    taken[i] = true;
                    *c = points[i];
                }
            }
        }

        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(*a, *b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;

        let w = assign(&centroids, &mut assignment, &mut cost);
        let prev = *history.last().unwrap();
        debug_assert!(
            w <= prev + 1e-9 * prev.max(1.0),
            "WCSS increased from {prev} to {w} at iteration {iterations}"
        );
        history.push(w);

        if movement < opts.tolerance_km {
            break;
        }
    }

    KMeansFit {
        centroids,
        assignment,
        wcss_history: history,
        iterations,
    }
}

pub fn kmeans(
    points: &[PlanePoint],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<KMeansFit> {
    let distinct = distinct_count(points);
    if k == 0 || distinct < k {
        return Err(CoreError::DegenerateInput {
            distinct,
            requested: k,
        });
    }
    let mut rng = stream(seed, Stream::Siting);

    let sampled: Vec<PlanePoint>;
    let data = if points.len() > opts.sample_cap && opts.sample_cap >= k {
        let mut idx = sample(&mut rng, points.len(), opts.sample_cap).into_vec();
        idx.sort_unstable();
        sampled = idx.into_iter().map(|i| points[i]).collect();
        if distinct_count(&sampled) < k {
            points
        } else {
            &sampled[..]
        }
    } else {
        points
    };

    let mut best: Option<KMeansFit> = None;
    for _ in 0..opts.restarts.max(1) {
        let init = kmeans_plus_plus(data, k, &mut rng);
        let fit = lloyd(data, init, opts);
        if best.as_ref().is_none_or(|b| fit.wcss() < b.wcss()) {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one restart");
    if data.len() != points.len() {
        // report the assignment over the full input
        fit.assignment = points
            .iter()
            .map(|p| nearest(*p, &fit.centroids).0)
            .collect();
    }
    Ok(fit)
}

/// One station per k-means cluster of trip origins, located at its centroid.
pub fn kmeans_sites(
    origins: &[PlanePoint],
    station_count: usize,
    capacity: u32,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<Vec<StationSite>> {
    let fit = kmeans(origins, station_count, seed, opts)?;
    Ok(fit
        .centroids
        .into_iter()
        .enumerate()
        .map(|(station_id, location)| StationSite {
            station_id,
            location,
            capacity,
        })
        .collect())
}
