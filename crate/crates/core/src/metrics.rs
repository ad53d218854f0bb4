//! Efficiency and equity measures over a finished run.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Gini coefficient of non-negative incomes, via the sorted-rank form of the
/// mean absolute difference `sum_ij |x_i - x_j| / (2 n^2 mean)`.
///
/// All-zero incomes give 0.
pub fn gini(incomes: &[f64]) -> Result<f64> {
    if incomes.is_empty() {
        return Err(CoreError::EmptyIncomes);
    }
    let mut xs = incomes.to_vec();
    xs.sort_by(f64::total_cmp);
    let total: f64 = xs.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let n = xs.len() as f64;
    let weighted: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fate", rename_all = "snake_case")]
pub enum TripFate {
    Served {
        wait_min: f64,
    },
    Cancelled,
    /// Still on the waiting list when the window closed.
    Residual,
}

/// Fill rate over all requests and mean pickup wait over served requests.
/// No requests at all counts as a perfect fill with zero wait.
pub fn fill_and_wait(fates: &[TripFate]) -> (f64, f64) {
    if fates.is_empty() {
        return (1.0, 0.0);
    }
    let waits: Vec<f64> = fates
        .iter()
        .filter_map(|f| match f {
            TripFate::Served { wait_min } => Some(*wait_min),
            _ => None,
        })
        .collect();
    let fill = waits.len() as f64 / fates.len() as f64;
    let avg = if waits.is_empty() {
        0.0
    } else {
        waits.iter().sum::<f64>() / waits.len() as f64
    };
    (fill, avg)
}

/// Per-bin counts of new customer requests and new charging-station arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandCurves {
    pub bin_minutes: f64,
    pub customer: Vec<u64>,
    pub charging: Vec<u64>,
}

impl DemandCurves {
    pub fn len(&self) -> usize {
        self.customer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.customer.is_empty()
    }

    /// Bins `[from, to)` of both curves.
    pub fn slice(&self, from: usize, to: usize) -> Self {
        let to = to.min(self.len());
        let from = from.min(to);
        Self {
            bin_minutes: self.bin_minutes,
            customer: self.customer[from..to].to_vec(),
            charging: self.charging[from..to].to_vec(),
        }
    }
}

/// Bins event times (minutes from the run start). The curves cover at least
/// `horizon_min` and stretch to include the latest event.
pub fn demand_curves(
    request_min: &[f64],
    charge_min: &[f64],
    bin_minutes: f64,
    horizon_min: f64,
) -> DemandCurves {
    assert!(bin_minutes > 0.0, "bin width must be positive");
    let bin_of = |t: f64| (t.max(0.0) / bin_minutes).floor() as usize;
    let latest = request_min
        .iter()
        .chain(charge_min)
        .map(|&t| bin_of(t) + 1)
        .max()
        .unwrap_or(0);
    let bins = ((horizon_min / bin_minutes).ceil() as usize).max(latest);
    let mut customer = vec![0; bins];
    let mut charging = vec![0; bins];
    for &t in request_min {
        customer[bin_of(t)] += 1;
    }
    for &t in charge_min {
        charging[bin_of(t)] += 1;
    }
    DemandCurves {
        bin_minutes,
        customer,
        charging,
    }
}

/// Centred moving average; edge bins average over the part of the window
/// that exists.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Minutes between the (smoothed) charging-demand peak and the customer
/// peak; `None` when either curve is flat.
pub fn peak_lag(curves: &DemandCurves, smoothing_bins: usize) -> Option<f64> {
    let cust: Vec<f64> = curves.customer.iter().map(|&c| c as f64).collect();
    let chg: Vec<f64> = curves.charging.iter().map(|&c| c as f64).collect();
    if cust.is_empty() || is_constant(&cust) || is_constant(&chg) {
        return None;
    }
    let cust = moving_average(&cust, smoothing_bins);
    let chg = moving_average(&chg, smoothing_bins);
    let lag_bins = argmax(&chg) as f64 - argmax(&cust) as f64;
    Some(lag_bins * curves.bin_minutes)
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub total_requests: usize,
    pub served: usize,
    pub cancelled: usize,
    pub residual: usize,
    pub fill_rate: f64,
    pub unsatisfied_rate: f64,
    pub avg_wait_min: f64,
    pub gini: f64,
    pub charge_sessions: usize,
    pub peak_lag_min: Option<f64>,
}

impl RunMetrics {
    pub fn compute(
        fates: &[TripFate],
        incomes: &[f64],
        curves: &DemandCurves,
        smoothing_bins: usize,
    ) -> Self {
        let (fill_rate, avg_wait_min) = fill_and_wait(fates);
        let count = |want: fn(&TripFate) -> bool| fates.iter().filter(|f| want(f)).count();
        Self {
            total_requests: fates.len(),
            served: count(|f| matches!(f, TripFate::Served { .. })),
            cancelled: count(|f| matches!(f, TripFate::Cancelled)),
            residual: count(|f| matches!(f, TripFate::Residual)),
            fill_rate,
            unsatisfied_rate: 1.0 - fill_rate,
            avg_wait_min,
            gini: if incomes.is_empty() {
                0.0
            } else {
                gini(incomes).unwrap_or(0.0)
            },
            charge_sessions: curves.charging.iter().sum::<u64>() as usize,
            peak_lag_min: peak_lag(curves, smoothing_bins),
        }
    }
}
