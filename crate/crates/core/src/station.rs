//! Charging stations: a fixed number of chargers served first-come
//! first-served, and the per-station vacancy record ("operations chart").
//!
//! Charge durations are known when a taxi arrives, so a station schedules each
//! arrival on the charger that frees earliest. A taxi that cannot start at
//! once waits in the queue until [`Station::release`] hands it a charger at
//! exactly its scheduled start.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::geo::PlanePoint;
use crate::siting::StationSite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChargeSession {
    pub taxi_id: usize,
    pub station_id: usize,
    pub arrival_step: u64,
    pub start_step: u64,
    pub finish_step: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChargerError {
    #[error("taxi {taxi_id} holds no charger at station {station_id} finishing at step {step}")]
    NotCharging {
        taxi_id: usize,
        station_id: usize,
        step: u64,
    },
}

#[derive(Debug, Clone)]
pub struct Station {
    id: usize,
    location: PlanePoint,
    capacity: u32,
    free_at: BinaryHeap<Reverse<u64>>,
    active: Vec<ChargeSession>,
    queue: VecDeque<ChargeSession>,
    /// (step, vacant chargers) at every step where the count changed.
    changes: Vec<(u64, u32)>,
    arrivals: u64,
}

impl Station {
    pub fn new(site: &StationSite) -> Self {
        assert!(
            site.capacity > 0,
            "station {} has no chargers",
            site.station_id
        );
        Self {
            id: site.station_id,
            location: site.location,
            capacity: site.capacity,
            free_at: (0..site.capacity).map(|_| Reverse(0)).collect(),
            active: Vec::with_capacity(site.capacity as usize),
            queue: VecDeque::new(),
            changes: vec![(0, site.capacity)],
            arrivals: 0,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn location(&self) -> PlanePoint {
        self.location
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn occupied(&self) -> u32 {
        self.active.len() as u32
    }

    pub fn vacant(&self) -> u32 {
        self.capacity - self.occupied()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn active(&self) -> &[ChargeSession] {
        &self.active
    }

    pub fn queued(&self) -> impl Iterator<Item = &ChargeSession> {
        self.queue.iter()
    }

    /// Occupied share of the chargers; queued taxis do not count.
    pub fn utilization(&self) -> f64 {
        f64::from(self.occupied()) / f64::from(self.capacity)
    }

    pub fn is_busy(&self, threshold: f64) -> bool {
        self.utilization() >= threshold
    }

    fn record(&mut self, step: u64) {
        let vacant = self.vacant();
        match self.changes.last_mut() {
            Some(last) if last.0 == step => last.1 = vacant,
            Some(last) if last.1 == vacant => {}
            _ => self.changes.push((step, vacant)),
        }
    }

    /// Registers a taxi physically arriving at `now` and schedules its charge.
    pub fn arrive(&mut self, taxi_id: usize, now: u64, duration_steps: u64) -> ChargeSession {
        debug_assert!(duration_steps > 0);
        let Reverse(free) = self.free_at.pop().expect("capacity >= 1");
        let start_step = free.max(now);
        let finish_step = start_step + duration_steps;
        self.free_at.push(Reverse(finish_step));
        self.arrivals += 1;

        let session = ChargeSession {
            taxi_id,
            station_id: self.id,
            arrival_step: now,
            start_step,
            finish_step,
        };
        // A charger that frees this very step is still held until released.
        if start_step == now && self.active.len() < self.capacity as usize {
            self.active.push(session);
            self.record(now);
        } else {
            self.queue.push_back(session);
        }
        session
    }

    /// Taxis whose charge completes at `now`, in id order.
    pub fn finishing(&self, now: u64) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .active
            .iter()
            .filter(|s| s.finish_step == now)
            .map(|s| s.taxi_id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Frees the charger held by `taxi_id`; the head of the queue takes it
    /// over when its scheduled start has come. Returns that promoted session.
    pub fn release(
        &mut self,
        taxi_id: usize,
        now: u64,
    ) -> Result<Option<ChargeSession>, ChargerError> {
        let pos = self
            .active
            .iter()
            .position(|s| s.taxi_id == taxi_id && s.finish_step == now)
            .ok_or(ChargerError::NotCharging {
                taxi_id,
                station_id: self.id,
                step: now,
            })?;
        self.active.swap_remove(pos);

        let promoted = match self.queue.front() {
            Some(head) if head.start_step <= now => {
                debug_assert_eq!(head.start_step, now, "queued session missed its start");
                let head = self.queue.pop_front().expect("front exists");
                self.active.push(head);
                Some(head)
            }
            _ => None,
        };
        self.record(now);
        Ok(promoted)
    }

    /// Vacancy change-points, starting with `(0, capacity)`.
    pub fn chart(&self) -> &[(u64, u32)] {
        &self.changes
    }

    pub fn vacant_at(&self, step: u64) -> u32 {
        let idx = self.changes.partition_point(|(s, _)| *s <= step);
        self.changes[idx.saturating_sub(1)].1
    }
}

/// Dense `step,station_id,vacant` rendering of the vacancy chart.
pub fn write_chart_csv<W: Write>(
    mut w: W,
    stations: &[Station],
    last_step: u64,
) -> std::io::Result<()> {
    writeln!(w, "step,station_id,vacant")?;
    let mut cursors = vec![0usize; stations.len()];
    for step in 0..=last_step {
        for (st, cur) in stations.iter().zip(cursors.iter_mut()) {
            while *cur + 1 < st.changes.len() && st.changes[*cur + 1].0 <= step {
                *cur += 1;
            }
            writeln!(w, "{step},{},{}", st.id, st.changes[*cur].1)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ChartLine<'a> {
    station_id: usize,
    capacity: u32,
    /// `[step, vacant]` change-points
    vacant: &'a [(u64, u32)],
}

/// One JSON object per station with its vacancy change-points.
pub fn write_chart_jsonl<W: Write>(mut w: W, stations: &[Station]) -> std::io::Result<()> {
    for st in stations {
        let line = ChartLine {
            station_id: st.id,
            capacity: st.capacity,
            vacant: &st.changes,
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}
