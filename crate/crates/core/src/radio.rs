//! Downlink radio model: load-weighted inter-cell interference, SINR, the
//! SINR-to-throughput link curve and PRB sharing inside a cell.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{dbm_to_watts, linear_to_db, received_power_dbm, PropagationParams};
use crate::scenario::{CellId, InterferenceMatrix, Point, SiteSpec};

/// Smoothed per-cell load in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVector {
    values: Vec<f64>,
}

impl LoadVector {
    pub fn zeros(n_cells: usize) -> Self {
        Self {
            values: vec![0.0; n_cells],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { values }
    }

    pub fn get(&self, cell: CellId) -> f64 {
        self.values[cell]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `chi <- (1 - alpha) chi + alpha occupancy`.
    pub fn update(&mut self, cell: CellId, occupancy: f64, alpha: f64) {
        update_load(self, cell, occupancy, alpha);
    }
}

pub fn update_load(smoothed: &mut LoadVector, cell: CellId, occupancy: f64, alpha: f64) {
    debug_assert!((0.0..=1.0).contains(&occupancy));
    debug_assert!(alpha > 0.0 && alpha <= 1.0);
    let v = &mut smoothed.values[cell];
    *v = ((1.0 - alpha) * *v + alpha * occupancy).clamp(0.0, 1.0);
}

/// Maps SINR to achievable throughput on one PRB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkCurve {
    /// `min(cap, eff_bw * B * log2(1 + sinr / eff_sinr))`.
    AttenuatedShannon {
        bandwidth_efficiency: f64,
        sinr_efficiency: f64,
        /// bit/s.
        max_throughput_per_prb: f64,
        /// Hz.
        prb_bandwidth: f64,
    },
    /// `(sinr_db, bit/s)` points, linearly interpolated in dB and held
    /// constant beyond either end.
    Table { points: Vec<[f64; 2]> },
}

impl Default for LinkCurve {
    fn default() -> Self {
        LinkCurve::AttenuatedShannon {
            bandwidth_efficiency: 0.6,
            sinr_efficiency: 1.25,
            max_throughput_per_prb: 720e3,
            prb_bandwidth: 180e3,
        }
    }
}

impl LinkCurve {
    pub fn validate(&self) -> Result<()> {
        match self {
            LinkCurve::AttenuatedShannon {
                bandwidth_efficiency,
                sinr_efficiency,
                max_throughput_per_prb,
                prb_bandwidth,
            } => {
                for (name, v) in [
                    ("link.bandwidth_efficiency", bandwidth_efficiency),
                    ("link.sinr_efficiency", sinr_efficiency),
                    ("link.max_throughput_per_prb", max_throughput_per_prb),
                    ("link.prb_bandwidth", prb_bandwidth),
                ] {
                    if !(*v > 0.0 && v.is_finite()) {
                        return Err(Error::validation(name, "must be finite and > 0"));
                    }
                }
            }
            LinkCurve::Table { points } => {
                if points.is_empty() {
                    return Err(Error::validation("link.points", "table is empty"));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) || points[0][1] < 0.0 {
                    return Err(Error::validation(
                        "link.points",
                        "values must be finite and throughput >= 0",
                    ));
                }
                for w in points.windows(2) {
                    if !(w[1][0] > w[0][0] && w[1][1] >= w[0][1]) {
                        return Err(Error::validation(
                            "link.points",
                            "sinr must increase strictly and throughput must not decrease",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads a `sinr_db,throughput_per_prb_bps` CSV with a header row.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        for row in reader.deserialize() {
            let (sinr_db, bps): (f64, f64) = row?;
            points.push([sinr_db, bps]);
        }
        let curve = LinkCurve::Table { points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn max_throughput(&self) -> f64 {
        match self {
            LinkCurve::AttenuatedShannon {
                max_throughput_per_prb,
                ..
            } => *max_throughput_per_prb,
            LinkCurve::Table { points } => points.last().map_or(0.0, |p| p[1]),
        }
    }
}

/// Throughput of one PRB at linear `sinr`, bit/s.
pub fn throughput_per_prb(sinr: f64, curve: &LinkCurve) -> f64 {
    debug_assert!(sinr >= 0.0);
    match curve {
        LinkCurve::AttenuatedShannon {
            bandwidth_efficiency,
            sinr_efficiency,
            max_throughput_per_prb,
            prb_bandwidth,
        } => {
            let shannon = bandwidth_efficiency * prb_bandwidth * (1.0 + sinr / sinr_efficiency).log2();
            shannon.min(*max_throughput_per_prb)
        }
        LinkCurve::Table { points } => {
            let db = linear_to_db(sinr);
            let first = points[0];
            let last = points[points.len() - 1];
            if db <= first[0] {
                return first[1];
            }
            if db >= last[0] {
                return last[1];
            }
            let i = points.partition_point(|p| p[0] <= db);
            let (a, b) = (points[i - 1], points[i]);
            a[1] + (b[1] - a[1]) * (db - a[0]) / (b[0] - a[0])
        }
    }
}

/// `N_m` times the per-PRB rate.
pub fn user_throughput(allocated_prbs: u32, per_prb: f64) -> f64 {
    allocated_prbs as f64 * per_prb
}

/// Load-weighted co-channel interference per subcarrier, watts.
///
/// `rx_watts[k]` is the user's received power from cell `k`.
pub fn interference_from_powers(
    rx_watts: &[f64],
    serving: CellId,
    matrix: &InterferenceMatrix,
    loads: &LoadVector,
) -> f64 {
    matrix
        .co_channel(serving)
        .iter()
        .map(|&k| loads.get(k) * rx_watts[k])
        .sum()
}

pub fn sinr_from_powers(
    rx_watts: &[f64],
    serving: CellId,
    matrix: &InterferenceMatrix,
    loads: &LoadVector,
    noise_watts: f64,
) -> f64 {
    rx_watts[serving] / (interference_from_powers(rx_watts, serving, matrix, loads) + noise_watts)
}

/// Sites and constants needed to evaluate a user's radio conditions from
/// its position.
#[derive(Debug, Clone, Copy)]
pub struct RadioEnvironment<'a> {
    pub sites: &'a [SiteSpec],
    pub matrix: &'a InterferenceMatrix,
    pub propagation: &'a PropagationParams,
    pub noise_watts: f64,
}

impl<'a> RadioEnvironment<'a> {
    pub fn received_dbm(&self, point: Point, shadow_db: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sites.len()];
        self.received_dbm_into(point, shadow_db, &mut out);
        out
    }

    pub fn received_dbm_into(&self, point: Point, shadow_db: &[f64], out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(self.sites) {
            *o = received_power_dbm(s, point, shadow_db[s.id], self.propagation);
        }
    }

    pub fn received_watts(&self, point: Point, shadow_db: &[f64]) -> Vec<f64> {
        self.received_dbm(point, shadow_db)
            .into_iter()
            .map(dbm_to_watts)
            .collect()
    }

    pub fn interference_per_subcarrier(
        &self,
        point: Point,
        shadow_db: &[f64],
        serving: CellId,
        loads: &LoadVector,
    ) -> f64 {
        interference_from_powers(&self.received_watts(point, shadow_db), serving, self.matrix, loads)
    }

    pub fn sinr_linear(
        &self,
        point: Point,
        shadow_db: &[f64],
        serving: CellId,
        loads: &LoadVector,
    ) -> f64 {
        sinr_from_powers(
            &self.received_watts(point, shadow_db),
            serving,
            self.matrix,
            loads,
            self.noise_watts,
        )
    }
}

/// Shares `capacity` PRBs among `n_users` users listed in arrival order.
///
/// Everyone first gets `min`; the rest is handed out one PRB at a time in
/// arrival order, skipping users already at `max`, until PRBs or headroom
/// run out.
pub fn reallocate_prbs(
    cell: CellId,
    n_users: usize,
    capacity: u32,
    min: u32,
    max: u32,
) -> Result<Vec<u32>> {
    let demand = n_users as u64 * min as u64;
    if demand > capacity as u64 {
        return Err(Error::InfeasibleAllocation {
            cell,
            users: n_users,
            demand: demand.min(u32::MAX as u64) as u32,
            capacity,
        });
    }
    if n_users == 0 {
        return Ok(Vec::new());
    }
    let spare = capacity - demand as u32;
    let headroom = max - min;
    let full_rounds = headroom.min(spare / n_users as u32);
    let leftover = if full_rounds == headroom {
        0
    } else {
        (spare - full_rounds * n_users as u32) as usize
    };
    Ok((0..n_users)
        .map(|i| min + full_rounds + (i < leftover) as u32)
        .collect())
}
