//! Admission control, power-budget handover and load-driven margin tuning.
//!
//! The handover margin between cells `e` and `k` is `HM(e,k) = f(chi_e - chi_k)`
//! where `f` is a [`BalancingFunction`]. For load balancing to work, `f` has
//! to be non-increasing on `[-1, 1]`, stay inside `[hm_min, hm_max]`, and
//! satisfy `f(x) + f(-x) = 2 f(0)` so that two cells never raise (or lower)
//! their mutual margins together.

use std::fmt;

use crate::error::{Error, Result};
use crate::radio::LoadVector;
use crate::scenario::{CellId, PolicySpec, RadioParams, SiteSpec};

/// Slack allowed on the load-difference domain before rejecting.
pub const DOMAIN_EPS: f64 = 1e-9;
/// Tolerance of the reciprocal-sum check, dB.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaylorOrder {
    /// Constant margin `f0`: the classical, untuned case.
    Zero,
    /// `f(x) = f0 + (f0 - hm_max) x`.
    One,
}

impl TryFrom<u8> for TaylorOrder {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(TaylorOrder::Zero),
            1 => Ok(TaylorOrder::One),
            _ => Err(Error::validation("order", format!("{v} is not 0 or 1"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancingFunction {
    f0: f64,
    hm_min: f64,
    hm_max: f64,
    order: TaylorOrder,
}

impl BalancingFunction {
    pub fn new(f0: f64, hm_min: f64, hm_max: f64, order: TaylorOrder) -> Result<Self> {
        if !(f0.is_finite() && hm_min.is_finite() && hm_max.is_finite()) {
            return Err(Error::validation("balancing", "values must be finite"));
        }
        if !(hm_min <= f0 && f0 <= hm_max) {
            return Err(Error::validation(
                "f0",
                format!("{f0} outside [{hm_min}, {hm_max}]"),
            ));
        }
        Ok(Self {
            f0,
            hm_min,
            hm_max,
            order,
        })
    }

    pub fn from_policy(policy: &PolicySpec) -> Result<Self> {
        Self::new(
            policy.f0,
            policy.hm_min,
            policy.hm_max,
            TaylorOrder::try_from(policy.order)?,
        )
    }

    /// Constant function at `f0`, i.e. a fixed margin.
    pub fn fixed(f0: f64) -> Self {
        Self {
            f0,
            hm_min: f0,
            hm_max: f0,
            order: TaylorOrder::Zero,
        }
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn hm_min(&self) -> f64 {
        self.hm_min
    }

    pub fn hm_max(&self) -> f64 {
        self.hm_max
    }

    pub fn order(&self) -> TaylorOrder {
        self.order
    }

    /// Set for order-1 functions whose `f0` is not the midpoint of the
    /// margin range: `f` then misses `hm_min` or gets clamped there.
    pub fn midpoint_warning(&self) -> Option<String> {
        if self.order != TaylorOrder::One {
            return None;
        }
        let mid = 0.5 * (self.hm_min + self.hm_max);
        if (self.f0 - mid).abs() <= SYMMETRY_TOL {
            return None;
        }
        let f_at_one = 2.0 * self.f0 - self.hm_max;
        Some(if f_at_one < self.hm_min {
            format!(
                "f0={} is below the midpoint {mid}: f(1)={f_at_one} is clamped to hm_min={}",
                self.f0, self.hm_min
            )
        } else {
            format!(
                "f0={} is above the midpoint {mid}: f only reaches {f_at_one}, never hm_min={}",
                self.f0, self.hm_min
            )
        })
    }

    /// Unclamped polynomial value.
    fn raw(&self, x: f64) -> f64 {
        match self.order {
            TaylorOrder::Zero => self.f0,
            TaylorOrder::One => self.f0 + (self.f0 - self.hm_max) * x,
        }
    }

    /// Margin for load difference `x = chi_e - chi_k`, dB.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        if !(x.abs() <= 1.0 + DOMAIN_EPS) {
            return Err(Error::Domain(x));
        }
        let x = x.clamp(-1.0, 1.0);
        Ok(self.raw(x).clamp(self.hm_min, self.hm_max))
    }

    /// Whether `evaluate(x)` had to clamp the polynomial.
    pub fn clamps_at(&self, x: f64) -> bool {
        let r = self.raw(x.clamp(-1.0, 1.0));
        r < self.hm_min || r > self.hm_max
    }
}

pub fn evaluate_f(bf: &BalancingFunction, x: f64) -> Result<f64> {
    bf.evaluate(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n_samples: usize,
    /// Consecutive grid points `(x_i, x_{i+1})` where `f` increases.
    pub monotonicity_violations: Vec<(f64, f64)>,
    /// Grid points where `f` leaves `[hm_min, hm_max]`.
    pub range_violations: Vec<f64>,
    /// Grid points where `|f(x) + f(-x) - 2 f0| > 1e-9`.
    pub symmetry_violations: Vec<f64>,
    /// Grid points where the polynomial was clamped into range.
    pub clamped_points: usize,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.monotonicity_violations.is_empty()
            && self.range_violations.is_empty()
            && self.symmetry_violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |n: usize| if n == 0 { "ok" } else { "FAIL" };
        writeln!(f, "grid points:   {}", self.n_samples)?;
        writeln!(
            f,
            "monotonicity:  {} ({} violations)",
            verdict(self.monotonicity_violations.len()),
            self.monotonicity_violations.len()
        )?;
        writeln!(
            f,
            "range:         {} ({} violations)",
            verdict(self.range_violations.len()),
            self.range_violations.len()
        )?;
        writeln!(
            f,
            "symmetry:      {} ({} violations)",
            verdict(self.symmetry_violations.len()),
            self.symmetry_violations.len()
        )?;
        writeln!(f, "clamped:       {} points", self.clamped_points)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        write!(f, "result:        {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Checks an arbitrary margin curve on a uniform grid over `[-1, 1]`.
///
/// The grid is symmetric about zero so `-x` is evaluated exactly.
pub fn validate_curve(
    f: impl Fn(f64) -> f64,
    f0: f64,
    hm_min: f64,
    hm_max: f64,
    n_samples: usize,
) -> ValidationReport {
    assert!(n_samples >= 2, "need at least two grid points");
    let last = (n_samples - 1) as f64;
    let grid: Vec<f64> = (0..n_samples).map(|i| -1.0 + 2.0 * i as f64 / last).collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();

    let monotonicity_violations = grid
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| v[1] > v[0])
        .map(|(x, _)| (x[0], x[1]))
        .collect();
    let range_violations = grid
        .iter()
        .zip(&values)
        .filter(|(_, &v)| !(hm_min <= v && v <= hm_max))
        .map(|(&x, _)| x)
        .collect();
    let symmetry_violations = (0..n_samples)
        .filter(|&i| (values[i] + values[n_samples - 1 - i] - 2.0 * f0).abs() > SYMMETRY_TOL)
        .map(|i| grid[i])
        .collect();

    ValidationReport {
        n_samples,
        monotonicity_violations,
        range_violations,
        symmetry_violations,
        clamped_points: 0,
        warnings: Vec::new(),
    }
}

pub fn validate_balancing(bf: &BalancingFunction, n_samples: usize) -> ValidationReport {
    let mut report = validate_curve(
        |x| bf.evaluate(x).expect("grid stays in [-1, 1]"),
        bf.f0,
        bf.hm_min,
        bf.hm_max,
        n_samples,
    );
    let last = (n_samples - 1) as f64;
    report.clamped_points = (0..n_samples)
        .filter(|&i| bf.clamps_at(-1.0 + 2.0 * i as f64 / last))
        .count();
    report.warnings.extend(bf.midpoint_warning());
    report
}

/// Neighbour lists: cells whose sites lie within a radius of each other.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    neighbors: Vec<Vec<CellId>>,
}

impl Adjacency {
    pub fn within_radius(sites: &[SiteSpec], radius: f64) -> Self {
        let neighbors = sites
            .iter()
            .map(|a| {
                sites
                    .iter()
                    .filter(|b| b.id != a.id && a.position.distance(b.position) <= radius)
                    .map(|b| b.id)
                    .collect()
            })
            .collect();
        Self { neighbors }
    }

    pub fn from_lists(neighbors: Vec<Vec<CellId>>) -> Self {
        Self { neighbors }
    }

    pub fn neighbors(&self, cell: CellId) -> &[CellId] {
        &self.neighbors[cell]
    }

    pub fn n_cells(&self) -> usize {
        self.neighbors.len()
    }

    /// Every ordered adjacent pair `(e, k)`.
    pub fn pairs(&self) -> impl Iterator<Item = (CellId, CellId)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(e, ks)| ks.iter().map(move |&k| (e, k)))
    }
}

/// `HM(e, k)` for every ordered cell pair plus the common hysteresis.
/// Only adjacent pairs are ever updated; the rest stay at `f0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoverMarginMatrix {
    n: usize,
    margins: Vec<f64>,
    hysteresis: f64,
}

impl HandoverMarginMatrix {
    pub fn uniform(n_cells: usize, margin: f64, hysteresis: f64) -> Self {
        Self {
            n: n_cells,
            margins: vec![margin; n_cells * n_cells],
            hysteresis,
        }
    }

    pub fn get(&self, e: CellId, k: CellId) -> f64 {
        self.margins[e * self.n + k]
    }

    pub fn set(&mut self, e: CellId, k: CellId, margin: f64) {
        self.margins[e * self.n + k] = margin;
    }

    pub fn hysteresis(&self) -> f64 {
        self.hysteresis
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    /// Mean of `|HM(e,k) - f0|` over adjacent pairs, `None` without pairs.
    pub fn mean_abs_deviation(&self, f0: f64, adjacency: &Adjacency) -> Option<f64> {
        let (sum, count) = adjacency
            .pairs()
            .fold((0.0, 0usize), |(s, c), (e, k)| (s + (self.get(e, k) - f0).abs(), c + 1));
        (count > 0).then(|| sum / count as f64)
    }
}

/// Sets `HM(e,k) = f(chi_e - chi_k)` on every adjacent pair.
pub fn update_margins(
    hm: &mut HandoverMarginMatrix,
    loads: &LoadVector,
    bf: &BalancingFunction,
    adjacency: &Adjacency,
) -> Result<()> {
    for (e, k) in adjacency.pairs() {
        let margin = bf.evaluate(loads.get(e) - loads.get(k))?;
        hm.set(e, k, margin);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CacDecision {
    Admitted { cell: CellId, granted_prbs: u32 },
    BlockedCoverage { best_cell: CellId, best_power_dbm: f64 },
    BlockedResource { cell: CellId },
}

impl CacDecision {
    pub fn is_admitted(&self) -> bool {
        matches!(self, CacDecision::Admitted { .. })
    }
}

/// Strongest cell, ties to the lowest id.
pub fn best_server(rx_dbm: &[f64]) -> Option<CellId> {
    let mut best: Option<CellId> = None;
    for (k, &p) in rx_dbm.iter().enumerate() {
        match best {
            Some(b) if rx_dbm[b] >= p => {}
            _ => best = Some(k),
        }
    }
    best
}

/// Admission control.
///
/// `rx_dbm[k]` is the candidate's received power from cell `k`;
/// `available_prbs[k]` is the number of unallocated PRBs of cell `k`.
pub fn admit(rx_dbm: &[f64], available_prbs: &[u32], radio: &RadioParams) -> CacDecision {
    let best = best_server(rx_dbm).expect("at least one site");
    if rx_dbm[best] < radio.cac_signal_threshold {
        return CacDecision::BlockedCoverage {
            best_cell: best,
            best_power_dbm: rx_dbm[best],
        };
    }
    let free = available_prbs[best];
    if free < radio.min_prb_per_user {
        return CacDecision::BlockedResource { cell: best };
    }
    CacDecision::Admitted {
        cell: best,
        granted_prbs: radio.max_prb_per_user.min(free),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HandoverDecision {
    Stay,
    MoveTo { target: CellId, pbq_db: f64 },
}

/// Power-budget handover: move to the neighbour with the largest
/// `P_k - P_e` among those with `P_k - P_e >= HM(e,k) + hysteresis`, enough
/// signal, and room for at least the minimum allocation.
pub fn evaluate_handover(
    rx_dbm: &[f64],
    serving: CellId,
    neighbors: &[CellId],
    hm: &HandoverMarginMatrix,
    available_prbs: &[u32],
    radio: &RadioParams,
) -> HandoverDecision {
    let serving_power = rx_dbm[serving];
    let mut choice = HandoverDecision::Stay;
    for &k in neighbors {
        let pbq = rx_dbm[k] - serving_power;
        let eligible = pbq >= hm.get(serving, k) + hm.hysteresis()
            && rx_dbm[k] >= radio.ho_signal_threshold
            && available_prbs[k] >= radio.min_prb_per_user;
        if !eligible {
            continue;
        }
        let better = match choice {
            HandoverDecision::Stay => true,
            HandoverDecision::MoveTo { target, pbq_db } => {
                pbq > pbq_db || (pbq == pbq_db && k < target)
            }
        };
        if better {
            choice = HandoverDecision::MoveTo { target: k, pbq_db: pbq };
        }
    }
    choice
}
