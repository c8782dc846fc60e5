//! Experiment description: cell layout, radio constants, traffic and policy.
//!
//! Scenarios are stored as TOML. Top-level keys hold the run timing and seed,
//! `[radio]`, `[propagation]`, `[link]`, `[traffic]` and `[policy]` hold the
//! constants of each subsystem, and every cell is one `[[sites]]` entry:
//!
//! ```toml
//! rng_seed = 1
//! snapshot_duration = 1.0
//! sim_duration = 1800.0
//! warmup_fraction = 0.1
//!
//! [[sites]]
//! id = 0
//! position = [0.0, 0.0]
//! band_index = 0
//! prb_capacity = 25
//! tx_power_per_subcarrier = 18.2
//! antenna_gain = 14.0
//! ```
//!
//! Unknown keys are rejected. `docs/scenario-format.md` lists every key.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::PropagationParams;
use crate::radio::LinkCurve;

pub type CellId = usize;

/// A point in the plane, in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// One eNB and the cell it serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSpec {
    pub id: CellId,
    pub position: Point,
    pub band_index: u32,
    pub prb_capacity: u32,
    /// dBm per subcarrier.
    pub tx_power_per_subcarrier: f64,
    /// dBi, omnidirectional.
    pub antenna_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioParams {
    pub reuse_factor: u32,
    pub subcarriers_per_prb: u32,
    /// Hz.
    pub subcarrier_bandwidth: f64,
    /// dBm per subcarrier.
    pub thermal_noise_per_subcarrier: f64,
    pub min_prb_per_user: u32,
    pub max_prb_per_user: u32,
    /// dBm per subcarrier; best-server power below this blocks admission.
    pub cac_signal_threshold: f64,
    /// dBm per subcarrier; handover targets must exceed this.
    pub ho_signal_threshold: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            reuse_factor: 3,
            subcarriers_per_prb: 12,
            subcarrier_bandwidth: 15_000.0,
            // kTB over 15 kHz plus a 9 dB receiver noise figure.
            thermal_noise_per_subcarrier: -123.2,
            min_prb_per_user: 1,
            max_prb_per_user: 4,
            cac_signal_threshold: -120.0,
            ho_signal_threshold: -120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    /// Network-wide session arrival rate, mobiles per second.
    pub arrival_rate: f64,
    /// Relative arrival intensity around each site, indexed like `sites`.
    pub hotspot_weights: Vec<f64>,
    /// Bytes downloaded per session.
    pub file_size: f64,
    /// m/s.
    pub user_speed: f64,
    /// New users are dropped uniformly in a disc of this radius around the
    /// site drawn from `hotspot_weights`.
    pub placement_radius: f64,
    /// Standard deviation of the heading change, radians per sqrt(second).
    pub turn_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    /// Planned handover margin f(0), dB.
    pub f0: f64,
    pub hm_min: f64,
    pub hm_max: f64,
    /// Taylor order of the balancing function used by the auto-tuned policy.
    pub order: u8,
    pub hysteresis: f64,
    /// Cells closer than this (meters) are neighbours.
    pub neighbor_radius: f64,
    /// EMA weight of the newest load sample per snapshot.
    pub load_smoothing_alpha: f64,
    /// Snapshots between handover evaluations.
    pub handover_interval: u32,
    /// Snapshots between margin updates.
    pub margin_update_interval: u32,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            f0: 6.0,
            hm_min: 0.0,
            hm_max: 12.0,
            order: 1,
            hysteresis: 0.0,
            neighbor_radius: 2200.0,
            // 60 s time constant at 1 s snapshots.
            load_smoothing_alpha: 1.0 - (-1.0f64 / 60.0).exp(),
            handover_interval: 1,
            margin_update_interval: 1,
        }
    }
}

/// Complete, validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub rng_seed: u64,
    /// Seconds per snapshot.
    pub snapshot_duration: f64,
    /// Seconds of simulated time, warm-up included.
    pub sim_duration: f64,
    /// Leading fraction of `sim_duration` excluded from metrics.
    pub warmup_fraction: f64,
    pub radio: RadioParams,
    pub propagation: PropagationParams,
    pub link: LinkCurve,
    pub traffic: TrafficSpec,
    pub policy: PolicySpec,
    pub sites: Vec<SiteSpec>,
}

/// Inter-site distance of the shipped reference layout, meters.
pub const REFERENCE_INTER_SITE_DISTANCE: f64 = 1000.0;

impl Scenario {
    /// The 45-cell reference network.
    ///
    /// The hotspot is a contiguous 15-cell cluster spanning the middle of
    /// the network, with three times the arrival intensity of other cells.
    pub fn reference() -> Self {
        let layout = HexLayout::default();
        let sites = layout.generate(45, 120.0, 2008);
        let hotspot_weights = sites
            .iter()
            .map(|s| if reference_hotspot(s.id) { 3.0 } else { 1.0 })
            .collect();
        Self {
            rng_seed: 1,
            snapshot_duration: 1.0,
            sim_duration: 1800.0,
            warmup_fraction: 0.1,
            radio: RadioParams::default(),
            propagation: PropagationParams::default(),
            link: LinkCurve::default(),
            traffic: TrafficSpec {
                arrival_rate: 4.0,
                hotspot_weights,
                file_size: 5.0e6,
                user_speed: 15.0,
                placement_radius: REFERENCE_INTER_SITE_DISTANCE / 3f64.sqrt(),
                turn_sigma: 0.3,
            },
            policy: PolicySpec::default(),
            sites,
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation("scenario", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.snapshot_duration > 0.0 && self.snapshot_duration.is_finite()) {
            return Err(Error::validation("snapshot_duration", "must be > 0"));
        }
        if !(self.sim_duration >= self.snapshot_duration) || !self.sim_duration.is_finite() {
            return Err(Error::validation(
                "sim_duration",
                "must be finite and >= snapshot_duration",
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::validation("warmup_fraction", "must be in [0, 1)"));
        }
        if self.sites.is_empty() {
            return Err(Error::validation("sites", "at least one site is required"));
        }

        let r = &self.radio;
        if r.reuse_factor < 1 {
            return Err(Error::validation("radio.reuse_factor", "must be >= 1"));
        }
        if r.subcarriers_per_prb < 1 {
            return Err(Error::validation("radio.subcarriers_per_prb", "must be >= 1"));
        }
        if !(r.subcarrier_bandwidth > 0.0) {
            return Err(Error::validation("radio.subcarrier_bandwidth", "must be > 0"));
        }
        if !r.thermal_noise_per_subcarrier.is_finite() {
            return Err(Error::validation(
                "radio.thermal_noise_per_subcarrier",
                "must be finite",
            ));
        }
        if r.min_prb_per_user < 1 {
            return Err(Error::validation("radio.min_prb_per_user", "must be >= 1"));
        }
        if r.max_prb_per_user < r.min_prb_per_user {
            return Err(Error::validation(
                "radio.max_prb_per_user",
                format!(
                    "{} is below min_prb_per_user {}",
                    r.max_prb_per_user, r.min_prb_per_user
                ),
            ));
        }

        for (i, site) in self.sites.iter().enumerate() {
            if site.id != i {
                return Err(Error::validation(
                    format!("sites[{i}].id"),
                    format!("expected {i}, ids must be 0..n in order"),
                ));
            }
            if !site.position.is_finite() {
                return Err(Error::validation(
                    format!("sites[{i}].position"),
                    "must be finite",
                ));
            }
            if site.prb_capacity < 1 {
                return Err(Error::validation(
                    format!("sites[{i}].prb_capacity"),
                    "must be >= 1",
                ));
            }
            if site.band_index >= r.reuse_factor {
                return Err(Error::validation(
                    format!("sites[{i}].band_index"),
                    format!("{} is not below reuse_factor {}", site.band_index, r.reuse_factor),
                ));
            }
            if r.max_prb_per_user > site.prb_capacity {
                return Err(Error::validation(
                    "radio.max_prb_per_user",
                    format!("exceeds prb_capacity {} of site {i}", site.prb_capacity),
                ));
            }
            if !(site.tx_power_per_subcarrier.is_finite() && site.antenna_gain.is_finite()) {
                return Err(Error::validation(
                    format!("sites[{i}]"),
                    "power and gain must be finite",
                ));
            }
        }

        self.propagation.validate()?;
        self.link.validate()?;

        let t = &self.traffic;
        if !(t.arrival_rate >= 0.0 && t.arrival_rate.is_finite()) {
            return Err(Error::validation("traffic.arrival_rate", "must be >= 0"));
        }
        if t.hotspot_weights.len() != self.sites.len() {
            return Err(Error::validation(
                "traffic.hotspot_weights",
                format!(
                    "has {} entries for {} sites",
                    t.hotspot_weights.len(),
                    self.sites.len()
                ),
            ));
        }
        if t.hotspot_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || !t.hotspot_weights.iter().any(|w| *w > 0.0)
        {
            return Err(Error::validation(
                "traffic.hotspot_weights",
                "must be nonnegative with at least one positive entry",
            ));
        }
        if !(t.file_size > 0.0 && t.file_size.is_finite()) {
            return Err(Error::validation("traffic.file_size", "must be > 0"));
        }
        if !(t.user_speed >= 0.0 && t.user_speed.is_finite()) {
            return Err(Error::validation("traffic.user_speed", "must be >= 0"));
        }
        if !(t.placement_radius >= 0.0 && t.placement_radius.is_finite()) {
            return Err(Error::validation("traffic.placement_radius", "must be >= 0"));
        }
        if !(t.turn_sigma >= 0.0 && t.turn_sigma.is_finite()) {
            return Err(Error::validation("traffic.turn_sigma", "must be >= 0"));
        }

        let p = &self.policy;
        if !(p.hm_min <= p.f0 && p.f0 <= p.hm_max) {
            return Err(Error::validation("policy.f0", "must lie in [hm_min, hm_max]"));
        }
        if p.order > 1 {
            return Err(Error::validation("policy.order", "only orders 0 and 1 exist"));
        }
        if !(p.hysteresis >= 0.0 && p.hysteresis.is_finite()) {
            return Err(Error::validation("policy.hysteresis", "must be >= 0"));
        }
        if !(p.neighbor_radius >= 0.0) {
            return Err(Error::validation("policy.neighbor_radius", "must be >= 0"));
        }
        if !(p.load_smoothing_alpha > 0.0 && p.load_smoothing_alpha <= 1.0) {
            return Err(Error::validation(
                "policy.load_smoothing_alpha",
                "must be in (0, 1]",
            ));
        }
        if p.handover_interval < 1 || p.margin_update_interval < 1 {
            return Err(Error::validation(
                "policy",
                "handover_interval and margin_update_interval must be >= 1",
            ));
        }
        Ok(())
    }

    /// Axis-aligned box users live in: site extent grown by the placement
    /// radius. Returns `(min, max)` corners.
    pub fn bounds(&self) -> (Point, Point) {
        let pad = self.traffic.placement_radius;
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in &self.sites {
            lo.x = lo.x.min(s.position.x);
            lo.y = lo.y.min(s.position.y);
            hi.x = hi.x.max(s.position.x);
            hi.y = hi.y.max(s.position.y);
        }
        (
            Point::new(lo.x - pad, lo.y - pad),
            Point::new(hi.x + pad, hi.y + pad),
        )
    }
}

/// Rows 2 and 3 of the 9x5 reference grid, minus the three right-most
/// cells of row 3: a 15-cell band across the network.
fn reference_hotspot(id: CellId) -> bool {
    let (row, col) = (id / 9, id % 9);
    row == 2 || (row == 3 && col < 6)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_toml_str(&text, path)
}

/// Hexagonal lattice generator. Rows are offset by half a spacing; the
/// column count is a multiple of three so every full row holds each band
/// equally often.
#[derive(Debug, Clone, PartialEq)]
pub struct HexLayout {
    pub inter_site_distance: f64,
    pub reuse_factor: u32,
    pub prb_capacity: u32,
    pub tx_power_per_subcarrier: f64,
    pub antenna_gain: f64,
}

impl Default for HexLayout {
    fn default() -> Self {
        Self {
            inter_site_distance: REFERENCE_INTER_SITE_DISTANCE,
            reuse_factor: 3,
            prb_capacity: 25,
            // 43 dBm spread over 300 subcarriers.
            tx_power_per_subcarrier: 18.2,
            antenna_gain: 14.0,
        }
    }
}

impl HexLayout {
    pub fn columns(n_sites: usize) -> usize {
        let side = (n_sites as f64).sqrt().ceil() as usize;
        side.div_ceil(3).max(1) * 3
    }

    /// Unperturbed lattice position and band of the `index`-th site.
    pub fn lattice_site(&self, index: usize, columns: usize) -> (Point, u32) {
        let row = (index / columns) as i64;
        let col = (index % columns) as i64;
        let odd = row & 1;
        let x = self.inter_site_distance * (col as f64 + 0.5 * odd as f64);
        let y = self.inter_site_distance * row as f64 * 3f64.sqrt() / 2.0;
        // Axial coordinates of an odd-row offset grid; q - r mod 3 is a
        // proper colouring of the triangular adjacency graph.
        let q = col - (row - odd) / 2;
        let band = (q - row).rem_euclid(3) as u32 % self.reuse_factor.max(1);
        (Point::new(x, y), band)
    }

    pub fn generate(&self, n_sites: usize, jitter: f64, seed: u64) -> Vec<SiteSpec> {
        let columns = Self::columns(n_sites);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_sites)
            .map(|id| {
                let (mut position, band_index) = self.lattice_site(id, columns);
                if jitter > 0.0 {
                    position.x += rng.random_range(-jitter..=jitter);
                    position.y += rng.random_range(-jitter..=jitter);
                }
                SiteSpec {
                    id,
                    position,
                    band_index,
                    prb_capacity: self.prb_capacity,
                    tx_power_per_subcarrier: self.tx_power_per_subcarrier,
                    antenna_gain: self.antenna_gain,
                }
            })
            .collect()
    }
}

/// Jittered hex lattice with the reference radio constants.
pub fn generate_layout(n_sites: usize, jitter: f64, seed: u64) -> Vec<SiteSpec> {
    HexLayout::default().generate(n_sites, jitter, seed)
}

/// Co-channel indicator between cells. The diagonal is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMatrix {
    n: usize,
    entries: Vec<bool>,
    co_channel: Vec<Vec<CellId>>,
}

impl InterferenceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: CellId, j: CellId) -> u8 {
        self.entries[i * self.n + j] as u8
    }

    /// Cells sharing `cell`'s band, excluding `cell` itself.
    pub fn co_channel(&self, cell: CellId) -> &[CellId] {
        &self.co_channel[cell]
    }
}

pub fn build_interference_matrix(sites: &[SiteSpec]) -> InterferenceMatrix {
    let n = sites.len();
    let mut entries = vec![false; n * n];
    let mut co_channel = vec![Vec::new(); n];
    for (i, a) in sites.iter().enumerate() {
        for (j, b) in sites.iter().enumerate() {
            if i != j && a.band_index == b.band_index {
                entries[i * n + j] = true;
                co_channel[i].push(j);
            }
        }
    }
    InterferenceMatrix {
        n,
        entries,
        co_channel,
    }
}

/// Writes `id,x,y,band_index,prb_capacity` rows with a header.
pub fn write_layout_csv<W: Write>(sites: &[SiteSpec], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "x", "y", "band_index", "prb_capacity"])?;
    for s in sites {
        w.write_record([
            s.id.to_string(),
            s.position.x.to_string(),
            s.position.y.to_string(),
            s.band_index.to_string(),
            s.prb_capacity.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<layout csv>", e))?;
    Ok(())
}
