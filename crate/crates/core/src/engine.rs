//! Correlated-snapshot simulation loop.
//!
//! Each snapshot runs, in order: clock advance, user movement, Poisson
//! arrivals with admission control, handover evaluation, PRB reallocation,
//! data transfer, departures and drops, load smoothing, margin update and
//! metric recording.
//!
//! Randomness is split into independent streams (arrival counts, arrival
//! placement, and per-user shadowing and mobility keyed by user id) so that
//! two runs differing only in policy see exactly the same offered traffic.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{default_quantiles, MetricsAccumulator, MetricsReport};
use crate::mobility::{
    admit, evaluate_handover, update_margins, Adjacency, BalancingFunction, CacDecision,
    HandoverDecision, HandoverMarginMatrix, TaylorOrder,
};
use crate::propagation::{dbm_to_watts, linear_to_db, ShadowingField};
use crate::radio::{
    reallocate_prbs, sinr_from_powers, throughput_per_prb, user_throughput, LoadVector,
    RadioEnvironment,
};
use crate::scenario::{build_interference_matrix, CellId, InterferenceMatrix, Point, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "auto")]
    AutoTuned,
    #[serde(rename = "fixed")]
    FixedMargin,
}

impl Policy {
    pub const ALL: [Policy; 2] = [Policy::AutoTuned, Policy::FixedMargin];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::AutoTuned => "auto",
            Policy::FixedMargin => "fixed",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Policy::AutoTuned),
            "fixed" => Ok(Policy::FixedMargin),
            other => Err(format!("unknown policy `{other}` (expected auto or fixed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub policy: Policy,
    /// Keep the CSV event log in memory (the hash is always computed).
    pub record_events: bool,
}

impl RunOptions {
    pub fn new(policy: Policy) -> Self {
        Self {
            policy,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Admit,
    BlockCoverage,
    BlockResource,
    Handover,
    /// Handover forced by loss of the serving signal.
    Rescue,
    Complete,
    Drop,
}

impl EventKind {
    fn as_str(&self) -> &'static str {
        match self {
            EventKind::Admit => "admit",
            EventKind::BlockCoverage => "block_coverage",
            EventKind::BlockResource => "block_resource",
            EventKind::Handover => "handover",
            EventKind::Rescue => "rescue",
            EventKind::Complete => "complete",
            EventKind::Drop => "drop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub user: u64,
    pub from: Option<CellId>,
    pub to: Option<CellId>,
}

impl Event {
    /// `time,event,user,from,to` with empty fields for absent cells.
    pub fn csv_line(&self) -> String {
        let cell = |c: Option<CellId>| c.map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{:.3},{},{},{},{}",
            self.time,
            self.kind.as_str(),
            self.user,
            cell(self.from),
            cell(self.to)
        )
    }
}

pub const EVENT_LOG_HEADER: &str = "time,event,user,from,to";

#[derive(Debug, Clone)]
pub struct UserSession {
    pub id: u64,
    pub position: Point,
    /// Direction of travel, radians.
    pub heading: f64,
    pub serving: CellId,
    pub allocated_prbs: u32,
    pub remaining_bytes: f64,
    pub admitted_at: f64,
    /// Shadowing towards each site, dB.
    pub shadow_db: Vec<f64>,
    /// Admitted after warm-up; only these count towards session KPIs.
    pub measured: bool,
    rng: ChaCha8Rng,
    rx_dbm: Vec<f64>,
    rx_watts: Vec<f64>,
}

impl UserSession {
    pub fn received_dbm(&self) -> &[f64] {
        &self.rx_dbm
    }
}

/// Random walk with a Gaussian heading perturbation, reflected at `bounds`.
pub fn move_user(
    position: Point,
    heading: f64,
    speed: f64,
    turn_sigma: f64,
    dt: f64,
    bounds: (Point, Point),
    rng: &mut impl Rng,
) -> (Point, f64) {
    let turn: f64 = rng.sample(rand_distr::StandardNormal);
    let mut heading = heading + turn * turn_sigma * dt.sqrt();
    let step = speed * dt;
    let mut x = position.x + step * heading.cos();
    let mut y = position.y + step * heading.sin();
    let (lo, hi) = bounds;
    let (rx, flip_x) = reflect(x, lo.x, hi.x);
    let (ry, flip_y) = reflect(y, lo.y, hi.y);
    x = rx;
    y = ry;
    if flip_x {
        heading = PI - heading;
    }
    if flip_y {
        heading = -heading;
    }
    (Point::new(x, y), heading.rem_euclid(2.0 * PI))
}

/// Folds `v` into `[lo, hi]`; the flag reports an odd number of bounces.
fn reflect(v: f64, lo: f64, hi: f64) -> (f64, bool) {
    let width = hi - lo;
    if width <= 0.0 {
        return (lo, false);
    }
    if (lo..=hi).contains(&v) {
        return (v, false);
    }
    let period = 2.0 * width;
    let t = (v - lo).rem_euclid(period);
    if t <= width {
        (lo + t, false)
    } else {
        (hi - (t - width), true)
    }
}

/// Whole-run bookkeeping, warm-up included; feeds the conservation check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Totals {
    pub arrivals: u64,
    pub completed: u64,
    pub blocked_coverage: u64,
    pub blocked_resource: u64,
    pub dropped: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Arrivals = 1,
    Placement = 2,
    Shadowing = 3,
    Mobility = 4,
}

fn stream_seed(seed: u64, stream: Stream) -> u64 {
    splitmix(seed ^ splitmix(stream as u64))
}

/// Full state of one simulation run.
pub struct Simulation<'s> {
    scenario: &'s Scenario,
    policy: Policy,
    balancing: BalancingFunction,
    matrix: InterferenceMatrix,
    adjacency: Adjacency,
    noise_watts: f64,
    bounds: (Point, Point),

    step_index: u64,
    n_steps: u64,
    clock: f64,
    warmup_end: f64,

    /// Active sessions in ascending id order.
    users: Vec<UserSession>,
    next_user_id: u64,
    cell_users: Vec<u32>,
    /// PRB book per cell; must equal the sum over its sessions.
    cell_allocated: Vec<u32>,
    loads: LoadVector,
    margins: HandoverMarginMatrix,

    arrival_rng: ChaCha8Rng,
    placement_rng: ChaCha8Rng,
    placement: Option<WeightedIndex<f64>>,
    shadowing: ShadowingField,
    mobility_seed: u64,

    totals: Totals,
    metrics: MetricsAccumulator,
    events: Option<Vec<Event>>,
    hasher: Sha256,
}

impl<'s> Simulation<'s> {
    pub fn new(scenario: &'s Scenario, options: RunOptions) -> Result<Self> {
        scenario.validate()?;
        let policy_spec = &scenario.policy;
        let order = match options.policy {
            Policy::AutoTuned => TaylorOrder::try_from(policy_spec.order)?,
            Policy::FixedMargin => TaylorOrder::Zero,
        };
        let balancing =
            BalancingFunction::new(policy_spec.f0, policy_spec.hm_min, policy_spec.hm_max, order)?;
        let n = scenario.sites.len();
        let seed = scenario.rng_seed;
        let n_steps = (scenario.sim_duration / scenario.snapshot_duration).round().max(1.0) as u64;
        let placement = WeightedIndex::new(scenario.traffic.hotspot_weights.iter().copied()).ok();

        let mut arrival_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, Stream::Arrivals));
        arrival_rng.set_stream(Stream::Arrivals as u64);
        let mut placement_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, Stream::Placement));
        placement_rng.set_stream(Stream::Placement as u64);

        Ok(Self {
            scenario,
            policy: options.policy,
            balancing,
            matrix: build_interference_matrix(&scenario.sites),
            adjacency: Adjacency::within_radius(&scenario.sites, policy_spec.neighbor_radius),
            noise_watts: dbm_to_watts(scenario.radio.thermal_noise_per_subcarrier),
            bounds: scenario.bounds(),
            step_index: 0,
            n_steps,
            clock: 0.0,
            warmup_end: scenario.warmup_fraction * n_steps as f64 * scenario.snapshot_duration,
            users: Vec::new(),
            next_user_id: 0,
            cell_users: vec![0; n],
            cell_allocated: vec![0; n],
            loads: LoadVector::zeros(n),
            margins: HandoverMarginMatrix::uniform(n, policy_spec.f0, policy_spec.hysteresis),
            arrival_rng,
            placement_rng,
            placement,
            shadowing: ShadowingField::new(
                scenario.propagation.shadowing_sigma_db,
                stream_seed(seed, Stream::Shadowing),
            ),
            mobility_seed: stream_seed(seed, Stream::Mobility),
            totals: Totals::default(),
            metrics: MetricsAccumulator::new(n),
            events: options.record_events.then(Vec::new),
            hasher: Sha256::new(),
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_finished(&self) -> bool {
        self.step_index >= self.n_steps
    }

    pub fn users(&self) -> &[UserSession] {
        &self.users
    }

    pub fn loads(&self) -> &LoadVector {
        &self.loads
    }

    pub fn margins(&self) -> &HandoverMarginMatrix {
        &self.margins
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn balancing(&self) -> &BalancingFunction {
        &self.balancing
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    pub fn cell_allocated(&self) -> &[u32] {
        &self.cell_allocated
    }

    pub fn events(&self) -> Option<&[Event]> {
        self.events.as_deref()
    }

    /// Hex SHA-256 over the event log lines emitted so far.
    pub fn event_hash(&self) -> String {
        let digest = self.hasher.clone().finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn environment(&self) -> RadioEnvironment<'_> {
        RadioEnvironment {
            sites: &self.scenario.sites,
            matrix: &self.matrix,
            propagation: &self.scenario.propagation,
            noise_watts: self.noise_watts,
        }
    }

    fn log(&mut self, kind: EventKind, user: u64, from: Option<CellId>, to: Option<CellId>) {
        let event = Event {
            time: self.clock,
            kind,
            user,
            from,
            to,
        };
        let mut line = event.csv_line();
        line.push('\n');
        self.hasher.update(line.as_bytes());
        if let Some(events) = &mut self.events {
            events.push(event);
        }
    }

    /// Unallocated PRBs of cell `k`.
    fn available(&self, k: CellId) -> u32 {
        self.scenario.sites[k].prb_capacity.saturating_sub(self.cell_allocated[k])
    }

    fn available_all(&self) -> Vec<u32> {
        (0..self.cell_users.len()).map(|k| self.available(k)).collect()
    }

    fn refresh_radio(&self, user: &mut UserSession) {
        let n = self.scenario.sites.len();
        user.rx_dbm.resize(n, 0.0);
        user.rx_watts.resize(n, 0.0);
        self.environment()
            .received_dbm_into(user.position, &user.shadow_db, &mut user.rx_dbm);
    }

    /// Recomputes the allocation of every session in `cell`.
    fn reallocate_cell(&mut self, cell: CellId) -> Result<()> {
        let scenario = self.scenario;
        let radio = &scenario.radio;
        let members: Vec<usize> = self
            .users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.serving == cell)
            .map(|(i, _)| i)
            .collect();
        let alloc = reallocate_prbs(
            cell,
            members.len(),
            scenario.sites[cell].prb_capacity,
            radio.min_prb_per_user,
            radio.max_prb_per_user,
        )?;
        for (&i, a) in members.iter().zip(&alloc) {
            self.users[i].allocated_prbs = *a;
        }
        self.cell_allocated[cell] = alloc.iter().sum();
        Ok(())
    }

    fn reallocate_all(&mut self) -> Result<()> {
        let scenario = self.scenario;
        let radio = &scenario.radio;
        let n = self.cell_users.len();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, u) in self.users.iter().enumerate() {
            members[u.serving].push(i);
        }
        for (cell, idx) in members.iter().enumerate() {
            let alloc = reallocate_prbs(
                cell,
                idx.len(),
                scenario.sites[cell].prb_capacity,
                radio.min_prb_per_user,
                radio.max_prb_per_user,
            )?;
            for (&i, a) in idx.iter().zip(&alloc) {
                self.users[i].allocated_prbs = *a;
            }
            self.cell_allocated[cell] = alloc.iter().sum();
        }
        Ok(())
    }

    fn hand_over(&mut self, idx: usize, target: CellId, kind: EventKind) -> Result<()> {
        let from = self.users[idx].serving;
        self.cell_users[from] -= 1;
        self.cell_users[target] += 1;
        self.cell_allocated[from] -= self.users[idx].allocated_prbs;
        self.users[idx].allocated_prbs = 0;
        self.users[idx].serving = target;
        self.reallocate_cell(from)?;
        self.reallocate_cell(target)?;
        if self.recording() {
            self.metrics.handovers += 1;
        }
        let id = self.users[idx].id;
        self.log(kind, id, Some(from), Some(target));
        Ok(())
    }

    fn recording(&self) -> bool {
        self.clock - self.scenario.snapshot_duration >= self.warmup_end - 1e-9
    }

    fn spawn_position(&mut self) -> Point {
        let sites = &self.scenario.sites;
        let site = match &self.placement {
            Some(w) => w.sample(&mut self.placement_rng),
            None => 0,
        };
        let radius = self.scenario.traffic.placement_radius;
        let r = radius * self.placement_rng.random::<f64>().sqrt();
        let theta = 2.0 * PI * self.placement_rng.random::<f64>();
        let (lo, hi) = self.bounds;
        let p = sites[site].position;
        Point::new(
            reflect(p.x + r * theta.cos(), lo.x, hi.x).0,
            reflect(p.y + r * theta.sin(), lo.y, hi.y).0,
        )
    }

    fn arrivals(&mut self) -> Result<()> {
        let dt = self.scenario.snapshot_duration;
        let mean = self.scenario.traffic.arrival_rate * dt;
        let count = if mean > 0.0 {
            Poisson::new(mean)
                .expect("finite positive mean")
                .sample(&mut self.arrival_rng) as u64
        } else {
            0
        };
        let recording = self.recording();
        let n_sites = self.scenario.sites.len();
        for _ in 0..count {
            let id = self.next_user_id;
            self.next_user_id += 1;
            let position = self.spawn_position();
            let mut rng = ChaCha8Rng::seed_from_u64(self.mobility_seed);
            rng.set_stream(id);
            let heading = 2.0 * PI * rng.random::<f64>();
            let mut user = UserSession {
                id,
                position,
                heading,
                serving: 0,
                allocated_prbs: 0,
                remaining_bytes: self.scenario.traffic.file_size,
                admitted_at: self.clock - dt,
                shadow_db: self.shadowing.draw_for_user(id, n_sites),
                measured: recording,
                rng,
                rx_dbm: Vec::new(),
                rx_watts: Vec::new(),
            };
            self.refresh_radio(&mut user);

            self.totals.arrivals += 1;
            if recording {
                self.metrics.attempts += 1;
            }
            let decision = admit(&user.rx_dbm, &self.available_all(), &self.scenario.radio);
            match decision {
                CacDecision::Admitted { cell, granted_prbs } => {
                    debug_assert!(granted_prbs >= self.scenario.radio.min_prb_per_user);
                    if recording {
                        self.metrics.admitted += 1;
                    }
                    user.serving = cell;
                    self.cell_users[cell] += 1;
                    self.users.push(user);
                    self.reallocate_cell(cell)?;
                    self.log(EventKind::Admit, id, None, Some(cell));
                }
                CacDecision::BlockedCoverage { best_cell, .. } => {
                    self.totals.blocked_coverage += 1;
                    if recording {
                        self.metrics.blocked_coverage += 1;
                    }
                    self.log(EventKind::BlockCoverage, id, None, Some(best_cell));
                }
                CacDecision::BlockedResource { cell } => {
                    self.totals.blocked_resource += 1;
                    if recording {
                        self.metrics.blocked_resource += 1;
                    }
                    self.log(EventKind::BlockResource, id, None, Some(cell));
                }
            }
        }
        Ok(())
    }

    fn handovers(&mut self) -> Result<()> {
        let mut available = self.available_all();
        for idx in 0..self.users.len() {
            let user = &self.users[idx];
            let decision = evaluate_handover(
                &user.rx_dbm,
                user.serving,
                self.adjacency.neighbors(user.serving),
                &self.margins,
                &available,
                &self.scenario.radio,
            );
            if let HandoverDecision::MoveTo { target, .. } = decision {
                let from = user.serving;
                self.hand_over(idx, target, EventKind::Handover)?;
                available[from] = self.available(from);
                available[target] = self.available(target);
            }
        }
        Ok(())
    }

    /// Strongest neighbour that can take the user, margin ignored.
    fn rescue_target(&self, idx: usize) -> Option<CellId> {
        let user = &self.users[idx];
        let radio = &self.scenario.radio;
        let mut best: Option<CellId> = None;
        for &k in self.adjacency.neighbors(user.serving) {
            if user.rx_dbm[k] >= radio.ho_signal_threshold
                && self.available(k) >= radio.min_prb_per_user
                && best.is_none_or(|b| user.rx_dbm[k] > user.rx_dbm[b])
            {
                best = Some(k);
            }
        }
        best
    }

    /// Removes flagged sessions and reallocates the cells they left.
    fn retire(&mut self, leaving: &[bool]) -> Result<()> {
        if !leaving.contains(&true) {
            return Ok(());
        }
        let mut touched = vec![false; self.cell_users.len()];
        let mut keep = leaving.iter().map(|l| !l);
        self.users.retain(|u| {
            let stay = keep.next().unwrap_or(true);
            if !stay {
                touched[u.serving] = true;
            }
            stay
        });
        for cell in (0..touched.len()).filter(|&c| touched[c]) {
            self.reallocate_cell(cell)?;
        }
        Ok(())
    }

    /// Advances the simulation by one snapshot.
    pub fn step(&mut self) -> Result<()> {
        let scenario = self.scenario;
        let dt = scenario.snapshot_duration;
        let traffic = &scenario.traffic;
        let (speed, turn_sigma) = (traffic.user_speed, traffic.turn_sigma);

        self.step_index += 1;
        self.clock = self.step_index as f64 * dt;
        let recording = self.recording();
        let interval_start = self.clock - dt;

        // Movement.
        let bounds = self.bounds;
        let mut users = std::mem::take(&mut self.users);
        for u in &mut users {
            let (p, h) = move_user(u.position, u.heading, speed, turn_sigma, dt, bounds, &mut u.rng);
            u.position = p;
            u.heading = h;
            self.refresh_radio(u);
        }
        self.users = users;

        self.arrivals()?;

        if self.step_index.is_multiple_of(self.scenario.policy.handover_interval as u64) {
            self.handovers()?;
        }

        self.reallocate_all()?;

        // Transfer over the snapshot, with SINR against committed loads.
        let curve = &scenario.link;
        let n_cells = self.cell_users.len();
        let occupancy: Vec<f64> = (0..n_cells)
            .map(|k| self.cell_allocated[k] as f64 / self.scenario.sites[k].prb_capacity as f64)
            .collect();
        let mut finished = Vec::new();
        for (idx, u) in self.users.iter_mut().enumerate() {
            // Only the serving and co-channel entries are read.
            for &k in std::iter::once(&u.serving).chain(self.matrix.co_channel(u.serving)) {
                u.rx_watts[k] = dbm_to_watts(u.rx_dbm[k]);
            }
            let sinr = sinr_from_powers(
                &u.rx_watts,
                u.serving,
                &self.matrix,
                &self.loads,
                self.noise_watts,
            );
            if recording {
                self.metrics.sinr_samples_db.push(linear_to_db(sinr));
            }
            let rate = user_throughput(u.allocated_prbs, throughput_per_prb(sinr, curve));
            let bytes = rate * dt / 8.0;
            if bytes >= u.remaining_bytes && rate > 0.0 {
                let done_at = interval_start + u.remaining_bytes * 8.0 / rate;
                u.remaining_bytes = 0.0;
                finished.push((idx, done_at));
            } else {
                u.remaining_bytes -= bytes;
            }
        }

        // Departures, then coverage loss.
        let mut leaving = vec![false; self.users.len()];
        for &(idx, done_at) in &finished {
            leaving[idx] = true;
            self.totals.completed += 1;
            let u = &self.users[idx];
            if u.measured {
                self.metrics.completed += 1;
                self.metrics
                    .throughput_samples
                    .push(traffic.file_size / (done_at - u.admitted_at));
            }
            let (id, cell) = (u.id, u.serving);
            self.log(EventKind::Complete, id, Some(cell), None);
        }
        for &(idx, _) in &finished {
            let cell = self.users[idx].serving;
            self.cell_users[cell] -= 1;
        }
        // Finished sessions must be gone before any rescue handover
        // reallocates a cell they were counted in.
        self.retire(&leaving)?;

        let threshold = self.scenario.radio.cac_signal_threshold;
        let mut idx = 0;
        while idx < self.users.len() {
            let serving = self.users[idx].serving;
            if self.users[idx].rx_dbm[serving] >= threshold {
                idx += 1;
                continue;
            }
            if let Some(target) = self.rescue_target(idx) {
                self.hand_over(idx, target, EventKind::Rescue)?;
                idx += 1;
            } else {
                let user = self.users.remove(idx);
                self.totals.dropped += 1;
                self.cell_users[serving] -= 1;
                if user.measured {
                    self.metrics.dropped += 1;
                }
                self.log(EventKind::Drop, user.id, Some(serving), None);
                self.reallocate_cell(serving)?;
            }
        }

        let alpha = self.scenario.policy.load_smoothing_alpha;
        for (cell, &occ) in occupancy.iter().enumerate() {
            self.loads.update(cell, occ, alpha);
        }

        if self.step_index.is_multiple_of(self.scenario.policy.margin_update_interval as u64) {
            update_margins(&mut self.margins, &self.loads, &self.balancing, &self.adjacency)?;
        }

        if recording {
            for (cell, series) in self.metrics.load_series.iter_mut().enumerate() {
                series.push(self.loads.get(cell));
            }
            if let Some(dev) = self
                .margins
                .mean_abs_deviation(self.balancing.f0(), &self.adjacency)
            {
                self.metrics.hm_deviation_series.push(dev);
            }
        }

        self.check_invariants()
    }

    /// Conservation of sessions and of the PRB books.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Consistency {
                time: self.clock,
                message,
            })
        };
        let t = self.totals;
        let accounted = self.users.len() as u64
            + t.completed
            + t.blocked_coverage
            + t.blocked_resource
            + t.dropped;
        if t.arrivals != accounted {
            return fail(format!(
                "{} arrivals but {} active + {} completed + {} blocked (coverage) + {} blocked (resource) + {} dropped",
                t.arrivals,
                self.users.len(),
                t.completed,
                t.blocked_coverage,
                t.blocked_resource,
                t.dropped
            ));
        }
        let n = self.cell_users.len();
        let mut counts = vec![0u32; n];
        let mut prbs = vec![0u32; n];
        let radio = &self.scenario.radio;
        for u in &self.users {
            counts[u.serving] += 1;
            prbs[u.serving] += u.allocated_prbs;
            if u.allocated_prbs < radio.min_prb_per_user || u.allocated_prbs > radio.max_prb_per_user {
                return fail(format!(
                    "user {} in cell {} holds {} PRBs",
                    u.id, u.serving, u.allocated_prbs
                ));
            }
            if !(u.remaining_bytes > 0.0) {
                return fail(format!("user {} is active with nothing to download", u.id));
            }
        }
        for cell in 0..n {
            let capacity = self.scenario.sites[cell].prb_capacity;
            if counts[cell] != self.cell_users[cell] {
                return fail(format!(
                    "cell {cell}: {} sessions but user count book says {}",
                    counts[cell], self.cell_users[cell]
                ));
            }
            if prbs[cell] != self.cell_allocated[cell] || prbs[cell] > capacity {
                return fail(format!(
                    "cell {cell}: sessions hold {} PRBs, book says {}, capacity {capacity}",
                    prbs[cell], self.cell_allocated[cell]
                ));
            }
            if !(0.0..=1.0).contains(&self.loads.get(cell)) {
                return fail(format!("cell {cell}: load {} outside [0, 1]", self.loads.get(cell)));
            }
        }
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        self.metrics.report(&default_quantiles())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub event_hash: String,
    pub events: Option<Vec<Event>>,
}

pub fn run_with(scenario: &Scenario, options: RunOptions) -> Result<RunOutcome> {
    let mut sim = Simulation::new(scenario, options)?;
    sim.run_to_end()?;
    Ok(RunOutcome {
        report: sim.report(),
        event_hash: sim.event_hash(),
        events: sim.events.take(),
    })
}

pub fn run(scenario: &Scenario, policy: Policy) -> Result<MetricsReport> {
    run_with(scenario, RunOptions::new(policy)).map(|o| o.report)
}
