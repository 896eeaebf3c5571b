//! Scenario description, UE placement and mobility, and the time-stepped loop
//! that drives reports through a policy and the handover engine.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{FixedA3Policy, FixedPolicyParams, GreedyRsrpPolicy};
use crate::engine::{
    complete_handover, on_measurement_report, EngineConfig, EngineError, HandoverContext,
    HandoverOutcome, HandoverPolicy, HandoverResult,
};
use crate::kfe::KalmanParams;
use crate::lim2::Lim2Policy;
use crate::metrics::{KpiAccumulator, KpiRecord, PendingTraffic, TrafficParams};
use crate::radio_env::{
    generate_report, noise_power_dbm, rssi_from_powers, sinr_from_powers, step_env_noise,
    true_rsrp, CellId, CellSite, ChannelParams, Point, RadioError, ReportConfig, ShadowingTrack, UeId, UeRadio,
};
use crate::rlho::{LearningError, LearningParams, QTable};
use crate::rng::{substream, Stream};

/// Mobility speeds of the standard sweep (km/h).
pub const STANDARD_SPEEDS_KMH: [f64; 7] = [50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> SimError {
    SimError::InvalidField {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Lim2,
    FixedA3,
    GreedyRsrp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Lim2, PolicyKind::FixedA3, PolicyKind::GreedyRsrp];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Lim2 => "lim2",
            PolicyKind::FixedA3 => "fixed_a3",
            PolicyKind::GreedyRsrp => "greedy_rsrp",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lim2" => Ok(PolicyKind::Lim2),
            "fixed_a3" => Ok(PolicyKind::FixedA3),
            "greedy_rsrp" => Ok(PolicyKind::GreedyRsrp),
            other => Err(format!("unknown policy `{other}` (expected lim2, fixed_a3 or greedy_rsrp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    /// Sites on a hexagonal grid, filled ring by ring from the origin.
    Hex,
    /// Sites along the x axis; UEs travel along the corridor.
    Line,
}

impl FromStr for LayoutKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hex" => Ok(LayoutKind::Hex),
            "line" => Ok(LayoutKind::Line),
            other => Err(format!("unknown layout `{other}` (expected hex or line)")),
        }
    }
}

impl LayoutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutKind::Hex => "hex",
            LayoutKind::Line => "line",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub kind: LayoutKind,
    pub sites: usize,
    pub cell_radius_m: f64,
    /// Width of the line corridor; ignored for hex grids.
    pub corridor_width_m: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            kind: LayoutKind::Hex,
            sites: 50,
            cell_radius_m: 150.0,
            corridor_width_m: 40.0,
        }
    }
}

impl Layout {
    /// Inter-site distance: √3·R on the hex grid, 2R along a line.
    pub fn inter_site_distance_m(&self) -> f64 {
        match self.kind {
            LayoutKind::Hex => 3f64.sqrt() * self.cell_radius_m,
            LayoutKind::Line => 2.0 * self.cell_radius_m,
        }
    }

    pub fn positions(&self) -> Vec<Point> {
        let isd = self.inter_site_distance_m();
        match self.kind {
            LayoutKind::Line => (0..self.sites).map(|i| Point::new(i as f64 * isd, 0.0)).collect(),
            LayoutKind::Hex => {
                // axial coordinates, ring by ring
                const DIRS: [(i64, i64); 6] = [(1, -1), (1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1)];
                let mut axial = vec![(0i64, 0i64)];
                let mut ring = 1i64;
                while axial.len() < self.sites {
                    // start at the ring's west corner and walk its six sides
                    let (mut q, mut r) = (-ring, 0);
                    for (dq, dr) in DIRS {
                        for _ in 0..ring {
                            axial.push((q, r));
                            q += dq;
                            r += dr;
                        }
                    }
                    ring += 1;
                }
                axial.truncate(self.sites);
                axial
                    .into_iter()
                    .map(|(q, r)| {
                        Point::new(isd * (q as f64 + r as f64 / 2.0), isd * (3f64.sqrt() / 2.0) * r as f64)
                    })
                    .collect()
            }
        }
    }
}

/// Rectangle UEs move in; they reflect off its edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }

    pub fn contains(&self, p: Point) -> bool {
        (self.min.x..=self.max.x).contains(&p.x) && (self.min.y..=self.max.y).contains(&p.y)
    }
}

/// Per-site radio defaults applied to every generated site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteDefaults {
    pub tx_power_dbm: f64,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
}

impl Default for SiteDefaults {
    fn default() -> Self {
        let s = CellSite::new(CellId(0), Point::new(0.0, 0.0));
        Self {
            tx_power_dbm: s.tx_power_dbm,
            carrier_freq_hz: s.carrier_freq_hz,
            bandwidth_hz: s.bandwidth_hz,
            noise_figure_db: s.noise_figure_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: f64,
    pub step_s: f64,
    pub report_period_s: f64,
    pub ue_speed_kmh: f64,
    /// Speeds swept by `sweep` when none are given explicitly.
    pub speeds_kmh: Vec<f64>,
    pub n_ues_per_cell: usize,
    pub policy: PolicyKind,
    pub layout: Layout,
    pub site: SiteDefaults,
    pub channel: ChannelParams,
    pub kalman: KalmanParams,
    pub learning: LearningParams,
    /// Cells whose learning agent never proposes a handover.
    pub disabled_agents: Vec<CellId>,
    pub engine: EngineConfig,
    pub report: ReportConfig,
    pub fixed: FixedPolicyParams,
    pub traffic: TrafficParams,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 2.0,
            step_s: 0.001,
            report_period_s: 0.04,
            ue_speed_kmh: 200.0,
            speeds_kmh: STANDARD_SPEEDS_KMH.to_vec(),
            n_ues_per_cell: 10,
            policy: PolicyKind::Lim2,
            layout: Layout::default(),
            site: SiteDefaults::default(),
            channel: ChannelParams::default(),
            kalman: KalmanParams::default(),
            learning: LearningParams::default(),
            disabled_agents: Vec::new(),
            engine: EngineConfig::default(),
            report: ReportConfig::default(),
            fixed: FixedPolicyParams::default(),
            traffic: TrafficParams::default(),
        }
    }
}

fn to_us(s: f64) -> i64 {
    (s * 1e6).round() as i64
}

fn positive(field: &str, v: f64) -> Result<(), SimError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), SimError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be >= 0, got {v}")))
    }
}

impl Scenario {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_speed(&self, ue_speed_kmh: f64) -> Self {
        Self {
            ue_speed_kmh,
            ..self.clone()
        }
    }

    pub fn with_policy(&self, policy: PolicyKind) -> Self {
        Self { policy, ..self.clone() }
    }

    pub fn sites(&self) -> Vec<CellSite> {
        self.layout
            .positions()
            .into_iter()
            .enumerate()
            .map(|(i, position)| CellSite {
                id: CellId(i as u32),
                position,
                tx_power_dbm: self.site.tx_power_dbm,
                carrier_freq_hz: self.site.carrier_freq_hz,
                bandwidth_hz: self.site.bandwidth_hz,
                noise_figure_db: self.site.noise_figure_db,
            })
            .collect()
    }

    /// Site bounding box grown by one cell radius; a line corridor is
    /// `corridor_width_m` wide.
    pub fn bounds(&self) -> Bounds {
        let pos = self.layout.positions();
        let r = self.layout.cell_radius_m;
        let fold = |f: fn(f64, f64) -> f64, init: f64, get: fn(&Point) -> f64| pos.iter().map(get).fold(init, f);
        let (min_x, max_x) = (fold(f64::min, f64::INFINITY, |p| p.x), fold(f64::max, f64::NEG_INFINITY, |p| p.x));
        let (min_y, max_y) = (fold(f64::min, f64::INFINITY, |p| p.y), fold(f64::max, f64::NEG_INFINITY, |p| p.y));
        match self.layout.kind {
            LayoutKind::Hex => Bounds {
                min: Point::new(min_x - r, min_y - r),
                max: Point::new(max_x + r, max_y + r),
            },
            LayoutKind::Line => {
                let half = self.layout.corridor_width_m / 2.0;
                Bounds {
                    min: Point::new(min_x - r, -half),
                    max: Point::new(max_x + r, half),
                }
            }
        }
    }

    /// Number of steps the run executes.
    pub fn steps(&self) -> u64 {
        let step = to_us(self.step_s);
        ((to_us(self.duration_s) + step - 1) / step) as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        positive("run.duration_s", self.duration_s)?;
        positive("run.step_s", self.step_s)?;
        positive("run.report_period_s", self.report_period_s)?;
        if to_us(self.step_s) < 1 {
            return Err(invalid("run.step_s", "must be at least 1 µs"));
        }
        if self.step_s > self.report_period_s {
            return Err(invalid(
                "run.step_s",
                format!("must not exceed run.report_period_s ({} > {})", self.step_s, self.report_period_s),
            ));
        }
        non_negative("run.ue_speed_kmh", self.ue_speed_kmh)?;
        for &v in &self.speeds_kmh {
            non_negative("run.speeds_kmh", v)?;
        }
        if self.layout.sites == 0 {
            return Err(invalid("layout.sites", "at least one site is required"));
        }
        if self.layout.sites > u32::MAX as usize {
            return Err(invalid("layout.sites", "too many sites"));
        }
        positive("layout.cell_radius_m", self.layout.cell_radius_m)?;
        if self.layout.kind == LayoutKind::Line {
            positive("layout.corridor_width_m", self.layout.corridor_width_m)?;
        }
        for site in self.sites().iter().take(1) {
            site.validate().map_err(|e| prefixed("site", e))?;
        }
        non_negative("site.noise_figure_db", self.site.noise_figure_db)?;
        self.channel.validate().map_err(|e| prefixed("channel", e))?;
        let k = &self.kalman;
        for (field, v) in [
            ("kalman.q_rsrp", k.q.0[0][0]),
            ("kalman.q_noise", k.q.0[1][1]),
            ("kalman.p0", k.p0.0[0][0]),
        ] {
            non_negative(field, v)?;
        }
        for (field, v) in [("kalman.r_rsrp", k.r.0[0][0]), ("kalman.r_noise", k.r.0[1][1])] {
            positive(field, v)?;
        }
        self.learning.validate().map_err(|e| match e {
            LearningError::InvalidParam { field, reason } => invalid(&format!("learning.{field}"), reason),
            other => SimError::Learning(other),
        })?;
        for c in &self.disabled_agents {
            if c.0 as usize >= self.layout.sites {
                return Err(invalid("learning.disabled_cells", format!("cell {c} does not exist")));
            }
        }
        let e = &self.engine;
        for (field, v) in [
            ("engine.exec_latency_s", e.exec_latency_s),
            ("engine.decision_delay_s", e.decision_delay_s),
            ("engine.ping_pong_window_s", e.ping_pong_window_s),
            ("engine.reestablish_s", e.reestablish_s),
            ("engine.rlf_timer_s", e.rlf_timer_s),
            ("engine.trigger_offset_db", e.trigger_offset_db),
        ] {
            non_negative(field, v)?;
        }
        for (field, v) in [("engine.q_out_db", e.q_out_db), ("engine.min_access_dbm", e.min_access_dbm)] {
            if !v.is_finite() {
                return Err(invalid(field, format!("must be finite, got {v}")));
            }
        }
        if !self.report.detection_threshold_dbm.is_finite() {
            return Err(invalid("report.detection_threshold_dbm", "must be finite"));
        }
        self.fixed.pair().map_err(|e| {
            let field = match e {
                LearningError::InvalidHysteresis(_) => "fixed.hyst_db",
                _ => "fixed.ttt_ms",
            };
            invalid(field, e.to_string())
        })?;
        let t = &self.traffic;
        if !(t.utilization > 0.0 && t.utilization <= 1.0) {
            return Err(invalid("traffic.utilization", format!("must be in (0, 1], got {}", t.utilization)));
        }
        if !(0.0..=1.0).contains(&t.ber) {
            return Err(invalid("traffic.ber", format!("must be in [0, 1], got {}", t.ber)));
        }
        if !t.demod_threshold_db.is_finite() {
            return Err(invalid("traffic.demod_threshold_db", "must be finite"));
        }
        positive("traffic.packet_bits", t.packet_bits)?;
        non_negative("traffic.core_delay_ms", t.core_delay_ms)?;
        positive("traffic.plr_bucket_s", t.plr_bucket_s)?;
        Ok(())
    }
}

fn prefixed(section: &str, e: RadioError) -> SimError {
    match e {
        RadioError::InvalidParam { field, reason } => invalid(&format!("{section}.{field}"), reason),
        RadioError::NonFinite { what, value } => invalid(&format!("{section}.{what}"), format!("must be finite, got {value}")),
        other => SimError::Radio(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeTrajectory {
    pub position: Point,
    /// m/s.
    pub velocity: [f64; 2],
    /// Site the UE was dropped around.
    pub home: CellId,
}

impl UeTrajectory {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Drops `n_ues_per_cell` UEs around every site: radius
/// `min(Exp(mean R/2), R)`, uniform angle, uniform heading (±x along a line
/// corridor), clamped into the deployment area.
pub fn place_ues<R: Rng + ?Sized>(scenario: &Scenario, sites: &[CellSite], rng: &mut R) -> Vec<UeTrajectory> {
    let radius = scenario.layout.cell_radius_m;
    let exp = Exp::new(2.0 / radius).expect("cell radius validated positive");
    let speed = scenario.ue_speed_kmh / 3.6;
    let bounds = scenario.bounds();
    let mut out = Vec::with_capacity(sites.len() * scenario.n_ues_per_cell);
    for site in sites {
        for _ in 0..scenario.n_ues_per_cell {
            let d = exp.sample(rng).min(radius);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let position = bounds.clamp(Point::new(
                site.position.x + d * angle.cos(),
                site.position.y + d * angle.sin(),
            ));
            let velocity = match scenario.layout.kind {
                LayoutKind::Hex => {
                    let heading = rng.random_range(0.0..std::f64::consts::TAU);
                    [speed * heading.cos(), speed * heading.sin()]
                }
                LayoutKind::Line => {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    [sign * speed, 0.0]
                }
            };
            out.push(UeTrajectory {
                position,
                velocity,
                home: site.id,
            });
        }
    }
    out
}

/// Moves a trajectory by `dt`, reflecting off the bounds.
pub fn advance(traj: &mut UeTrajectory, bounds: &Bounds, dt: f64) {
    let mut p = [traj.position.x + traj.velocity[0] * dt, traj.position.y + traj.velocity[1] * dt];
    let lo = [bounds.min.x, bounds.min.y];
    let hi = [bounds.max.x, bounds.max.y];
    for axis in 0..2 {
        // loop covers steps longer than the box
        for _ in 0..4 {
            if p[axis] < lo[axis] {
                p[axis] = 2.0 * lo[axis] - p[axis];
                traj.velocity[axis] = -traj.velocity[axis];
            } else if p[axis] > hi[axis] {
                p[axis] = 2.0 * hi[axis] - p[axis];
                traj.velocity[axis] = -traj.velocity[axis];
            } else {
                break;
            }
        }
        p[axis] = p[axis].clamp(lo[axis], hi[axis]);
    }
    traj.position = Point::new(p[0], p[1]);
}

pub fn build_policy(scenario: &Scenario) -> Result<Box<dyn HandoverPolicy>, SimError> {
    Ok(match scenario.policy {
        PolicyKind::Lim2 => Box::new(
            Lim2Policy::new(
                (0..scenario.layout.sites as u32).map(CellId),
                scenario.kalman,
                scenario.learning.clone(),
                scenario.seed,
            )
            .with_disabled_cells(scenario.disabled_agents.iter().copied()),
        ),
        PolicyKind::FixedA3 => Box::new(FixedA3Policy::new(scenario.fixed)?),
        PolicyKind::GreedyRsrp => Box::new(GreedyRsrpPolicy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    Connected,
    /// Re-establishing after a failure until the given time (µs).
    Reestablishing { until_us: i64 },
}

#[derive(Debug, Clone)]
struct UeState {
    id: UeId,
    traj: UeTrajectory,
    serving: CellId,
    ctx: HandoverContext,
    link: Link,
    pending: PendingTraffic,
    env_noise_dbm: f64,
    shadowing: ShadowingTrack,
    travelled_m: f64,
    meas_rng: ChaCha8Rng,
    shadow_rng: ChaCha8Rng,
    next_report_us: i64,
    below_q_out_since_us: Option<i64>,
}

fn strongest(rsrp: &[f64]) -> CellId {
    let mut best = 0;
    for (i, &v) in rsrp.iter().enumerate() {
        if v > rsrp[best] {
            best = i;
        }
    }
    CellId(best as u32)
}

/// What one run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kpi: KpiRecord,
    /// Completed handovers in completion order.
    pub events: Vec<HandoverOutcome>,
    pub q_tables: Vec<QTable>,
    pub steps: u64,
}

/// Complete simulation state of one run.
pub struct World {
    scenario: Scenario,
    sites: Vec<CellSite>,
    bounds: Bounds,
    noise_dbm: f64,
    ues: Vec<UeState>,
    policy: Box<dyn HandoverPolicy>,
    acc: KpiAccumulator,
    events: Vec<HandoverOutcome>,
    time_us: i64,
    step_us: i64,
    duration_us: i64,
    report_us: i64,
    steps: u64,
    rsrp: Vec<f64>,
    wideband: Vec<f64>,
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let policy = build_policy(scenario)?;
        Self::with_policy(scenario, policy)
    }

    /// Runs `scenario` with a caller-supplied policy instead of `scenario.policy`.
    pub fn with_policy(scenario: &Scenario, policy: Box<dyn HandoverPolicy>) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut placement = substream(scenario.seed, Stream::Placement);
        let trajectories = place_ues(scenario, &scenario.sites(), &mut placement);
        Self::with_trajectories(scenario, policy, trajectories)
    }

    /// Starts from explicit UE trajectories instead of random placement.
    pub fn with_trajectories(
        scenario: &Scenario,
        policy: Box<dyn HandoverPolicy>,
        trajectories: Vec<UeTrajectory>,
    ) -> Result<Self, SimError> {
        scenario.validate()?;
        let sites = scenario.sites();
        let n_sites = sites.len();
        for t in &trajectories {
            if t.home.0 as usize >= n_sites {
                return Err(invalid("trajectory.home", format!("cell {} does not exist", t.home)));
            }
        }
        let ues = trajectories
            .into_iter()
            .enumerate()
            .map(|(i, traj)| {
                let id = UeId(i as u32);
                let mut shadow_rng = substream(scenario.seed, Stream::Shadowing(id));
                let shadowing = ShadowingTrack::new(n_sites, &scenario.channel, &mut shadow_rng);
                UeState {
                    id,
                    traj,
                    serving: traj.home,
                    ctx: HandoverContext::new(id),
                    link: Link::Connected,
                    pending: PendingTraffic::default(),
                    env_noise_dbm: scenario.channel.env_noise_mean_dbm,
                    shadowing,
                    travelled_m: 0.0,
                    meas_rng: substream(scenario.seed, Stream::Measurement(id)),
                    shadow_rng,
                    next_report_us: 0,
                    below_q_out_since_us: None,
                }
            })
            .collect();
        let noise_dbm = noise_power_dbm(scenario.site.bandwidth_hz, scenario.site.noise_figure_db, &scenario.channel);
        let mut world = Self {
            scenario: scenario.clone(),
            bounds: scenario.bounds(),
            noise_dbm,
            ues,
            policy,
            acc: KpiAccumulator::new(scenario.traffic.clone()),
            events: Vec::new(),
            time_us: 0,
            step_us: to_us(scenario.step_s),
            duration_us: to_us(scenario.duration_s),
            report_us: to_us(scenario.report_period_s),
            steps: 0,
            rsrp: vec![0.0; n_sites],
            wideband: vec![0.0; n_sites],
            sites,
        };
        // initial attachment to the strongest cell
        for i in 0..world.ues.len() {
            world.refresh_radio(i)?;
            world.ues[i].serving = strongest(&world.rsrp);
        }
        Ok(world)
    }

    pub fn time_s(&self) -> f64 {
        self.time_us as f64 * 1e-6
    }

    pub fn is_finished(&self) -> bool {
        self.time_us >= self.duration_us
    }

    pub fn sites(&self) -> &[CellSite] {
        &self.sites
    }

    pub fn trajectories(&self) -> Vec<UeTrajectory> {
        self.ues.iter().map(|u| u.traj).collect()
    }

    pub fn serving_cells(&self) -> Vec<CellId> {
        self.ues.iter().map(|u| u.serving).collect()
    }

    pub fn events(&self) -> &[HandoverOutcome] {
        &self.events
    }

    /// Fills the scratch RSRP and wideband power buffers for UE `i`.
    fn refresh_radio(&mut self, i: usize) -> Result<(), SimError> {
        let ue = &self.ues[i];
        for (k, site) in self.sites.iter().enumerate() {
            let r = true_rsrp(site, ue.traj.position, &self.scenario.channel, ue.shadowing.values()[k])?;
            self.rsrp[k] = r;
            self.wideband[k] = r + site.re_scaling_db();
        }
        Ok(())
    }

    fn serving_sinr(&self, serving: CellId) -> f64 {
        let s = serving.0 as usize;
        let signal = self.wideband[s];
        let interference: Vec<f64> = self
            .wideband
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != s)
            .map(|(_, &p)| p)
            .collect();
        sinr_from_powers(signal, &interference, self.noise_dbm)
    }

    /// Advances the world by one step.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.is_finished() {
            return Ok(());
        }
        let now_us = self.time_us;
        let now = now_us as f64 * 1e-6;
        let dt_us = self.step_us.min(self.duration_us - now_us);
        let dt = dt_us as f64 * 1e-6;
        for i in 0..self.ues.len() {
            self.step_ue(i, now_us, now, dt)?;
        }
        self.time_us += dt_us;
        self.steps += 1;
        Ok(())
    }

    fn step_ue(&mut self, i: usize, now_us: i64, now: f64, dt: f64) -> Result<(), SimError> {
        self.refresh_radio(i)?;
        let cfg = self.scenario.engine.clone();

        if let Link::Reestablishing { until_us } = self.ues[i].link {
            if now_us >= until_us {
                let ue = &mut self.ues[i];
                ue.link = Link::Connected;
                ue.serving = strongest(&self.rsrp);
                ue.below_q_out_since_us = None;
            }
        }

        if self.ues[i].link == Link::Connected && self.ues[i].ctx.is_due(now) {
            let ue = &mut self.ues[i];
            let target = ue.ctx.target.expect("executing implies a target");
            let outcome = complete_handover(&mut ue.ctx, now, self.rsrp[target.0 as usize], &cfg)?;
            match outcome.result {
                HandoverResult::Success => {
                    ue.serving = target;
                    self.acc.resolve_pending(&mut ue.pending, now, true);
                }
                HandoverResult::Failure => {
                    ue.link = Link::Reestablishing {
                        until_us: to_us(outcome.complete_time),
                    };
                    self.acc.resolve_pending(&mut ue.pending, now, false);
                }
            }
            ue.below_q_out_since_us = None;
            self.acc.record_outcome(&outcome);
            self.policy.on_outcome(&outcome);
            self.events.push(outcome);
        }

        if now_us >= self.ues[i].next_report_us {
            while self.ues[i].next_report_us <= now_us {
                self.ues[i].next_report_us += self.report_us;
            }
            if self.ues[i].link == Link::Connected {
                let wideband = &self.wideband;
                let rssi = rssi_from_powers(wideband, self.noise_dbm);
                let ue = &mut self.ues[i];
                ue.env_noise_dbm = step_env_noise(ue.env_noise_dbm, &self.scenario.channel, &mut ue.meas_rng);
                let radio = UeRadio {
                    ue: ue.id,
                    serving: ue.serving,
                    sites: &self.sites,
                    true_rsrp_dbm: &self.rsrp,
                    rssi_dbm: rssi,
                    env_noise_dbm: ue.env_noise_dbm,
                };
                let report = generate_report(&radio, &self.scenario.channel, &self.scenario.report, &mut ue.meas_rng, now);
                if on_measurement_report(&mut ue.ctx, &report, self.policy.as_mut(), now, &cfg)?.is_some() {
                    self.acc.record_decision();
                }
            }
        }

        match self.ues[i].link {
            Link::Reestablishing { .. } => self.acc.record_detached(now, dt),
            Link::Connected => {
                let sinr = self.serving_sinr(self.ues[i].serving);
                let bandwidth = self.scenario.site.bandwidth_hz;
                let ue = &mut self.ues[i];
                ue.ctx.observe_serving_sinr(sinr);
                if ue.ctx.is_interrupted(now) {
                    self.acc.record_interrupted(&mut ue.pending, now, dt);
                } else {
                    self.acc.record_connected(now, dt, sinr, bandwidth);
                }
                if ue.ctx.is_executing() || sinr >= cfg.q_out_db {
                    ue.below_q_out_since_us = None;
                } else {
                    let since = *ue.below_q_out_since_us.get_or_insert(now_us);
                    if now_us - since >= to_us(cfg.rlf_timer_s) {
                        ue.ctx.reset();
                        ue.link = Link::Reestablishing {
                            until_us: now_us + to_us(cfg.reestablish_s),
                        };
                        ue.below_q_out_since_us = None;
                        self.acc.record_radio_link_failure();
                    }
                }
            }
        }

        let ue = &mut self.ues[i];
        advance(&mut ue.traj, &self.bounds, dt);
        ue.travelled_m += ue.traj.speed() * dt;
        ue.shadowing.advance_to(ue.travelled_m, &mut ue.shadow_rng);
        Ok(())
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            kpi: self.acc.finish(),
            events: self.events,
            q_tables: self.policy.q_tables(),
            steps: self.steps,
        }
    }
}

/// Executes a whole run. Configuration errors surface before any stepping.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    let mut world = World::new(scenario)?;
    while !world.is_finished() {
        world.step()?;
    }
    Ok(world.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub policy: PolicyKind,
    pub speed_kmh: f64,
    pub seed: u64,
    pub kpi: KpiRecord,
}

/// Cross product of policies × speeds × seeds, run on at most `jobs`
/// threads. Records come back in cross-product order whatever `jobs` is.
pub fn sweep(
    base: &Scenario,
    policies: &[PolicyKind],
    speeds_kmh: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<RunRecord>, SimError> {
    base.validate()?;
    let mut points = Vec::with_capacity(policies.len() * speeds_kmh.len() * seeds.len());
    for &policy in policies {
        for &speed in speeds_kmh {
            non_negative("run.speeds_kmh", speed)?;
            for &seed in seeds {
                points.push((policy, speed, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    pool.install(|| {
        points
            .par_iter()
            .map(|&(policy, speed_kmh, seed)| {
                let scenario = Scenario {
                    policy,
                    ue_speed_kmh: speed_kmh,
                    seed,
                    ..base.clone()
                };
                run(&scenario).map(|out| RunRecord {
                    policy,
                    speed_kmh,
                    seed,
                    kpi: out.kpi,
                })
            })
            .collect()
    })
}
