//! Cell sites, log-distance path loss, shadowing and receiver noise.
//!
//! Everything here works in dB/dBm. Received power is the wideband power over
//! the full channel bandwidth; RSRP is that power spread over the resource
//! elements of the carrier (120 kHz subcarrier spacing).

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reference distance of the log-distance model (m).
pub const REFERENCE_DISTANCE_M: f64 = 1.0;
/// Subcarrier spacing of the FR2 numerology used for RSRP scaling (Hz).
pub const SUBCARRIER_SPACING_HZ: f64 = 120e3;
/// Subcarriers per resource block.
pub const SUBCARRIERS_PER_RB: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("resource block count must be at least 1, got {0}")]
    ResourceBlocks(u32),
    #[error("invalid {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct UeId(pub u32);

impl fmt::Display for UeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Planar coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSite {
    pub id: CellId,
    pub position: Point,
    pub tx_power_dbm: f64,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
}

impl CellSite {
    /// A site with the default gNB radio configuration (46 dBm, 26 GHz, 400 MHz, NF 5 dB).
    pub fn new(id: CellId, position: Point) -> Self {
        Self {
            id,
            position,
            tx_power_dbm: 46.0,
            carrier_freq_hz: 26e9,
            bandwidth_hz: 400e6,
            noise_figure_db: 5.0,
        }
    }

    pub fn validate(&self) -> Result<(), RadioError> {
        if !self.tx_power_dbm.is_finite() {
            return Err(RadioError::NonFinite {
                what: "tx_power_dbm",
                value: self.tx_power_dbm,
            });
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(RadioError::InvalidParam {
                field: "bandwidth_hz",
                reason: format!("must be positive, got {}", self.bandwidth_hz),
            });
        }
        if !(self.carrier_freq_hz > 0.0 && self.carrier_freq_hz.is_finite()) {
            return Err(RadioError::InvalidParam {
                field: "carrier_freq_hz",
                reason: format!("must be positive, got {}", self.carrier_freq_hz),
            });
        }
        Ok(())
    }

    /// Number of subcarriers in the carrier.
    pub fn subcarriers(&self) -> u32 {
        ((self.bandwidth_hz / SUBCARRIER_SPACING_HZ).floor() as u32).max(1)
    }

    /// Number of resource blocks in the carrier.
    pub fn resource_blocks(&self) -> u32 {
        (self.subcarriers() / SUBCARRIERS_PER_RB).max(1)
    }

    /// dB offset between wideband received power and per-resource-element RSRP.
    pub fn re_scaling_db(&self) -> f64 {
        10.0 * f64::from(self.subcarriers()).log10()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    /// Distance after which a UE's shadowing towards every site is redrawn.
    pub shadowing_decorrelation_m: f64,
    pub thermal_noise_density_dbm_hz: f64,
    pub meas_noise_sigma_db: f64,
    pub env_noise_mean_dbm: f64,
    /// Half-width of the band the environment-noise walk is confined to is
    /// three times this value.
    pub env_noise_sigma_db: f64,
    /// Standard deviation of one environment-noise walk increment.
    pub env_noise_step_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            path_loss_exponent: 3.0,
            shadowing_sigma_db: 4.0,
            shadowing_decorrelation_m: 50.0,
            thermal_noise_density_dbm_hz: -174.0,
            meas_noise_sigma_db: 2.0,
            env_noise_mean_dbm: -100.0,
            env_noise_sigma_db: 1.0,
            env_noise_step_db: 0.2,
        }
    }
}

impl ChannelParams {
    /// Noiseless channel: no shadowing, no measurement or environment noise.
    pub fn noiseless() -> Self {
        Self {
            shadowing_sigma_db: 0.0,
            meas_noise_sigma_db: 0.0,
            env_noise_sigma_db: 0.0,
            env_noise_step_db: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RadioError> {
        if !(self.path_loss_exponent > 0.0 && self.path_loss_exponent.is_finite()) {
            return Err(RadioError::InvalidParam {
                field: "path_loss_exponent",
                reason: format!("must be positive, got {}", self.path_loss_exponent),
            });
        }
        let sigmas = [
            ("shadowing_sigma_db", self.shadowing_sigma_db),
            ("meas_noise_sigma_db", self.meas_noise_sigma_db),
            ("env_noise_sigma_db", self.env_noise_sigma_db),
            ("env_noise_step_db", self.env_noise_step_db),
        ];
        for (field, value) in sigmas {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(RadioError::InvalidParam {
                    field,
                    reason: format!("must be a finite value >= 0, got {value}"),
                });
            }
        }
        if !(self.shadowing_decorrelation_m > 0.0) {
            return Err(RadioError::InvalidParam {
                field: "shadowing_decorrelation_m",
                reason: format!("must be positive, got {}", self.shadowing_decorrelation_m),
            });
        }
        for (field, value) in [
            ("thermal_noise_density_dbm_hz", self.thermal_noise_density_dbm_hz),
            ("env_noise_mean_dbm", self.env_noise_mean_dbm),
        ] {
            if !value.is_finite() {
                return Err(RadioError::NonFinite { what: field, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEntry {
    pub cell: CellId,
    pub rsrp_dbm: f64,
    pub rsrq_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementReport {
    pub ue: UeId,
    /// Seconds since the start of the run.
    pub timestamp: f64,
    pub serving: MeasurementEntry,
    /// Sorted by measured RSRP, strongest first; ties by cell id.
    pub neighbors: Vec<MeasurementEntry>,
    /// Environment-noise sample observed alongside the report (dBm).
    pub env_noise_dbm: f64,
}

impl MeasurementReport {
    pub fn entry(&self, cell: CellId) -> Option<&MeasurementEntry> {
        if self.serving.cell == cell {
            return Some(&self.serving);
        }
        self.neighbors.iter().find(|e| e.cell == cell)
    }

    pub fn entries(&self) -> impl Iterator<Item = &MeasurementEntry> {
        std::iter::once(&self.serving).chain(self.neighbors.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub max_neighbors: usize,
    /// Neighbors measured below this RSRP are not reported.
    pub detection_threshold_dbm: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            max_neighbors: 8,
            detection_threshold_dbm: -130.0,
        }
    }
}

/// Free-space loss at the reference distance for the given carrier.
pub fn free_space_reference_db(carrier_freq_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * REFERENCE_DISTANCE_M * carrier_freq_hz / SPEED_OF_LIGHT)
        .log10()
}

/// Log-distance path loss in dB. Distances below the 1 m reference clamp to it.
pub fn path_loss(
    distance_m: f64,
    params: &ChannelParams,
    carrier_freq_hz: f64,
) -> Result<f64, RadioError> {
    if !distance_m.is_finite() {
        return Err(RadioError::NonFinite {
            what: "distance",
            value: distance_m,
        });
    }
    if !carrier_freq_hz.is_finite() {
        return Err(RadioError::NonFinite {
            what: "carrier frequency",
            value: carrier_freq_hz,
        });
    }
    if !params.path_loss_exponent.is_finite() {
        return Err(RadioError::NonFinite {
            what: "path loss exponent",
            value: params.path_loss_exponent,
        });
    }
    let d = distance_m.max(REFERENCE_DISTANCE_M);
    Ok(free_space_reference_db(carrier_freq_hz)
        + 10.0 * params.path_loss_exponent * (d / REFERENCE_DISTANCE_M).log10())
}

/// Wideband received power from `site` at `ue` (dBm).
pub fn received_power(
    site: &CellSite,
    ue: Point,
    params: &ChannelParams,
    shadowing_db: f64,
) -> Result<f64, RadioError> {
    let pl = path_loss(site.position.distance(&ue), params, site.carrier_freq_hz)?;
    Ok(site.tx_power_dbm - pl - shadowing_db)
}

/// Noise-free RSRP of `site` at `ue` (dBm).
pub fn true_rsrp(
    site: &CellSite,
    ue: Point,
    params: &ChannelParams,
    shadowing_db: f64,
) -> Result<f64, RadioError> {
    Ok(received_power(site, ue, params, shadowing_db)? - site.re_scaling_db())
}

/// Measured RSRP: the true value degraded by the environment noise above its
/// mean (dB for dB) plus zero-mean Gaussian measurement noise.
pub fn measure_rsrp<R: Rng + ?Sized>(
    true_rsrp_dbm: f64,
    env_noise_dbm: f64,
    params: &ChannelParams,
    rng: &mut R,
) -> f64 {
    let degradation = env_noise_dbm - params.env_noise_mean_dbm;
    true_rsrp_dbm - degradation + gaussian(params.meas_noise_sigma_db, rng)
}

/// One step of the bounded environment-noise random walk.
pub fn step_env_noise<R: Rng + ?Sized>(current_dbm: f64, params: &ChannelParams, rng: &mut R) -> f64 {
    let bound = 3.0 * params.env_noise_sigma_db;
    let next = current_dbm + gaussian(params.env_noise_step_db, rng);
    next.clamp(
        params.env_noise_mean_dbm - bound,
        params.env_noise_mean_dbm + bound,
    )
}

/// Draws a zero-mean Gaussian; `sigma == 0` consumes no randomness.
pub fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma)
            .expect("sigma validated as finite and positive")
            .sample(rng)
    } else {
        0.0
    }
}

/// RSRQ = 10·log10(N_RB) + RSRP − RSSI.
pub fn rsrq(rsrp_dbm: f64, rssi_dbm: f64, n_rb: u32) -> Result<f64, RadioError> {
    if n_rb < 1 {
        return Err(RadioError::ResourceBlocks(n_rb));
    }
    Ok(10.0 * f64::from(n_rb).log10() + rsrp_dbm - rssi_dbm)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Thermal noise plus receiver noise figure over the carrier bandwidth (dBm).
pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64, params: &ChannelParams) -> f64 {
    params.thermal_noise_density_dbm_hz + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// SINR in dB from already-computed received powers.
pub fn sinr_from_powers(signal_dbm: f64, interferers_dbm: &[f64], noise_dbm: f64) -> f64 {
    let interference: f64 = interferers_dbm.iter().map(|&p| dbm_to_mw(p)).sum();
    mw_to_dbm(dbm_to_mw(signal_dbm) / (interference + dbm_to_mw(noise_dbm)))
}

/// SINR at `ue` from `serving` against `interferers`, without shadowing.
pub fn sinr(
    serving: &CellSite,
    interferers: &[CellSite],
    ue: Point,
    params: &ChannelParams,
) -> Result<f64, RadioError> {
    let signal = received_power(serving, ue, params, 0.0)?;
    let interference = interferers
        .iter()
        .map(|site| received_power(site, ue, params, 0.0))
        .collect::<Result<Vec<_>, _>>()?;
    let noise = noise_power_dbm(serving.bandwidth_hz, serving.noise_figure_db, params);
    Ok(sinr_from_powers(signal, &interference, noise))
}

/// Total received power over the carrier from every site plus receiver noise (dBm).
pub fn rssi_from_powers(received_dbm: &[f64], noise_dbm: f64) -> f64 {
    let total: f64 = received_dbm.iter().map(|&p| dbm_to_mw(p)).sum::<f64>() + dbm_to_mw(noise_dbm);
    mw_to_dbm(total)
}

/// Shadowing seen along one UE's path towards every site. Independent draws
/// sit every `shadowing_decorrelation_m` of travel; in between, adjacent draws
/// are blended with cos/sin weights so the field is continuous and keeps its
/// variance. Draws depend only on distance travelled, not on the step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowingTrack {
    prev: Vec<f64>,
    next: Vec<f64>,
    segment_start_m: f64,
    decorrelation_m: f64,
    sigma_db: f64,
    current: Vec<f64>,
}

impl ShadowingTrack {
    pub fn new<R: Rng + ?Sized>(sites: usize, params: &ChannelParams, rng: &mut R) -> Self {
        let sigma_db = params.shadowing_sigma_db;
        let prev: Vec<f64> = (0..sites).map(|_| gaussian(sigma_db, rng)).collect();
        let next = (0..sites).map(|_| gaussian(sigma_db, rng)).collect();
        Self {
            current: prev.clone(),
            prev,
            next,
            segment_start_m: 0.0,
            decorrelation_m: params.shadowing_decorrelation_m,
            sigma_db,
        }
    }

    /// Moves the field to `travelled_m` metres along the path.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, travelled_m: f64, rng: &mut R) {
        while travelled_m >= self.segment_start_m + self.decorrelation_m {
            self.segment_start_m += self.decorrelation_m;
            std::mem::swap(&mut self.prev, &mut self.next);
            for v in self.next.iter_mut() {
                *v = gaussian(self.sigma_db, rng);
            }
        }
        let f = ((travelled_m - self.segment_start_m) / self.decorrelation_m).clamp(0.0, 1.0);
        let (a, b) = (f * std::f64::consts::FRAC_PI_2).sin_cos();
        for ((c, p), n) in self.current.iter_mut().zip(&self.prev).zip(&self.next) {
            *c = p * b + n * a;
        }
    }

    /// Current shadowing per site (dB), indexed like the site list.
    pub fn values(&self) -> &[f64] {
        &self.current
    }
}

/// Radio state of one UE at one instant, as seen by the report generator.
#[derive(Debug, Clone)]
pub struct UeRadio<'a> {
    pub ue: UeId,
    pub serving: CellId,
    pub sites: &'a [CellSite],
    /// Noise-free RSRP per site, indexed like `sites`.
    pub true_rsrp_dbm: &'a [f64],
    /// RSSI over the carrier at the UE.
    pub rssi_dbm: f64,
    pub env_noise_dbm: f64,
}

/// Builds a measurement report for one UE. Every site is measured (in site
/// order, so randomness is consumed deterministically); neighbors below the
/// detection threshold are dropped, the rest sorted strongest first and
/// truncated to `max_neighbors`.
pub fn generate_report<R: Rng + ?Sized>(
    radio: &UeRadio<'_>,
    params: &ChannelParams,
    config: &ReportConfig,
    rng: &mut R,
    timestamp: f64,
) -> MeasurementReport {
    let mut serving = None;
    let mut neighbors = Vec::with_capacity(radio.sites.len().saturating_sub(1));
    for (site, &truth) in radio.sites.iter().zip(radio.true_rsrp_dbm) {
        let rsrp_dbm = measure_rsrp(truth, radio.env_noise_dbm, params, rng);
        let rsrq_db = rsrq(rsrp_dbm, radio.rssi_dbm, site.resource_blocks())
            .expect("resource_blocks() is at least 1");
        let entry = MeasurementEntry {
            cell: site.id,
            rsrp_dbm,
            rsrq_db,
        };
        if site.id == radio.serving {
            serving = Some(entry);
        } else if rsrp_dbm >= config.detection_threshold_dbm {
            neighbors.push(entry);
        }
    }
    neighbors.sort_by(|a, b| {
        b.rsrp_dbm
            .total_cmp(&a.rsrp_dbm)
            .then_with(|| a.cell.cmp(&b.cell))
    });
    neighbors.truncate(config.max_neighbors);
    MeasurementReport {
        ue: radio.ue,
        timestamp,
        serving: serving.expect("serving cell must be one of the sites"),
        neighbors,
        env_noise_dbm: radio.env_noise_dbm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn path_loss_reference_identity() {
        let p = params();
        let pl0 = free_space_reference_db(26e9);
        assert!((path_loss(1.0, &p, 26e9).unwrap() - pl0).abs() < 1e-12);
        // 20·log10(4π·26e9/c) ≈ 60.74 dB
        assert!((pl0 - 60.74).abs() < 0.01, "{pl0}");
    }

    #[test]
    fn path_loss_decades() {
        let p = params();
        let pl0 = path_loss(1.0, &p, 26e9).unwrap();
        assert!((path_loss(10.0, &p, 26e9).unwrap() - (pl0 + 30.0)).abs() < 1e-9);
        assert!((path_loss(100.0, &p, 26e9).unwrap() - (pl0 + 60.0)).abs() < 1e-9);
    }

    #[test]
    fn path_loss_clamps_and_rejects_nan() {
        let p = params();
        assert_eq!(path_loss(0.1, &p, 26e9).unwrap(), path_loss(1.0, &p, 26e9).unwrap());
        assert!(path_loss(f64::NAN, &p, 26e9).is_err());
        assert!(path_loss(f64::INFINITY, &p, 26e9).is_err());
    }

    #[test]
    fn true_rsrp_examples() {
        let p = params();
        let mut site = CellSite::new(CellId(0), Point::new(0.0, 0.0));
        let at_ref = true_rsrp(&site, Point::new(1.0, 0.0), &p, 0.0).unwrap();
        let expected = site.tx_power_dbm - free_space_reference_db(site.carrier_freq_hz) - site.re_scaling_db();
        assert!((at_ref - expected).abs() < 1e-12);

        let ue = Point::new(80.0, 20.0);
        let base = true_rsrp(&site, ue, &p, 0.0).unwrap();
        assert!((true_rsrp(&site, ue, &p, 5.0).unwrap() - (base - 5.0)).abs() < 1e-12);
        site.tx_power_dbm += 3.0;
        assert!((true_rsrp(&site, ue, &p, 0.0).unwrap() - (base + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn measure_noiseless_identity() {
        let p = ChannelParams::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(measure_rsrp(-93.5, p.env_noise_mean_dbm, &p, &mut rng), -93.5);
    }

    #[test]
    fn measure_noise_statistics() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| measure_rsrp(-90.0, p.env_noise_mean_dbm, &p, &mut rng) + 90.0)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() / p.meas_noise_sigma_db - 1.0).abs() < 0.02, "sd {}", var.sqrt());
    }

    #[test]
    fn env_noise_walk_is_bounded() {
        let p = ChannelParams {
            env_noise_step_db: 2.0,
            ..params()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut n = p.env_noise_mean_dbm;
        for _ in 0..10_000 {
            n = step_env_noise(n, &p, &mut rng);
            assert!((n - p.env_noise_mean_dbm).abs() <= 3.0 * p.env_noise_sigma_db + 1e-12);
        }
    }

    #[test]
    fn rsrq_examples() {
        assert_eq!(rsrq(-90.0, -90.0, 1).unwrap(), 0.0);
        assert!(rsrq(-90.0, -70.0, 100).unwrap().abs() < 1e-12);
        assert!((rsrq(-90.0, -70.0, 50).unwrap() - (-3.0103)).abs() < 1e-4);
        assert_eq!(rsrq(-90.0, -70.0, 0), Err(RadioError::ResourceBlocks(0)));
    }

    #[test]
    fn sinr_examples() {
        let noise = -90.0;
        assert!(sinr_from_powers(-90.0, &[], noise).abs() < 1e-12);
        assert!(sinr_from_powers(-60.0, &[-60.0], -200.0).abs() < 1e-9);
        assert!((sinr_from_powers(-60.0, &[-60.0, -60.0], -200.0) + 3.0103).abs() < 1e-4);
    }

    #[test]
    fn sinr_geometry_symmetric() {
        let p = params();
        let a = CellSite::new(CellId(0), Point::new(0.0, 0.0));
        let b = CellSite::new(CellId(1), Point::new(200.0, 0.0));
        let s = sinr(&a, &[b], Point::new(100.0, 0.0), &p).unwrap();
        // equal signal and interference, noise pushes slightly below 0 dB
        assert!(s < 0.0 && s > -1.0, "{s}");
    }

    fn sites_at(distances: &[f64]) -> Vec<CellSite> {
        distances
            .iter()
            .enumerate()
            .map(|(i, &d)| CellSite::new(CellId(i as u32), Point::new(d, 0.0)))
            .collect()
    }

    fn report_for(sites: &[CellSite], serving: CellId, ue: Point, p: &ChannelParams, seed: u64) -> MeasurementReport {
        let rsrp: Vec<f64> = sites.iter().map(|s| true_rsrp(s, ue, p, 0.0).unwrap()).collect();
        let rx: Vec<f64> = sites.iter().map(|s| received_power(s, ue, p, 0.0).unwrap()).collect();
        let noise = noise_power_dbm(sites[0].bandwidth_hz, sites[0].noise_figure_db, p);
        let radio = UeRadio {
            ue: UeId(0),
            serving,
            sites,
            true_rsrp_dbm: &rsrp,
            rssi_dbm: rssi_from_powers(&rx, noise),
            env_noise_dbm: p.env_noise_mean_dbm,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_report(&radio, p, &ReportConfig::default(), &mut rng, 0.0)
    }

    #[test]
    fn report_single_cell_has_no_neighbors() {
        let p = ChannelParams::noiseless();
        let sites = sites_at(&[0.0]);
        let r = report_for(&sites, CellId(0), Point::new(30.0, 0.0), &p, 1);
        assert!(r.neighbors.is_empty());
        assert_eq!(r.serving.cell, CellId(0));
    }

    #[test]
    fn report_tie_orders_by_cell_id() {
        let p = ChannelParams::noiseless();
        let sites = vec![
            CellSite::new(CellId(0), Point::new(0.0, 0.0)),
            CellSite::new(CellId(2), Point::new(50.0, 50.0)),
            CellSite::new(CellId(1), Point::new(50.0, -50.0)),
        ];
        let r = report_for(&sites, CellId(0), Point::new(50.0, 0.0), &p, 1);
        assert_eq!(r.neighbors.len(), 2);
        assert_eq!(r.neighbors[0].rsrp_dbm, r.neighbors[1].rsrp_dbm);
        assert_eq!(r.neighbors[0].cell, CellId(1));
        assert_eq!(r.neighbors[1].cell, CellId(2));
    }

    #[test]
    fn report_orders_by_distance() {
        let p = ChannelParams::noiseless();
        // UE at origin; the serving site is far away behind it.
        let sites = vec![
            CellSite::new(CellId(0), Point::new(-300.0, 0.0)),
            CellSite::new(CellId(1), Point::new(160.0, 0.0)),
            CellSite::new(CellId(2), Point::new(40.0, 0.0)),
            CellSite::new(CellId(3), Point::new(80.0, 0.0)),
        ];
        let r = report_for(&sites, CellId(0), Point::new(0.0, 0.0), &p, 1);
        let order: Vec<u32> = r.neighbors.iter().map(|e| e.cell.0).collect();
        assert_eq!(order, vec![2, 3, 1]);
        assert!(r.neighbors.windows(2).all(|w| w[0].rsrp_dbm > w[1].rsrp_dbm));
    }

    #[test]
    fn report_truncates_and_excludes_serving() {
        let p = ChannelParams::noiseless();
        let sites = sites_at(&[0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0]);
        let r = report_for(&sites, CellId(3), Point::new(5.0, 0.0), &p, 1);
        assert_eq!(r.neighbors.len(), 8);
        assert!(r.neighbors.iter().all(|e| e.cell != CellId(3)));
    }

    #[test]
    fn noiseless_report_is_pure() {
        let p = ChannelParams::noiseless();
        let sites = sites_at(&[0.0, 120.0, 260.0]);
        let a = report_for(&sites, CellId(0), Point::new(70.0, 10.0), &p, 1);
        let b = report_for(&sites, CellId(0), Point::new(70.0, 10.0), &p, 99);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn path_loss_monotone(d1 in 0.0f64..5000.0, d2 in 0.0f64..5000.0) {
            let p = params();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(path_loss(lo, &p, 26e9).unwrap() <= path_loss(hi, &p, 26e9).unwrap());
        }

        #[test]
        fn true_rsrp_strictly_decreasing(d in 1.0f64..3000.0, extra in 0.01f64..500.0, shadow in -10.0f64..10.0) {
            let p = params();
            let site = CellSite::new(CellId(0), Point::new(0.0, 0.0));
            let near = true_rsrp(&site, Point::new(d, 0.0), &p, shadow).unwrap();
            let far = true_rsrp(&site, Point::new(d + extra, 0.0), &p, shadow).unwrap();
            prop_assert!(far < near);
        }

        #[test]
        fn rsrq_identity(r in -200.0f64..50.0) {
            prop_assert_eq!(rsrq(r, r, 1).unwrap(), 0.0);
        }

        #[test]
        fn sinr_shift_invariant_when_interference_limited(
            s in -90.0f64..-40.0, i1 in -90.0f64..-40.0, i2 in -90.0f64..-40.0, c in -20.0f64..20.0
        ) {
            let base = sinr_from_powers(s, &[i1, i2], -300.0);
            let shifted = sinr_from_powers(s + c, &[i1 + c, i2 + c], -300.0);
            prop_assert!((base - shifted).abs() < 1e-9);
        }
    }

    #[test]
    fn shadowing_track_is_continuous_with_constant_variance() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut track = ShadowingTrack::new(1, &p, &mut rng);
        let mut last = track.values()[0];
        let mut sum_sq = 0.0;
        let n = 200_000;
        for k in 1..=n {
            track.advance_to(k as f64 * 0.5, &mut rng);
            let v = track.values()[0];
            assert!((v - last).abs() < 1.0, "jump {last} -> {v}");
            last = v;
            sum_sq += v * v;
        }
        let sigma = (sum_sq / n as f64).sqrt();
        assert!((sigma - p.shadowing_sigma_db).abs() < 0.3, "{sigma}");
    }

    #[test]
    fn shadowing_track_ignores_step_size() {
        let p = params();
        let mut a = ShadowingTrack::new(3, &p, &mut ChaCha8Rng::seed_from_u64(1));
        let mut b = a.clone();
        let (mut ra, mut rb) = (ChaCha8Rng::seed_from_u64(2), ChaCha8Rng::seed_from_u64(2));
        for k in 1..=1000 {
            a.advance_to(k as f64, &mut ra);
        }
        for k in 1..=2000 {
            b.advance_to(k as f64 * 0.5, &mut rb);
        }
        assert_eq!(a, b);
    }
}
