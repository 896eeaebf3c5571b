//! Two-state Kalman estimation of RSRP and environment noise.
//!
//! The state is `[rsrp_dbm, env_noise_dbm]`. Both the transition and
//! measurement matrices default to identity, the measurement `z` is the
//! measured RSRP paired with the observed environment-noise sample.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Sub};

use thiserror::Error;

use crate::radio_env::{CellId, MeasurementReport};
use crate::rlho::sigmoid;

/// Innovation covariances with a determinant below this are treated as singular.
const SINGULAR_DET: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("innovation covariance is singular (det = {0:e})")]
    SingularInnovation(f64),
    #[error("non-finite measurement ({0}, {1})")]
    NonFiniteMeasurement(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2(pub [f64; 2]);

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Vec2 {
    pub const fn new(a: f64, b: f64) -> Self {
        Self([a, b])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);

    pub const fn diag(a: f64, b: f64) -> Self {
        Mat2([[a, 0.0], [0.0, b]])
    }

    pub fn scale(self, s: f64) -> Self {
        let m = self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn transpose(self) -> Self {
        let m = self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn det(&self) -> f64 {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if !det.is_finite() || det.abs() < SINGULAR_DET {
            return None;
        }
        let m = self.0;
        Some(Mat2([[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]]).scale(1.0 / det))
    }

    pub fn symmetrized(self) -> Self {
        let off = 0.5 * (self.0[0][1] + self.0[1][0]);
        Mat2([[self.0[0][0], off], [off, self.0[1][1]]])
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0[0][1] - self.0[1][0]).abs() <= tol
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues_sym(&self) -> [f64; 2] {
        let s = self.symmetrized().0;
        let mean = 0.5 * (s[0][0] + s[1][1]);
        let half_diff = 0.5 * (s[0][0] - s[1][1]);
        let r = half_diff.hypot(s[0][1]);
        [mean - r, mean + r]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] + b[0][0], a[0][1] + b[0][1]],
            [a[1][0] + b[1][0], a[1][1] + b[1][1]],
        ])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        self + o.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }
}

impl Mul<Vec2> for Mat2 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        let m = self.0;
        Vec2([
            m[0][0] * v.0[0] + m[0][1] * v.0[1],
            m[1][0] * v.0[0] + m[1][1] * v.0[1],
        ])
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2([self.0[0] - o.0[0], self.0[1] - o.0[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub x: Vec2,
    pub p: Mat2,
}

impl KalmanState {
    pub fn new(x: Vec2, p: Mat2) -> Self {
        Self { x, p }
    }

    pub fn rsrp_dbm(&self) -> f64 {
        self.x.0[0]
    }

    pub fn env_noise_dbm(&self) -> f64 {
        self.x.0[1]
    }

    /// Symmetric, PSD (to -1e-9) and finite.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.p.is_finite()
            && self.p.is_symmetric(1e-9)
            && self.p.eigenvalues_sym()[0] >= -1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub f: Mat2,
    pub h: Mat2,
    pub q: Mat2,
    pub r: Mat2,
    pub p0: Mat2,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            f: Mat2::IDENTITY,
            h: Mat2::IDENTITY,
            // RSRP drifts ~1 dB per report at vehicular speed; the noise floor barely moves.
            q: Mat2::diag(1.0, 0.04),
            r: Mat2::diag(4.0, 4.0),
            p0: Mat2::IDENTITY,
        }
    }
}

/// A priori estimate. Process noise enters through `Q` only.
pub fn predict(state: &KalmanState, params: &KalmanParams) -> KalmanState {
    KalmanState {
        x: params.f * state.x,
        p: params.f * state.p * params.f.transpose() + params.q,
    }
}

/// Kalman gain `P̂·Hᵀ·(H·P̂·Hᵀ + R)⁻¹` for the given prior.
pub fn gain(prior: &KalmanState, params: &KalmanParams) -> Result<Mat2, KalmanError> {
    let ht = params.h.transpose();
    let innovation = params.h * prior.p * ht + params.r;
    let inv = innovation
        .inverse()
        .ok_or(KalmanError::SingularInnovation(innovation.det()))?;
    Ok(prior.p * ht * inv)
}

/// A posteriori estimate from a prior and a measurement.
pub fn update(prior: &KalmanState, z: Vec2, params: &KalmanParams) -> Result<KalmanState, KalmanError> {
    update_with_gain(prior, z, params).map(|(s, _)| s)
}

pub fn update_with_gain(
    prior: &KalmanState,
    z: Vec2,
    params: &KalmanParams,
) -> Result<(KalmanState, Mat2), KalmanError> {
    if !z.is_finite() {
        return Err(KalmanError::NonFiniteMeasurement(z.0[0], z.0[1]));
    }
    let k = gain(prior, params)?;
    let residual = z - params.h * prior.x;
    let x = prior.x + k * residual;
    let p = ((Mat2::IDENTITY - k * params.h) * prior.p).symmetrized();
    Ok((KalmanState { x, p }, k))
}

/// One report's worth of filtering: predict then update.
pub fn step(state: &KalmanState, z: Vec2, params: &KalmanParams) -> Result<KalmanState, KalmanError> {
    update(&predict(state, params), z, params)
}

pub fn step_with_gain(
    state: &KalmanState,
    z: Vec2,
    params: &KalmanParams,
) -> Result<(KalmanState, Mat2), KalmanError> {
    update_with_gain(&predict(state, params), z, params)
}

/// RSRP (dBm) at which the normalized RSRP is 0.5.
pub const RSRP_ANCHOR_DBM: f64 = -90.0;
/// Environment noise (dBm) at which the normalized noise is 0.5.
pub const NOISE_ANCHOR_DBM: f64 = -100.0;
/// dB per unit of sigmoid argument for both normalizations.
pub const NORMALIZATION_SCALE_DB: f64 = 10.0;

pub fn normalize_rsrp(rsrp_dbm: f64) -> f64 {
    sigmoid((rsrp_dbm - RSRP_ANCHOR_DBM) / NORMALIZATION_SCALE_DB)
}

pub fn normalize_env_noise(noise_dbm: f64) -> f64 {
    sigmoid((noise_dbm - NOISE_ANCHOR_DBM) / NORMALIZATION_SCALE_DB)
}

/// Scalar signal quality in (0,1): rises with RSRP, falls with environment noise.
pub fn combine_state(x: Vec2) -> f64 {
    sigmoid(normalize_rsrp(x.0[0]) + (1.0 - normalize_env_noise(x.0[1])) - 1.0)
}

#[derive(Debug, Clone)]
struct Track {
    state: KalmanState,
    last_seen: f64,
}

/// Filter state for every cell one UE reports on. Tracks are created on first
/// mention (seeded with the measurement and `P0`) and dropped after
/// `eviction_s` without mention.
#[derive(Debug, Clone)]
pub struct CellTracks {
    tracks: BTreeMap<CellId, Track>,
    eviction_s: f64,
}

/// Default eviction age for per-cell filter state (s).
pub const TRACK_EVICTION_S: f64 = 10.0;

impl Default for CellTracks {
    fn default() -> Self {
        Self::new(TRACK_EVICTION_S)
    }
}

impl CellTracks {
    pub fn new(eviction_s: f64) -> Self {
        Self {
            tracks: BTreeMap::new(),
            eviction_s,
        }
    }

    /// Filters every entry of `report` and returns the posterior per cell.
    pub fn observe(
        &mut self,
        report: &MeasurementReport,
        params: &KalmanParams,
    ) -> Result<BTreeMap<CellId, KalmanState>, KalmanError> {
        let now = report.timestamp;
        let eviction = self.eviction_s;
        self.tracks.retain(|_, t| now - t.last_seen <= eviction);
        let mut out = BTreeMap::new();
        for entry in report.entries() {
            let z = Vec2::new(entry.rsrp_dbm, report.env_noise_dbm);
            let state = match self.tracks.get(&entry.cell) {
                Some(track) => step(&track.state, z, params)?,
                None => {
                    if !z.is_finite() {
                        return Err(KalmanError::NonFiniteMeasurement(z.0[0], z.0[1]));
                    }
                    KalmanState::new(z, params.p0)
                }
            };
            self.tracks.insert(
                entry.cell,
                Track {
                    state,
                    last_seen: now,
                },
            );
            out.insert(entry.cell, state);
        }
        Ok(out)
    }

    pub fn get(&self, cell: CellId) -> Option<&KalmanState> {
        self.tracks.get(&cell).map(|t| &t.state)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}
