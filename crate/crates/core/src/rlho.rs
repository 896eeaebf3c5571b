//! SARSA Q-values for target-cell ranking and ε-greedy selection of
//! (time-to-trigger, hysteresis) pairs over a per-cell Q-Table.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

use crate::radio_env::{CellId, MeasurementReport};

/// Standard time-to-trigger values (ms).
pub const TTT_VALUES_MS: [u16; 16] = [
    0, 40, 64, 80, 100, 128, 160, 256, 320, 480, 512, 640, 1024, 1280, 2560, 5120,
];
/// Largest hysteresis margin (dB); margins step by 1 dB from 0.
pub const MAX_HYSTERESIS_DB: u8 = 30;
pub const HYSTERESIS_COUNT: usize = MAX_HYSTERESIS_DB as usize + 1;
/// Size of the (TTT, hysteresis) grid.
pub const PAIR_GRID_SIZE: usize = TTT_VALUES_MS.len() * HYSTERESIS_COUNT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("{0} ms is not a standard time-to-trigger value")]
    InvalidTtt(u32),
    #[error("hysteresis {0} dB is outside 0..=30 dB")]
    InvalidHysteresis(u32),
    #[error("epsilon is undefined for draw index 0")]
    ZeroDrawIndex,
    #[error("no filtered state for cell {0}")]
    MissingState(CellId),
    #[error("invalid learning parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ttt(u16);

impl Ttt {
    pub fn from_ms(ms: u32) -> Result<Self, LearningError> {
        TTT_VALUES_MS
            .iter()
            .find(|&&v| u32::from(v) == ms)
            .map(|&v| Ttt(v))
            .ok_or(LearningError::InvalidTtt(ms))
    }

    pub fn ms(self) -> u16 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Ttt> {
        TTT_VALUES_MS.iter().map(|&v| Ttt(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Hysteresis(u8);

impl Hysteresis {
    pub fn from_db(db: u32) -> Result<Self, LearningError> {
        if db <= u32::from(MAX_HYSTERESIS_DB) {
            Ok(Hysteresis(db as u8))
        } else {
            Err(LearningError::InvalidHysteresis(db))
        }
    }

    pub fn db(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }
}

/// A (TTT, hysteresis) pair. Ordering is by TTT then hysteresis, which is also
/// the exploit tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamPair {
    pub ttt: Ttt,
    pub hyst: Hysteresis,
}

impl ParamPair {
    pub fn new(ttt_ms: u32, hyst_db: u32) -> Result<Self, LearningError> {
        Ok(Self {
            ttt: Ttt::from_ms(ttt_ms)?,
            hyst: Hysteresis::from_db(hyst_db)?,
        })
    }

    /// Pair at position `index` of the row-major (TTT, hysteresis) grid.
    pub fn from_grid_index(index: usize) -> Self {
        assert!(index < PAIR_GRID_SIZE, "grid index {index} out of range");
        Self {
            ttt: Ttt(TTT_VALUES_MS[index / HYSTERESIS_COUNT]),
            hyst: Hysteresis((index % HYSTERESIS_COUNT) as u8),
        }
    }

    pub fn grid() -> impl Iterator<Item = ParamPair> {
        (0..PAIR_GRID_SIZE).map(Self::from_grid_index)
    }
}

impl fmt::Display for ParamPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} ms, {} dB)", self.ttt.ms(), self.hyst.db())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Exploration scale `r` of the ε schedule.
    pub r: f64,
    /// Number of TTT plus hysteresis values.
    pub n: u32,
    /// Bounds of the per-cell exploration-only window (s).
    pub t_init_min_s: f64,
    pub t_init_max_s: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.5,
            r: 1.0,
            n: (TTT_VALUES_MS.len() + HYSTERESIS_COUNT) as u32,
            t_init_min_s: 5.0,
            t_init_max_s: 15.0,
        }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<(), LearningError> {
        let bad = |field, reason: String| Err(LearningError::InvalidParam { field, reason });
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", format!("must be in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", format!("must be in [0, 1), got {}", self.gamma));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad("r", format!("must be positive, got {}", self.r));
        }
        if self.n == 0 {
            return bad("n", "must be positive".into());
        }
        if !(self.t_init_min_s >= 0.0 && self.t_init_min_s <= self.t_init_max_s) {
            return bad(
                "t_init_min_s",
                format!(
                    "must satisfy 0 <= t_init_min_s <= t_init_max_s, got {} and {}",
                    self.t_init_min_s, self.t_init_max_s
                ),
            );
        }
        Ok(())
    }

    /// Exploration-only window for one cell, uniform in the configured bounds.
    pub fn draw_t_init<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.t_init_max_s > self.t_init_min_s {
            rng.random_range(self.t_init_min_s..self.t_init_max_s)
        } else {
            self.t_init_min_s
        }
    }
}

/// SARSA update of the serving cell's Q-value toward one neighbor, clamped to [0,1].
pub fn q_final(
    q_init: f64,
    reward_rsrq: f64,
    x_nbr: f64,
    x_srv: f64,
    params: &LearningParams,
) -> f64 {
    let raw = q_init + params.alpha * (reward_rsrq + params.gamma * x_nbr - x_srv);
    raw.clamp(0.0, 1.0)
}

/// RSRQ (dB) at which the normalized reward is 0.5.
pub const RSRQ_ANCHOR_DB: f64 = -12.0;
pub const RSRQ_SCALE_DB: f64 = 4.0;

pub fn normalize_rsrq(rsrq_db: f64) -> f64 {
    sigmoid((rsrq_db - RSRQ_ANCHOR_DB) / RSRQ_SCALE_DB)
}

/// Picks the neighbor whose SARSA Q-value is largest. Each neighbor is scored
/// with its own normalized RSRQ as the reward; ties go to the lower cell id.
pub fn select_target(
    report: &MeasurementReport,
    x_by_cell: &BTreeMap<CellId, f64>,
    q_init: f64,
    params: &LearningParams,
) -> Result<Option<(CellId, f64)>, LearningError> {
    let x_srv = *x_by_cell
        .get(&report.serving.cell)
        .ok_or(LearningError::MissingState(report.serving.cell))?;
    let mut best: Option<(CellId, f64)> = None;
    for nbr in &report.neighbors {
        let x_nbr = *x_by_cell
            .get(&nbr.cell)
            .ok_or(LearningError::MissingState(nbr.cell))?;
        let q = q_final(q_init, normalize_rsrq(nbr.rsrq_db), x_nbr, x_srv, params);
        best = match best {
            Some((cell, bq)) if bq > q || (bq == q && cell < nbr.cell) => Some((cell, bq)),
            _ => Some((nbr.cell, q)),
        };
    }
    Ok(best)
}

/// Exploration probability `min(1, r·N/k²)` for the `k`-th draw (1-based).
pub fn epsilon(k: u64, params: &LearningParams) -> Result<f64, LearningError> {
    if k == 0 {
        return Err(LearningError::ZeroDrawIndex);
    }
    let k = k as f64;
    Ok((params.r * f64::from(params.n) / (k * k)).min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub owner: CellId,
    entries: BTreeMap<ParamPair, f64>,
    /// Number of ε-greedy decisions made so far.
    pub draw_count: u64,
}

impl QTable {
    pub fn new(owner: CellId) -> Self {
        Self {
            owner,
            entries: BTreeMap::new(),
            draw_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pair: &ParamPair) -> Option<f64> {
        self.entries.get(pair).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ParamPair, &f64)> {
        self.entries.iter()
    }

    /// Highest-valued entry; ties resolve to the smaller TTT, then the smaller hysteresis.
    pub fn best(&self) -> Option<(ParamPair, f64)> {
        let mut best: Option<(ParamPair, f64)> = None;
        for (&pair, &q) in &self.entries {
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((pair, q));
            }
        }
        best
    }

    /// Overwrites the Q-value stored for `pair`.
    pub fn update(&mut self, pair: ParamPair, q: f64) {
        debug_assert!((0.0..=1.0).contains(&q), "q {q} outside [0,1]");
        self.entries.insert(pair, q.clamp(0.0, 1.0));
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (pair, q) in &self.entries {
            writeln!(out, "{},{},{},{}", self.owner, pair.ttt.ms(), pair.hyst.db(), q)?;
        }
        Ok(())
    }
}

pub const QTABLE_CSV_HEADER: &str = "cell,ttt_ms,hyst_db,q";

/// Writes several tables into one CSV with the standard header.
pub fn write_qtables_csv<'a, W: Write>(
    tables: impl IntoIterator<Item = &'a QTable>,
    out: &mut W,
) -> io::Result<()> {
    writeln!(out, "{QTABLE_CSV_HEADER}")?;
    for table in tables {
        table.write_csv(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draw {
    Explore,
    Exploit,
}

/// ε-greedy choice of a pair. Exploration-only while `sim_time_s < t_init_s`;
/// afterwards a uniform ν < ε explores the full grid, anything else exploits
/// the table (an empty table explores).
pub fn choose_param_pair<R: Rng + ?Sized>(
    table: &mut QTable,
    params: &LearningParams,
    sim_time_s: f64,
    t_init_s: f64,
    rng: &mut R,
) -> (ParamPair, Draw) {
    table.draw_count += 1;
    let draw = if sim_time_s < t_init_s {
        Draw::Explore
    } else {
        let eps = epsilon(table.draw_count, params).expect("draw_count was just incremented");
        let nu: f64 = rng.random();
        if nu < eps {
            Draw::Explore
        } else {
            Draw::Exploit
        }
    };
    match (draw, table.best()) {
        (Draw::Exploit, Some((pair, _))) => (pair, Draw::Exploit),
        _ => (
            ParamPair::from_grid_index(rng.random_range(0..PAIR_GRID_SIZE)),
            Draw::Explore,
        ),
    }
}

/// Per-cell learning state: the cell's Q-Table plus the Q-value carried
/// across handovers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellQState {
    pub cell: CellId,
    pub q_init: f64,
    pub table: QTable,
}

/// Starting Q-value for a cell with no history.
pub const DEFAULT_Q_INIT: f64 = 0.5;

impl CellQState {
    pub fn new(cell: CellId) -> Self {
        Self {
            cell,
            q_init: DEFAULT_Q_INIT,
            table: QTable::new(cell),
        }
    }

    /// Stores `q` for `pair` and carries it forward as the cell's `q_init`.
    pub fn update_qtable(&mut self, pair: ParamPair, q: f64) {
        self.table.update(pair, q);
        self.q_init = q.clamp(0.0, 1.0);
    }
}
