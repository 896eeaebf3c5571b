//! Fixed-parameter comparison policies working on raw measured RSRP.

use crate::engine::{EngineError, HandoverPolicy, Proposal, SignalView};
use crate::radio_env::{CellId, MeasurementReport};
use crate::rlho::{LearningError, ParamPair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPolicyParams {
    pub ttt_ms: u32,
    pub hyst_db: u32,
}

impl Default for FixedPolicyParams {
    fn default() -> Self {
        Self {
            ttt_ms: 256,
            hyst_db: 3,
        }
    }
}

impl FixedPolicyParams {
    pub fn pair(&self) -> Result<ParamPair, LearningError> {
        ParamPair::new(self.ttt_ms, self.hyst_db)
    }
}

/// Strongest measured neighbor, lower cell id on ties.
fn strongest_neighbor(report: &MeasurementReport) -> Option<CellId> {
    report
        .neighbors
        .iter()
        .min_by(|a, b| {
            b.rsrp_dbm
                .total_cmp(&a.rsrp_dbm)
                .then_with(|| a.cell.cmp(&b.cell))
        })
        .map(|e| e.cell)
}

pub fn fixed_a3_decide(report: &MeasurementReport, pair: ParamPair) -> Option<(CellId, ParamPair)> {
    strongest_neighbor(report).map(|cell| (cell, pair))
}

pub fn greedy_rsrp_decide(report: &MeasurementReport) -> Option<(CellId, ParamPair)> {
    let zero = ParamPair::new(0, 0).expect("0 ms / 0 dB is on the grid");
    strongest_neighbor(report).map(|cell| (cell, zero))
}

fn measured_view(report: &MeasurementReport) -> SignalView {
    report.entries().map(|e| (e.cell, e.rsrp_dbm)).collect()
}

/// Standard A3 with a static TTT and hysteresis.
#[derive(Debug, Clone)]
pub struct FixedA3Policy {
    pair: ParamPair,
}

impl FixedA3Policy {
    pub fn new(params: FixedPolicyParams) -> Result<Self, LearningError> {
        Ok(Self {
            pair: params.pair()?,
        })
    }

    pub fn pair(&self) -> ParamPair {
        self.pair
    }
}

impl HandoverPolicy for FixedA3Policy {
    fn name(&self) -> &'static str {
        "fixed_a3"
    }

    fn observe(&mut self, report: &MeasurementReport) -> Result<SignalView, EngineError> {
        Ok(measured_view(report))
    }

    fn propose(
        &mut self,
        report: &MeasurementReport,
        _view: &SignalView,
        _now: f64,
    ) -> Result<Option<Proposal>, EngineError> {
        Ok(fixed_a3_decide(report, self.pair).map(|(target, pair)| Proposal {
            target,
            pair,
            explored: false,
        }))
    }
}

/// Myopic max-RSRP with zero TTT and zero hysteresis.
#[derive(Debug, Clone, Default)]
pub struct GreedyRsrpPolicy;

impl HandoverPolicy for GreedyRsrpPolicy {
    fn name(&self) -> &'static str {
        "greedy_rsrp"
    }

    fn observe(&mut self, report: &MeasurementReport) -> Result<SignalView, EngineError> {
        Ok(measured_view(report))
    }

    fn propose(
        &mut self,
        report: &MeasurementReport,
        _view: &SignalView,
        _now: f64,
    ) -> Result<Option<Proposal>, EngineError> {
        Ok(greedy_rsrp_decide(report).map(|(target, pair)| Proposal {
            target,
            pair,
            explored: false,
        }))
    }
}
