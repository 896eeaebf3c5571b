//! The learning handover policy: Kalman-filtered signal levels feed SARSA
//! target ranking, and each cell's agent picks (TTT, hysteresis) ε-greedily
//! from its own Q-Table.
//!
//! The chosen pair's Q-value is written when the handover it drove concludes.
//! A success stores the SARSA value of the chosen target; a failure stores the
//! value with zero reward and zero target quality, since nothing was received
//! from the target. Attempts abandoned before the time-to-trigger leave the
//! table untouched.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use crate::engine::{EngineError, HandoverOutcome, HandoverPolicy, HandoverResult, Proposal, SignalView};
use crate::kfe::{combine_state, CellTracks, KalmanParams};
use crate::radio_env::{CellId, MeasurementReport, UeId};
use crate::rlho::{
    choose_param_pair, normalize_rsrq, q_final, select_target, CellQState, Draw, LearningParams, ParamPair, QTable,
};
use crate::rng::{substream, Stream};

/// One cell's learning agent.
#[derive(Debug, Clone)]
pub struct CellAgent {
    pub state: CellQState,
    /// End of the exploration-only window (s).
    pub t_init_s: f64,
    rng: ChaCha8Rng,
}

impl CellAgent {
    pub fn new(cell: CellId, learning: &LearningParams, seed: u64) -> Self {
        let mut rng = substream(seed, Stream::Agent(cell));
        let t_init_s = learning.draw_t_init(&mut rng);
        Self {
            state: CellQState::new(cell),
            t_init_s,
            rng,
        }
    }
}

/// The learning inputs behind a proposal, kept until its outcome is known.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingUpdate {
    cell: CellId,
    target: CellId,
    pair: ParamPair,
    reward: f64,
    x_nbr: f64,
    x_srv: f64,
}

#[derive(Debug, Clone)]
pub struct Lim2Policy {
    kalman: KalmanParams,
    learning: LearningParams,
    tracks: BTreeMap<UeId, CellTracks>,
    agents: BTreeMap<CellId, CellAgent>,
    disabled: BTreeSet<CellId>,
    /// Normalized filter output of the UE whose report was observed last.
    last_x: BTreeMap<CellId, f64>,
    last_ue: Option<UeId>,
    pending: BTreeMap<UeId, PendingUpdate>,
}

impl Lim2Policy {
    pub fn new(cells: impl IntoIterator<Item = CellId>, kalman: KalmanParams, learning: LearningParams, seed: u64) -> Self {
        let agents = cells
            .into_iter()
            .map(|c| (c, CellAgent::new(c, &learning, seed)))
            .collect();
        Self {
            kalman,
            learning,
            tracks: BTreeMap::new(),
            agents,
            disabled: BTreeSet::new(),
            last_x: BTreeMap::new(),
            last_ue: None,
            pending: BTreeMap::new(),
        }
    }

    /// Agents in these cells never propose a handover.
    pub fn with_disabled_cells(mut self, cells: impl IntoIterator<Item = CellId>) -> Self {
        self.disabled.extend(cells);
        self
    }

    pub fn agent(&self, cell: CellId) -> Option<&CellAgent> {
        self.agents.get(&cell)
    }

    pub fn agents(&self) -> impl Iterator<Item = &CellAgent> {
        self.agents.values()
    }
}

impl HandoverPolicy for Lim2Policy {
    fn name(&self) -> &'static str {
        "lim2"
    }

    fn observe(&mut self, report: &MeasurementReport) -> Result<SignalView, EngineError> {
        let posterior = self
            .tracks
            .entry(report.ue)
            .or_default()
            .observe(report, &self.kalman)?;
        self.last_x = posterior
            .iter()
            .map(|(&cell, s)| (cell, combine_state(s.x)))
            .collect();
        self.last_ue = Some(report.ue);
        Ok(posterior.iter().map(|(&cell, s)| (cell, s.rsrp_dbm())).collect())
    }

    fn propose(
        &mut self,
        report: &MeasurementReport,
        _view: &SignalView,
        now: f64,
    ) -> Result<Option<Proposal>, EngineError> {
        debug_assert_eq!(self.last_ue, Some(report.ue), "propose must follow observe");
        let serving = report.serving.cell;
        if self.disabled.contains(&serving) {
            return Ok(None);
        }
        let Some(agent) = self.agents.get_mut(&serving) else {
            return Ok(None);
        };
        let Some((target, _)) = select_target(report, &self.last_x, agent.state.q_init, &self.learning)? else {
            return Ok(None);
        };
        let (pair, draw) = choose_param_pair(
            &mut agent.state.table,
            &self.learning,
            now,
            agent.t_init_s,
            &mut agent.rng,
        );
        let reward = report.entry(target).map_or(0.0, |e| normalize_rsrq(e.rsrq_db));
        self.pending.insert(
            report.ue,
            PendingUpdate {
                cell: serving,
                target,
                pair,
                reward,
                x_nbr: self.last_x[&target],
                x_srv: self.last_x[&serving],
            },
        );
        Ok(Some(Proposal {
            target,
            pair,
            explored: draw == Draw::Explore,
        }))
    }

    fn on_outcome(&mut self, outcome: &HandoverOutcome) {
        let Some(p) = self.pending.remove(&outcome.ue) else {
            return;
        };
        if p.cell != outcome.source || p.target != outcome.target || p.pair != outcome.pair {
            return;
        }
        let Some(agent) = self.agents.get_mut(&p.cell) else {
            return;
        };
        let (reward, x_nbr) = match outcome.result {
            HandoverResult::Success => (p.reward, p.x_nbr),
            HandoverResult::Failure => (0.0, 0.0),
        };
        let q = q_final(agent.state.q_init, reward, x_nbr, p.x_srv, &self.learning);
        agent.state.update_qtable(p.pair, q);
    }

    fn q_tables(&self) -> Vec<QTable> {
        self.agents.values().map(|a| a.state.table.clone()).collect()
    }
}
