//! Per-UE handover state machine: trigger check, time-to-trigger timing,
//! decision and execution with failure and ping-pong accounting.

use std::collections::BTreeMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::kfe::KalmanError;
use crate::radio_env::{CellId, MeasurementReport, UeId};
use crate::rlho::{LearningError, ParamPair, QTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("report for UE {report} routed to context of UE {context}")]
    UeMismatch { context: UeId, report: UeId },
    #[error("policy proposed target cell {0} which is not in the measurement report")]
    UnknownTarget(CellId),
    #[error("complete_handover called while UE {0} is not executing a handover")]
    NotExecuting(UeId),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Learning(#[from] LearningError),
}

/// Measurement-event predicates. Thresholds are dBm, offsets dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerEvent {
    /// Serving better than a threshold.
    A1 { threshold: f64 },
    /// Serving worse than a threshold.
    A2 { threshold: f64 },
    /// Neighbor better than serving by an offset.
    A3 { offset: f64 },
    /// Neighbor better than a threshold.
    A4 { threshold: f64 },
    /// Serving worse than `serving_threshold` and neighbor better than `neighbor_threshold`.
    A5 {
        serving_threshold: f64,
        neighbor_threshold: f64,
    },
}

pub fn evaluate_trigger(event: TriggerEvent, serving: f64, neighbor: f64) -> bool {
    match event {
        TriggerEvent::A1 { threshold } => serving > threshold,
        TriggerEvent::A2 { threshold } => serving < threshold,
        TriggerEvent::A3 { offset } => neighbor > serving + offset,
        TriggerEvent::A4 { threshold } => neighbor > threshold,
        TriggerEvent::A5 {
            serving_threshold,
            neighbor_threshold,
        } => serving < serving_threshold && neighbor > neighbor_threshold,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Interruption window between the handover command and attachment to the target.
    pub exec_latency_s: f64,
    /// Signaling delay between the decision and the start of execution.
    pub decision_delay_s: f64,
    pub ping_pong_window_s: f64,
    /// Serving SINR below this during execution fails the handover.
    pub q_out_db: f64,
    /// Target RSRP below this at completion fails the handover.
    pub min_access_dbm: f64,
    /// Offset of the A3 entry event that makes the serving cell consult its policy.
    pub trigger_offset_db: f64,
    /// Outage after a failed handover or radio link failure.
    pub reestablish_s: f64,
    /// Serving SINR must stay below `q_out_db` this long outside execution to declare RLF.
    pub rlf_timer_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            exec_latency_s: 0.05,
            decision_delay_s: 0.04,
            ping_pong_window_s: 1.0,
            q_out_db: -8.0,
            min_access_dbm: -120.0,
            trigger_offset_db: 0.0,
            reestablish_s: 0.2,
            rlf_timer_s: 0.5,
        }
    }
}

/// Per-cell signal levels (dBm) a policy wants the trigger evaluated on.
pub type SignalView = BTreeMap<CellId, f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub target: CellId,
    pub pair: ParamPair,
    pub explored: bool,
}

/// A handover decision rule. The engine calls `observe` on every report and
/// `propose` only while the UE has no handover in progress and the entry
/// event holds.
pub trait HandoverPolicy: Send {
    fn name(&self) -> &'static str;

    fn observe(&mut self, report: &MeasurementReport) -> Result<SignalView, EngineError>;

    fn propose(
        &mut self,
        report: &MeasurementReport,
        view: &SignalView,
        now: f64,
    ) -> Result<Option<Proposal>, EngineError>;

    fn on_outcome(&mut self, _outcome: &HandoverOutcome) {}

    /// Learned tables, for policies that keep any.
    fn q_tables(&self) -> Vec<QTable> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Timing,
    Executing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandoverContext {
    pub ue: UeId,
    pub phase: Phase,
    pub target: Option<CellId>,
    pub pair: Option<ParamPair>,
    pub explored: bool,
    /// Continuous trigger satisfaction so far (ms).
    pub ttt_elapsed_ms: f64,
    pub timing_start: f64,
    pub source: Option<CellId>,
    pub decision_time: f64,
    pub interrupt_start: f64,
    pub exec_deadline: f64,
    /// Worst serving SINR observed since the decision.
    pub min_serving_sinr_db: f64,
    /// Source cell of the last successful handover.
    pub last_serving: Option<CellId>,
    pub last_ho_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandoverDecision {
    pub ue: UeId,
    pub source: CellId,
    pub target: CellId,
    pub pair: ParamPair,
    pub decision_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandoverResult {
    Success,
    Failure,
}

impl HandoverResult {
    pub fn as_str(self) -> &'static str {
        match self {
            HandoverResult::Success => "success",
            HandoverResult::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandoverOutcome {
    pub ue: UeId,
    pub source: CellId,
    pub target: CellId,
    pub pair: ParamPair,
    pub explored: bool,
    pub decision_time: f64,
    /// When data flows again: attachment to the target, or the end of re-establishment.
    pub complete_time: f64,
    pub latency_s: f64,
    pub result: HandoverResult,
    pub ping_pong: bool,
}

/// Whole-microsecond difference between two timestamps given in seconds.
fn elapsed_us(from: f64, to: f64) -> i64 {
    ((to - from) * 1e6).round() as i64
}

impl HandoverContext {
    pub fn new(ue: UeId) -> Self {
        Self {
            ue,
            phase: Phase::Idle,
            target: None,
            pair: None,
            explored: false,
            ttt_elapsed_ms: 0.0,
            timing_start: 0.0,
            source: None,
            decision_time: 0.0,
            interrupt_start: 0.0,
            exec_deadline: 0.0,
            min_serving_sinr_db: f64::INFINITY,
            last_serving: None,
            last_ho_time: None,
        }
    }

    /// Drops any timing or execution in progress, keeping the handover history.
    pub fn reset(&mut self) {
        self.phase = Phase::Idle;
        self.target = None;
        self.pair = None;
        self.explored = false;
        self.ttt_elapsed_ms = 0.0;
        self.source = None;
        self.min_serving_sinr_db = f64::INFINITY;
    }

    pub fn is_executing(&self) -> bool {
        self.phase == Phase::Executing
    }

    /// True while the data path is interrupted by execution.
    pub fn is_interrupted(&self, now: f64) -> bool {
        self.phase == Phase::Executing && elapsed_us(self.interrupt_start, now) >= 0
    }

    pub fn is_due(&self, now: f64) -> bool {
        self.phase == Phase::Executing && elapsed_us(self.exec_deadline, now) >= 0
    }

    pub fn observe_serving_sinr(&mut self, sinr_db: f64) {
        if self.phase == Phase::Executing {
            self.min_serving_sinr_db = self.min_serving_sinr_db.min(sinr_db);
        }
    }

    fn decide(&mut self, serving: CellId, now: f64, cfg: &EngineConfig) -> HandoverDecision {
        let target = self.target.expect("timing implies a target");
        let pair = self.pair.expect("timing implies a pair");
        self.phase = Phase::Executing;
        self.source = Some(serving);
        self.decision_time = now;
        self.interrupt_start = now + cfg.decision_delay_s;
        self.exec_deadline = self.interrupt_start + cfg.exec_latency_s;
        self.min_serving_sinr_db = f64::INFINITY;
        HandoverDecision {
            ue: self.ue,
            source: serving,
            target,
            pair,
            decision_time: now,
        }
    }

    /// Advances the timer on a satisfied trigger; returns whether the TTT is met.
    fn accumulate(&mut self, now: f64) -> bool {
        let pair = self.pair.expect("timing implies a pair");
        let us = elapsed_us(self.timing_start, now);
        self.ttt_elapsed_ms = (us as f64 / 1e3).min(f64::from(pair.ttt.ms()));
        us >= i64::from(pair.ttt.ms()) * 1000
    }
}

fn a3_holds(view: &SignalView, serving: CellId, target: CellId, pair: ParamPair) -> bool {
    match (view.get(&serving), view.get(&target)) {
        (Some(&s), Some(&t)) => evaluate_trigger(TriggerEvent::A3 { offset: pair.hyst.as_f64() }, s, t),
        _ => false,
    }
}

fn entry_event_holds(report: &MeasurementReport, view: &SignalView, offset: f64) -> bool {
    let Some(&serving) = view.get(&report.serving.cell) else {
        return false;
    };
    report
        .neighbors
        .iter()
        .filter_map(|n| view.get(&n.cell))
        .any(|&level| evaluate_trigger(TriggerEvent::A3 { offset }, serving, level))
}

/// Runs one report through the policy and the TTT timer. Returns the decision
/// when this report completes the time-to-trigger.
pub fn on_measurement_report(
    ctx: &mut HandoverContext,
    report: &MeasurementReport,
    policy: &mut dyn HandoverPolicy,
    now: f64,
    cfg: &EngineConfig,
) -> Result<Option<HandoverDecision>, EngineError> {
    if report.ue != ctx.ue {
        return Err(EngineError::UeMismatch {
            context: ctx.ue,
            report: report.ue,
        });
    }
    let view = policy.observe(report)?;
    let serving = report.serving.cell;
    match ctx.phase {
        Phase::Executing => return Ok(None),
        Phase::Timing => {
            let target = ctx.target.expect("timing implies a target");
            let pair = ctx.pair.expect("timing implies a pair");
            if a3_holds(&view, serving, target, pair) {
                if ctx.accumulate(now) {
                    return Ok(Some(ctx.decide(serving, now, cfg)));
                }
                return Ok(None);
            }
            // Any violation restarts the timer; the same report may start a new attempt.
            ctx.reset();
        }
        Phase::Idle => {}
    }

    if report.neighbors.is_empty() || !entry_event_holds(report, &view, cfg.trigger_offset_db) {
        return Ok(None);
    }
    let Some(proposal) = policy.propose(report, &view, now)? else {
        return Ok(None);
    };
    if proposal.target == serving || report.entry(proposal.target).is_none() {
        return Err(EngineError::UnknownTarget(proposal.target));
    }
    if !a3_holds(&view, serving, proposal.target, proposal.pair) {
        return Ok(None);
    }
    ctx.phase = Phase::Timing;
    ctx.target = Some(proposal.target);
    ctx.pair = Some(proposal.pair);
    ctx.explored = proposal.explored;
    ctx.timing_start = now;
    ctx.ttt_elapsed_ms = 0.0;
    if ctx.accumulate(now) {
        return Ok(Some(ctx.decide(serving, now, cfg)));
    }
    Ok(None)
}

/// Finishes the execution phase. Fails on an execution-window SINR dip below
/// `q_out_db` or a target RSRP below `min_access_dbm` at completion.
pub fn complete_handover(
    ctx: &mut HandoverContext,
    now: f64,
    target_true_rsrp_dbm: f64,
    cfg: &EngineConfig,
) -> Result<HandoverOutcome, EngineError> {
    if ctx.phase != Phase::Executing {
        return Err(EngineError::NotExecuting(ctx.ue));
    }
    let source = ctx.source.expect("executing implies a source");
    let target = ctx.target.expect("executing implies a target");
    let pair = ctx.pair.expect("executing implies a pair");
    let failed =
        ctx.min_serving_sinr_db < cfg.q_out_db || target_true_rsrp_dbm < cfg.min_access_dbm;
    let result = if failed {
        HandoverResult::Failure
    } else {
        HandoverResult::Success
    };
    let complete_time = match result {
        HandoverResult::Success => now,
        HandoverResult::Failure => now + cfg.reestablish_s,
    };
    let ping_pong = result == HandoverResult::Success
        && ctx.last_serving == Some(target)
        && ctx
            .last_ho_time
            .is_some_and(|t| now - t < cfg.ping_pong_window_s);
    let outcome = HandoverOutcome {
        ue: ctx.ue,
        source,
        target,
        pair,
        explored: ctx.explored,
        decision_time: ctx.decision_time,
        complete_time,
        latency_s: complete_time - ctx.decision_time,
        result,
        ping_pong,
    };
    if result == HandoverResult::Success {
        ctx.last_serving = Some(source);
        ctx.last_ho_time = Some(now);
    }
    ctx.reset();
    Ok(outcome)
}

pub const EVENT_LOG_HEADER: &str = "time,ue,source,target,ttt,hyst,result,latency,ping_pong";

/// One event-log line: decision time (s), ids, pair, result, latency (ms), ping-pong flag.
pub fn write_event_line<W: Write>(out: &mut W, o: &HandoverOutcome) -> io::Result<()> {
    writeln!(
        out,
        "{:.6},{},{},{},{},{},{},{:.3},{}",
        o.decision_time,
        o.ue,
        o.source,
        o.target,
        o.pair.ttt.ms(),
        o.pair.hyst.db(),
        o.result.as_str(),
        o.latency_s * 1e3,
        u8::from(o.ping_pong)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio_env::MeasurementEntry;

    /// Uses the report's RSRP verbatim and always proposes the strongest neighbor.
    struct Scripted {
        pair: ParamPair,
    }

    impl HandoverPolicy for Scripted {
        fn name(&self) -> &'static str {
            "scripted"
        }
        fn observe(&mut self, report: &MeasurementReport) -> Result<SignalView, EngineError> {
            Ok(report.entries().map(|e| (e.cell, e.rsrp_dbm)).collect())
        }
        fn propose(&mut self, report: &MeasurementReport, _: &SignalView, _: f64) -> Result<Option<Proposal>, EngineError> {
            Ok(report.neighbors.first().map(|n| Proposal {
                target: n.cell,
                pair: self.pair,
                explored: false,
            }))
        }
    }

    fn report(t: f64, serving: f64, neighbor: f64) -> MeasurementReport {
        MeasurementReport {
            ue: UeId(1),
            timestamp: t,
            serving: MeasurementEntry { cell: CellId(0), rsrp_dbm: serving, rsrq_db: -12.0 },
            neighbors: vec![MeasurementEntry { cell: CellId(1), rsrp_dbm: neighbor, rsrq_db: -12.0 }],
            env_noise_dbm: -100.0,
        }
    }

    #[test]
    fn trigger_predicates() {
        assert!(!evaluate_trigger(TriggerEvent::A3 { offset: 3.0 }, -90.0, -87.0));
        assert!(evaluate_trigger(TriggerEvent::A3 { offset: 0.0 }, -90.0, -89.9));
        assert!(evaluate_trigger(
            TriggerEvent::A5 { serving_threshold: -100.0, neighbor_threshold: -95.0 },
            -101.0,
            -94.0
        ));
        assert!(!evaluate_trigger(
            TriggerEvent::A5 { serving_threshold: -100.0, neighbor_threshold: -95.0 },
            -99.0,
            -94.0
        ));
        assert!(evaluate_trigger(TriggerEvent::A1 { threshold: -100.0 }, -99.0, 0.0));
        assert!(evaluate_trigger(TriggerEvent::A2 { threshold: -100.0 }, -101.0, 0.0));
        assert!(evaluate_trigger(TriggerEvent::A4 { threshold: -100.0 }, 0.0, -99.0));
        assert!(!evaluate_trigger(TriggerEvent::A4 { threshold: -100.0 }, 0.0, -100.0));
    }

    #[test]
    fn zero_ttt_decides_on_first_report() {
        let mut policy = Scripted { pair: ParamPair::new(0, 0).unwrap() };
        let mut ctx = HandoverContext::new(UeId(1));
        let cfg = EngineConfig::default();
        let d = on_measurement_report(&mut ctx, &report(0.0, -90.0, -85.0), &mut policy, 0.0, &cfg).unwrap();
        assert_eq!(d.unwrap().target, CellId(1));
        assert_eq!(ctx.phase, Phase::Executing);
    }

    #[test]
    fn violation_restarts_timer() {
        let mut policy = Scripted { pair: ParamPair::new(256, 0).unwrap() };
        let mut ctx = HandoverContext::new(UeId(1));
        let cfg = EngineConfig::default();
        let period = 0.04;
        let mut decided_at = None;
        // true for 0..=200 ms, false at 240 ms, true from 280 ms on
        for k in 0..40 {
            let t = k as f64 * period;
            let good = k != 6;
            let r = report(t, -90.0, if good { -85.0 } else { -95.0 });
            if on_measurement_report(&mut ctx, &r, &mut policy, t, &cfg).unwrap().is_some() {
                decided_at = Some(k);
                break;
            }
        }
        // restart at k=7 (280 ms); first report >= 280+256 ms is k=14 (560 ms)
        assert_eq!(decided_at, Some(14));
    }

    #[test]
    fn never_true_stays_idle() {
        let mut policy = Scripted { pair: ParamPair::new(0, 3).unwrap() };
        let mut ctx = HandoverContext::new(UeId(1));
        let cfg = EngineConfig::default();
        for k in 0..100 {
            let t = k as f64 * 0.04;
            assert!(on_measurement_report(&mut ctx, &report(t, -90.0, -88.0), &mut policy, t, &cfg)
                .unwrap()
                .is_none());
            assert_eq!(ctx.phase, Phase::Idle);
            assert_eq!(ctx.ttt_elapsed_ms, 0.0);
        }
    }

    #[test]
    fn mismatched_ue_and_unknown_target_are_errors() {
        struct Bad;
        impl HandoverPolicy for Bad {
            fn name(&self) -> &'static str {
                "bad"
            }
            fn observe(&mut self, r: &MeasurementReport) -> Result<SignalView, EngineError> {
                Ok(r.entries().map(|e| (e.cell, e.rsrp_dbm)).collect())
            }
            fn propose(&mut self, _: &MeasurementReport, _: &SignalView, _: f64) -> Result<Option<Proposal>, EngineError> {
                Ok(Some(Proposal { target: CellId(77), pair: ParamPair::new(0, 0).unwrap(), explored: false }))
            }
        }
        let cfg = EngineConfig::default();
        let mut ctx = HandoverContext::new(UeId(2));
        assert!(matches!(
            on_measurement_report(&mut ctx, &report(0.0, -90.0, -80.0), &mut Bad, 0.0, &cfg),
            Err(EngineError::UeMismatch { .. })
        ));
        let mut ctx = HandoverContext::new(UeId(1));
        assert_eq!(
            on_measurement_report(&mut ctx, &report(0.0, -90.0, -80.0), &mut Bad, 0.0, &cfg),
            Err(EngineError::UnknownTarget(CellId(77)))
        );
    }

    fn executing(ctx: &mut HandoverContext, source: u32, target: u32, t: f64, cfg: &EngineConfig) {
        ctx.phase = Phase::Timing;
        ctx.target = Some(CellId(target));
        ctx.pair = Some(ParamPair::new(0, 0).unwrap());
        ctx.decide(CellId(source), t, cfg);
    }

    #[test]
    fn completion_rules() {
        let cfg = EngineConfig::default();
        let mut ctx = HandoverContext::new(UeId(1));
        assert_eq!(complete_handover(&mut ctx, 0.0, -90.0, &cfg), Err(EngineError::NotExecuting(UeId(1))));

        executing(&mut ctx, 0, 1, 1.0, &cfg);
        ctx.observe_serving_sinr(-2.0);
        let done = ctx.exec_deadline;
        let o = complete_handover(&mut ctx, done, -100.0, &cfg).unwrap();
        assert_eq!(o.result, HandoverResult::Success);
        assert!(!o.ping_pong);
        assert!((o.latency_s - 0.09).abs() < 1e-12);

        // reciprocal handover 400 ms later
        executing(&mut ctx, 1, 0, done + 0.31, &cfg);
        let o2 = complete_handover(&mut ctx, done + 0.4, -100.0, &cfg).unwrap();
        assert!(o2.ping_pong);

        // coverage hole at the target
        executing(&mut ctx, 0, 1, 5.0, &cfg);
        let o3 = complete_handover(&mut ctx, 5.09, cfg.min_access_dbm - 1.0, &cfg).unwrap();
        assert_eq!(o3.result, HandoverResult::Failure);
        assert!(!o3.ping_pong);
        assert!((o3.latency_s - (0.09 + cfg.reestablish_s)).abs() < 1e-12);

        // serving SINR dip during execution
        executing(&mut ctx, 0, 1, 7.0, &cfg);
        ctx.observe_serving_sinr(cfg.q_out_db - 0.5);
        assert_eq!(complete_handover(&mut ctx, 7.09, -90.0, &cfg).unwrap().result, HandoverResult::Failure);
    }

    #[test]
    fn event_line_format() {
        let o = HandoverOutcome {
            ue: UeId(3),
            source: CellId(0),
            target: CellId(1),
            pair: ParamPair::new(256, 3).unwrap(),
            explored: false,
            decision_time: 1.24,
            complete_time: 1.33,
            latency_s: 0.09,
            result: HandoverResult::Success,
            ping_pong: false,
        };
        let mut buf = Vec::new();
        write_event_line(&mut buf, &o).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.240000,3,0,1,256,3,success,90.000,0\n");
    }
}
