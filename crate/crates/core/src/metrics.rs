//! KPI proxies and per-run aggregation: throughput, packet loss, packet delay,
//! handover latency/failure/ping-pong, block errors, CDFs and CSV export.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::engine::{HandoverOutcome, HandoverResult};
use crate::radio_env::dbm_to_mw;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficParams {
    /// Fraction of Shannon capacity delivered to the user.
    pub utilization: f64,
    /// Residual bit-error figure. A packet that clears the demodulation
    /// threshold is still lost with probability BER (one transport block per
    /// packet, the BER read as its residual block error).
    pub ber: f64,
    pub demod_threshold_db: f64,
    pub packet_bits: f64,
    pub core_delay_ms: f64,
    /// Width of one PLR-series bucket (s).
    pub plr_bucket_s: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            utilization: 0.6,
            ber: 0.03,
            demod_threshold_db: -5.0,
            packet_bits: 12_000.0,
            core_delay_ms: 2.0,
            plr_bucket_s: 1.0,
        }
    }
}

/// Shannon-bound throughput in bits/s; zero when the data path is down.
pub fn throughput_proxy(sinr_db: f64, bandwidth_hz: f64, attached: bool, traffic: &TrafficParams) -> f64 {
    if !attached {
        return 0.0;
    }
    bandwidth_hz * (1.0 + dbm_to_mw(sinr_db)).log2() * traffic.utilization
}

/// Packet loss probability after a packet reaches the demodulator.
pub fn plr_floor(traffic: &TrafficParams) -> f64 {
    traffic.ber
}

pub fn plr_proxy(sinr_db: f64, attached: bool, traffic: &TrafficParams) -> f64 {
    if !attached || !(sinr_db >= traffic.demod_threshold_db) {
        1.0
    } else {
        plr_floor(traffic)
    }
}

/// Block error indicator for one attached sample.
pub fn bler_proxy(sinr_db: f64, traffic: &TrafficParams) -> f64 {
    if sinr_db < traffic.demod_threshold_db {
        1.0
    } else {
        traffic.ber
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KpiRecord {
    pub mean_throughput_mbps: f64,
    pub plr: f64,
    pub mean_packet_delay_ms: f64,
    pub mean_ho_latency_ms: f64,
    pub ho_failure_rate: f64,
    pub ping_pong_rate: f64,
    /// Successful handovers per UE-second.
    pub cell_crossing_rate: f64,
    pub bler: f64,
    pub decisions: u64,
    pub successes: u64,
    pub failures: u64,
    pub ping_pongs: u64,
    pub radio_link_failures: u64,
    /// PLR per bucket of `TrafficParams::plr_bucket_s`.
    pub plr_series: Vec<f64>,
}

/// Scalar KPI columns, in CSV order.
pub const KPI_COLUMNS: [(&str, fn(&KpiRecord) -> f64); 13] = [
    ("mean_throughput_mbps", |k| k.mean_throughput_mbps),
    ("plr", |k| k.plr),
    ("mean_packet_delay_ms", |k| k.mean_packet_delay_ms),
    ("mean_ho_latency_ms", |k| k.mean_ho_latency_ms),
    ("ho_failure_rate", |k| k.ho_failure_rate),
    ("ping_pong_rate", |k| k.ping_pong_rate),
    ("cell_crossing_rate", |k| k.cell_crossing_rate),
    ("bler", |k| k.bler),
    ("decisions", |k| k.decisions as f64),
    ("successes", |k| k.successes as f64),
    ("failures", |k| k.failures as f64),
    ("ping_pongs", |k| k.ping_pongs as f64),
    ("radio_link_failures", |k| k.radio_link_failures as f64),
];

/// Packets held at the network while a handover interrupts the data path.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PendingTraffic {
    weight: f64,
    weighted_start: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Bucket {
    lost: f64,
    sent: f64,
}

/// Running sums over one run. Traffic is time-weighted: each UE offers one
/// unit of packets per second, so the step size cancels out of every ratio.
#[derive(Debug, Clone)]
pub struct KpiAccumulator {
    traffic: TrafficParams,
    ue_time: f64,
    bits: f64,
    sent: f64,
    lost: f64,
    delivered: f64,
    delay_sum: f64,
    bler_sum: f64,
    bler_time: f64,
    decisions: u64,
    successes: u64,
    failures: u64,
    ping_pongs: u64,
    rlfs: u64,
    latency_sum: f64,
    buckets: Vec<Bucket>,
}

impl KpiAccumulator {
    pub fn new(traffic: TrafficParams) -> Self {
        Self {
            traffic,
            ue_time: 0.0,
            bits: 0.0,
            sent: 0.0,
            lost: 0.0,
            delivered: 0.0,
            delay_sum: 0.0,
            bler_sum: 0.0,
            bler_time: 0.0,
            decisions: 0,
            successes: 0,
            failures: 0,
            ping_pongs: 0,
            rlfs: 0,
            latency_sum: 0.0,
            buckets: Vec::new(),
        }
    }

    pub fn traffic(&self) -> &TrafficParams {
        &self.traffic
    }

    fn bucket(&mut self, t: f64) -> &mut Bucket {
        let idx = (t / self.traffic.plr_bucket_s).floor().max(0.0) as usize;
        if self.buckets.len() <= idx {
            self.buckets.resize(idx + 1, Bucket::default());
        }
        &mut self.buckets[idx]
    }

    fn account(&mut self, t: f64, sent: f64, lost: f64) {
        self.sent += sent;
        self.lost += lost;
        let b = self.bucket(t);
        b.sent += sent;
        b.lost += lost;
    }

    /// Data flowing over a link with the given SINR.
    pub fn record_connected(&mut self, t: f64, dt: f64, sinr_db: f64, bandwidth_hz: f64) {
        let thr = throughput_proxy(sinr_db, bandwidth_hz, true, &self.traffic);
        let p = plr_proxy(sinr_db, true, &self.traffic);
        self.ue_time += dt;
        self.bits += thr * dt;
        self.account(t, dt, p * dt);
        if p < 1.0 && thr > 0.0 {
            let w = (1.0 - p) * dt;
            self.delivered += w;
            self.delay_sum += w * (self.traffic.core_delay_ms * 1e-3 + self.traffic.packet_bits / thr);
        }
        self.bler_sum += bler_proxy(sinr_db, &self.traffic) * dt;
        self.bler_time += dt;
    }

    /// No serving link at all (re-establishment): everything offered is lost.
    pub fn record_detached(&mut self, t: f64, dt: f64) {
        self.ue_time += dt;
        self.account(t, dt, dt);
    }

    /// Handover interruption: packets are held until the outcome is known.
    pub fn record_interrupted(&mut self, pending: &mut PendingTraffic, t: f64, dt: f64) {
        self.ue_time += dt;
        pending.weight += dt;
        pending.weighted_start += t * dt;
    }

    /// Releases held packets at `t`: delivered late on success, lost on failure.
    pub fn resolve_pending(&mut self, pending: &mut PendingTraffic, t: f64, delivered: bool) {
        let w = pending.weight;
        if w > 0.0 {
            if delivered {
                self.account(t, w, 0.0);
                self.delivered += w;
                let wait = w * t - pending.weighted_start;
                self.delay_sum += wait + w * self.traffic.core_delay_ms * 1e-3;
            } else {
                self.account(t, w, w);
            }
        }
        *pending = PendingTraffic::default();
    }

    pub fn record_decision(&mut self) {
        self.decisions += 1;
    }

    pub fn record_outcome(&mut self, outcome: &HandoverOutcome) {
        match outcome.result {
            HandoverResult::Success => self.successes += 1,
            HandoverResult::Failure => self.failures += 1,
        }
        if outcome.ping_pong {
            self.ping_pongs += 1;
        }
        self.latency_sum += outcome.latency_s;
    }

    pub fn record_radio_link_failure(&mut self) {
        self.rlfs += 1;
    }

    pub fn finish(&self) -> KpiRecord {
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let completed = self.successes + self.failures;
        KpiRecord {
            mean_throughput_mbps: ratio(self.bits, self.ue_time) / 1e6,
            plr: ratio(self.lost, self.sent),
            mean_packet_delay_ms: ratio(self.delay_sum, self.delivered) * 1e3,
            mean_ho_latency_ms: ratio(self.latency_sum, completed as f64) * 1e3,
            ho_failure_rate: ratio(self.failures as f64, completed as f64),
            ping_pong_rate: ratio(self.ping_pongs as f64, self.successes as f64),
            cell_crossing_rate: ratio(self.successes as f64, self.ue_time),
            bler: ratio(self.bler_sum, self.bler_time),
            decisions: self.decisions,
            successes: self.successes,
            failures: self.failures,
            ping_pongs: self.ping_pongs,
            radio_link_failures: self.rlfs,
            plr_series: self.buckets.iter().map(|b| ratio(b.lost, b.sent)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single record.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, std }
}

/// Mean and sample standard deviation of every scalar KPI column.
pub fn aggregate(records: &[KpiRecord]) -> Vec<(&'static str, MetricSummary)> {
    KPI_COLUMNS
        .iter()
        .map(|(name, get)| {
            let values: Vec<f64> = records.iter().map(get).collect();
            (*name, summarize(&values))
        })
        .collect()
}

/// Empirical CDF: sorted samples with cumulative fractions `i/n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CdfSeries {
    pub values: Vec<f64>,
    pub fractions: Vec<f64>,
}

impl CdfSeries {
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linearly interpolated quantile; `None` for an empty series.
    pub fn quantile(&self, fraction: f64) -> Option<f64> {
        let n = self.values.len();
        if n == 0 {
            return None;
        }
        let pos = fraction.clamp(0.0, 1.0) * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        Some(self.values[lo] * (1.0 - w) + self.values[hi] * w)
    }
}

/// Non-finite samples are dropped.
pub fn cdf(samples: &[f64]) -> CdfSeries {
    let mut values: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let fractions = (1..=values.len()).map(|i| i as f64 / n).collect();
    CdfSeries { values, fractions }
}

/// Writes to `path` through a sibling temporary file and a rename, so readers
/// never see a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> io::Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut out)?;
        out.flush()?;
        out.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    match result {
        Ok(()) => fs::rename(&tmp, path),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn kpi_csv_header(prefix: &[&str]) -> String {
    prefix
        .iter()
        .copied()
        .chain(KPI_COLUMNS.iter().map(|(n, _)| *n))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn kpi_csv_values(record: &KpiRecord) -> String {
    KPI_COLUMNS
        .iter()
        .map(|(_, get)| format!("{:.6}", get(record)))
        .collect::<Vec<_>>()
        .join(",")
}

pub const CDF_CSV_HEADER: &str = "group,metric,value,fraction";

pub fn write_cdf_rows<W: Write + ?Sized>(out: &mut W, group: &str, metric: &str, series: &CdfSeries) -> io::Result<()> {
    for (v, f) in series.values.iter().zip(&series.fractions) {
        writeln!(out, "{group},{metric},{v:.6},{f:.6}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traffic() -> TrafficParams {
        TrafficParams::default()
    }

    #[test]
    fn throughput_examples() {
        let t = traffic();
        assert!((throughput_proxy(0.0, 400e6, true, &t) - 400e6 * t.utilization).abs() < 1e-3);
        assert_eq!(throughput_proxy(20.0, 400e6, false, &t), 0.0);
        let ratio = throughput_proxy(10.0, 400e6, true, &t) / throughput_proxy(0.0, 400e6, true, &t);
        assert!((ratio - 11f64.log2()).abs() < 1e-9);
        assert!((ratio - 3.459).abs() < 1e-3);
    }

    #[test]
    fn plr_examples() {
        let t = traffic();
        assert_eq!(plr_proxy(30.0, false, &t), 1.0);
        assert_eq!(plr_proxy(-10.0, true, &t), 1.0);
        assert!((plr_proxy(1e6, true, &t) - 0.03).abs() < 1e-12);
        assert_eq!(plr_proxy(f64::NAN, true, &t), 1.0);
    }

    #[test]
    fn cdf_examples() {
        let one = cdf(&[4.2]);
        assert_eq!(one.values, vec![4.2]);
        assert_eq!(one.fractions, vec![1.0]);
        let four = cdf(&[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(four.fractions, vec![0.25, 0.5, 0.75, 1.0]);
        let median = four.quantile(0.5).unwrap();
        assert!(median > 2.0 && median < 3.0);
        let empty = cdf(&[]);
        assert!(empty.is_empty());
        assert_eq!(empty.quantile(0.5), None);
    }

    #[test]
    fn aggregate_matches_recomputed_mean() {
        let records: Vec<KpiRecord> = (0..100)
            .map(|i| KpiRecord {
                mean_throughput_mbps: 100.0 + (i as f64).sin() * 7.0,
                plr: 0.01 * (i % 7) as f64,
                ..KpiRecord::default()
            })
            .collect();
        let agg = aggregate(&records);
        let thr = agg.iter().find(|(n, _)| *n == "mean_throughput_mbps").unwrap().1;
        let mut manual = 0.0;
        for r in &records {
            manual += r.mean_throughput_mbps;
        }
        manual /= 100.0;
        assert!((thr.mean - manual).abs() < 1e-12);
    }

    #[test]
    fn accumulator_ratios() {
        let t = traffic();
        let mut acc = KpiAccumulator::new(t.clone());
        acc.record_connected(0.0, 0.5, 10.0, 400e6);
        acc.record_detached(0.5, 0.5);
        let k = acc.finish();
        assert!((k.plr - (0.5 * 0.03 + 0.5) / 1.0).abs() < 1e-12);
        assert!((k.mean_throughput_mbps - throughput_proxy(10.0, 400e6, true, &t) / 2e6).abs() < 1e-9);
        assert_eq!(k.plr_series.len(), 1);
        assert!((k.bler - 0.03).abs() < 1e-12);
    }

    #[test]
    fn pending_traffic_delay_and_loss() {
        let t = TrafficParams { core_delay_ms: 0.0, ..traffic() };
        let mut acc = KpiAccumulator::new(t);
        let mut pending = PendingTraffic::default();
        for k in 0..50 {
            acc.record_interrupted(&mut pending, 1.0 + k as f64 * 1e-3, 1e-3);
        }
        acc.resolve_pending(&mut pending, 1.05, true);
        let k = acc.finish();
        assert_eq!(k.plr, 0.0);
        // average wait of packets held 1..50 ms
        assert!((k.mean_packet_delay_ms - 25.5).abs() < 1e-6, "{}", k.mean_packet_delay_ms);

        let mut acc = KpiAccumulator::new(traffic());
        let mut pending = PendingTraffic::default();
        acc.record_interrupted(&mut pending, 0.0, 0.01);
        acc.resolve_pending(&mut pending, 0.01, false);
        assert_eq!(acc.finish().plr, 1.0);
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, |w| writeln!(w, "a,b")).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n");
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        let failing = dir.path().join("bad.csv");
        assert!(write_atomic(&failing, |_| Err(io::Error::other("boom"))).is_err());
        assert!(!failing.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn throughput_strictly_increasing(a in -30.0f64..40.0, d in 0.01f64..10.0) {
            let t = traffic();
            prop_assert!(throughput_proxy(a + d, 400e6, true, &t) > throughput_proxy(a, 400e6, true, &t));
        }

        #[test]
        fn plr_non_increasing(a in -30.0f64..40.0, d in 0.0f64..10.0) {
            let t = traffic();
            prop_assert!(plr_proxy(a + d, true, &t) <= plr_proxy(a, true, &t));
        }

        #[test]
        fn cdf_idempotent(samples in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let c = cdf(&samples);
            prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*c.fractions.last().unwrap(), 1.0);
            let again = cdf(&c.values);
            prop_assert_eq!(again, c);
        }

        #[test]
        fn failure_and_success_rates_sum_to_one(succ in 0u64..50, fail in 0u64..50) {
            prop_assume!(succ + fail > 0);
            let mut acc = KpiAccumulator::new(traffic());
            let mut o = HandoverOutcome {
                ue: crate::radio_env::UeId(0), source: crate::radio_env::CellId(0), target: crate::radio_env::CellId(1),
                pair: crate::rlho::ParamPair::new(0, 0).unwrap(), explored: false, decision_time: 0.0,
                complete_time: 0.09, latency_s: 0.09, result: HandoverResult::Success, ping_pong: false,
            };
            for _ in 0..succ { acc.record_outcome(&o); }
            o.result = HandoverResult::Failure;
            for _ in 0..fail { acc.record_outcome(&o); }
            let k = acc.finish();
            let success_rate = k.successes as f64 / (k.successes + k.failures) as f64;
            prop_assert!((k.ho_failure_rate + success_rate - 1.0).abs() < 1e-12);
        }
    }
}
