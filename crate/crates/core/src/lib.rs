//! Seedable cellular handover simulator.
//!
//! A UE's measurement reports go through a per-cell Kalman filter, a SARSA
//! ranking of neighbor cells and an ε-greedy choice of time-to-trigger and
//! hysteresis per serving cell ([`lim2::Lim2Policy`]). Fixed A3 and greedy
//! max-RSRP baselines run through the same [`engine`] state machine.
//!
//! ```no_run
//! let scenario = lim2::config::parse_scenario("[run]\nseed = 3\nduration_s = 2\n").unwrap();
//! let out = lim2::sim::run(&scenario).unwrap();
//! println!("{:.1} Mbps", out.kpi.mean_throughput_mbps);
//! ```

pub mod baselines;
pub mod config;
pub mod engine;
pub mod kfe;
pub mod lim2;
pub mod metrics;
pub mod radio_env;
pub mod rlho;
pub mod rng;
pub mod sim;

pub use config::{load_scenario, parse_scenario, ConfigError};
pub use engine::{HandoverOutcome, HandoverPolicy};
pub use metrics::KpiRecord;
pub use sim::{run, sweep, PolicyKind, RunOutput, RunRecord, Scenario, SimError};
