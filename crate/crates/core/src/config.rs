//! Plain-text scenario files.
//!
//! ```text
//! # comment
//! [run]
//! seed = 7
//! speeds_kmh = 50, 100, 150
//! [channel]
//! shadowing_sigma_db = 6
//! ```
//!
//! Every field can also be set as `section.key=value`, which is what the
//! command-line overrides use. Keys before the first section header belong to
//! `run`. Unknown sections or keys are errors; so are repeated keys.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::radio_env::CellId;
use crate::sim::{LayoutKind, PolicyKind, Scenario, SimError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{field}` set twice (line {line})")]
    Duplicate { field: String, line: usize },
    #[error("invalid value `{value}` for `{field}`: {reason}")]
    InvalidValue {
        field: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Invalid(#[from] SimError),
}

/// Every accepted `section.key`, in documentation order.
pub const FIELDS: &[&str] = &[
    "run.seed",
    "run.duration_s",
    "run.step_s",
    "run.report_period_s",
    "run.ue_speed_kmh",
    "run.speeds_kmh",
    "run.n_ues_per_cell",
    "run.policy",
    "layout.kind",
    "layout.sites",
    "layout.cell_radius_m",
    "layout.corridor_width_m",
    "site.tx_power_dbm",
    "site.carrier_freq_hz",
    "site.bandwidth_hz",
    "site.noise_figure_db",
    "channel.path_loss_exponent",
    "channel.shadowing_sigma_db",
    "channel.shadowing_decorrelation_m",
    "channel.thermal_noise_density_dbm_hz",
    "channel.meas_noise_sigma_db",
    "channel.env_noise_mean_dbm",
    "channel.env_noise_sigma_db",
    "channel.env_noise_step_db",
    "kalman.q_rsrp",
    "kalman.q_noise",
    "kalman.r_rsrp",
    "kalman.r_noise",
    "kalman.p0",
    "learning.alpha",
    "learning.gamma",
    "learning.r",
    "learning.n",
    "learning.t_init_min_s",
    "learning.t_init_max_s",
    "learning.disabled_cells",
    "engine.exec_latency_s",
    "engine.decision_delay_s",
    "engine.ping_pong_window_s",
    "engine.q_out_db",
    "engine.min_access_dbm",
    "engine.trigger_offset_db",
    "engine.reestablish_s",
    "engine.rlf_timer_s",
    "report.max_neighbors",
    "report.detection_threshold_dbm",
    "fixed.ttt_ms",
    "fixed.hyst_db",
    "traffic.utilization",
    "traffic.ber",
    "traffic.demod_threshold_db",
    "traffic.packet_bits",
    "traffic.core_delay_ms",
    "traffic.plr_bucket_s",
];

fn bad_value(field: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        field: field.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad_value(field, value, e.to_string()))
}

fn parse_f64(field: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse(field, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad_value(field, value, "must be finite"))
    }
}

/// Comma-separated list; empty items are rejected, an empty string is an empty list.
pub fn parse_list<T: FromStr>(field: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            if item.is_empty() {
                Err(bad_value(field, value, "empty list item"))
            } else {
                parse(field, item)
            }
        })
        .collect()
}

/// Comma-separated finite numbers.
pub fn parse_f64_list(field: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    let items: Vec<f64> = parse_list(field, value)?;
    if items.iter().any(|v| !v.is_finite()) {
        return Err(bad_value(field, value, "must be finite"));
    }
    Ok(items)
}

/// Sets one `section.key` on the scenario. Cross-field rules are checked by
/// `Scenario::validate`, not here.
pub fn set_field(scenario: &mut Scenario, field: &str, value: &str) -> Result<(), ConfigError> {
    let value = value.trim();
    let s = scenario;
    let f = field;
    match field {
        "run.seed" => s.seed = parse(f, value)?,
        "run.duration_s" => s.duration_s = parse_f64(f, value)?,
        "run.step_s" => s.step_s = parse_f64(f, value)?,
        "run.report_period_s" => s.report_period_s = parse_f64(f, value)?,
        "run.ue_speed_kmh" => s.ue_speed_kmh = parse_f64(f, value)?,
        "run.speeds_kmh" => s.speeds_kmh = parse_f64_list(f, value)?,
        "run.n_ues_per_cell" => s.n_ues_per_cell = parse(f, value)?,
        "run.policy" => s.policy = parse::<PolicyKind>(f, value)?,
        "layout.kind" => s.layout.kind = parse::<LayoutKind>(f, value)?,
        "layout.sites" => s.layout.sites = parse(f, value)?,
        "layout.cell_radius_m" => s.layout.cell_radius_m = parse_f64(f, value)?,
        "layout.corridor_width_m" => s.layout.corridor_width_m = parse_f64(f, value)?,
        "site.tx_power_dbm" => s.site.tx_power_dbm = parse_f64(f, value)?,
        "site.carrier_freq_hz" => s.site.carrier_freq_hz = parse_f64(f, value)?,
        "site.bandwidth_hz" => s.site.bandwidth_hz = parse_f64(f, value)?,
        "site.noise_figure_db" => s.site.noise_figure_db = parse_f64(f, value)?,
        "channel.path_loss_exponent" => s.channel.path_loss_exponent = parse_f64(f, value)?,
        "channel.shadowing_sigma_db" => s.channel.shadowing_sigma_db = parse_f64(f, value)?,
        "channel.shadowing_decorrelation_m" => s.channel.shadowing_decorrelation_m = parse_f64(f, value)?,
        "channel.thermal_noise_density_dbm_hz" => s.channel.thermal_noise_density_dbm_hz = parse_f64(f, value)?,
        "channel.meas_noise_sigma_db" => s.channel.meas_noise_sigma_db = parse_f64(f, value)?,
        "channel.env_noise_mean_dbm" => s.channel.env_noise_mean_dbm = parse_f64(f, value)?,
        "channel.env_noise_sigma_db" => s.channel.env_noise_sigma_db = parse_f64(f, value)?,
        "channel.env_noise_step_db" => s.channel.env_noise_step_db = parse_f64(f, value)?,
        "kalman.q_rsrp" => s.kalman.q.0[0][0] = parse_f64(f, value)?,
        "kalman.q_noise" => s.kalman.q.0[1][1] = parse_f64(f, value)?,
        "kalman.r_rsrp" => s.kalman.r.0[0][0] = parse_f64(f, value)?,
        "kalman.r_noise" => s.kalman.r.0[1][1] = parse_f64(f, value)?,
        "kalman.p0" => {
            let v = parse_f64(f, value)?;
            s.kalman.p0.0 = [[v, 0.0], [0.0, v]];
        }
        "learning.alpha" => s.learning.alpha = parse_f64(f, value)?,
        "learning.gamma" => s.learning.gamma = parse_f64(f, value)?,
        "learning.r" => s.learning.r = parse_f64(f, value)?,
        "learning.n" => s.learning.n = parse(f, value)?,
        "learning.t_init_min_s" => s.learning.t_init_min_s = parse_f64(f, value)?,
        "learning.t_init_max_s" => s.learning.t_init_max_s = parse_f64(f, value)?,
        "learning.disabled_cells" => {
            s.disabled_agents = parse_list::<u32>(f, value)?.into_iter().map(CellId).collect();
        }
        "engine.exec_latency_s" => s.engine.exec_latency_s = parse_f64(f, value)?,
        "engine.decision_delay_s" => s.engine.decision_delay_s = parse_f64(f, value)?,
        "engine.ping_pong_window_s" => s.engine.ping_pong_window_s = parse_f64(f, value)?,
        "engine.q_out_db" => s.engine.q_out_db = parse_f64(f, value)?,
        "engine.min_access_dbm" => s.engine.min_access_dbm = parse_f64(f, value)?,
        "engine.trigger_offset_db" => s.engine.trigger_offset_db = parse_f64(f, value)?,
        "engine.reestablish_s" => s.engine.reestablish_s = parse_f64(f, value)?,
        "engine.rlf_timer_s" => s.engine.rlf_timer_s = parse_f64(f, value)?,
        "report.max_neighbors" => s.report.max_neighbors = parse(f, value)?,
        "report.detection_threshold_dbm" => s.report.detection_threshold_dbm = parse_f64(f, value)?,
        "fixed.ttt_ms" => s.fixed.ttt_ms = parse(f, value)?,
        "fixed.hyst_db" => s.fixed.hyst_db = parse(f, value)?,
        "traffic.utilization" => s.traffic.utilization = parse_f64(f, value)?,
        "traffic.ber" => s.traffic.ber = parse_f64(f, value)?,
        "traffic.demod_threshold_db" => s.traffic.demod_threshold_db = parse_f64(f, value)?,
        "traffic.packet_bits" => s.traffic.packet_bits = parse_f64(f, value)?,
        "traffic.core_delay_ms" => s.traffic.core_delay_ms = parse_f64(f, value)?,
        "traffic.plr_bucket_s" => s.traffic.plr_bucket_s = parse_f64(f, value)?,
        _ => return Err(ConfigError::UnknownField(field.to_string())),
    }
    Ok(())
}

/// Splits `section.key=value` into its parts.
pub fn parse_override(arg: &str) -> Result<(String, String), ConfigError> {
    let (key, value) = arg.split_once('=').ok_or_else(|| ConfigError::Syntax {
        line: 0,
        message: format!("override `{arg}` is not of the form section.key=value"),
    })?;
    let key = key.trim();
    if !key.contains('.') {
        return Err(ConfigError::UnknownField(key.to_string()));
    }
    Ok((key.to_string(), value.trim().to_string()))
}

pub fn apply_override(scenario: &mut Scenario, arg: &str) -> Result<(), ConfigError> {
    let (key, value) = parse_override(arg)?;
    set_field(scenario, &key, &value)
}

/// Applies a scenario text on top of `base` without validating the result.
pub fn apply_text(base: &mut Scenario, text: &str) -> Result<(), ConfigError> {
    let mut section = String::from("run");
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: format!("unterminated section header `{line}`"),
            })?;
            let name = name.trim();
            if name.is_empty() || !FIELDS.iter().any(|f| f.split('.').next() == Some(name)) {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    message: format!("unknown section `{name}`"),
                });
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: line_no,
                message: "missing key before `=`".into(),
            });
        }
        let field = if key.contains('.') {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if !seen.insert(field.clone()) {
            return Err(ConfigError::Duplicate { field, line: line_no });
        }
        set_field(base, &field, value)?;
    }
    Ok(())
}

/// Parses and validates a scenario text against the built-in defaults.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let mut scenario = Scenario::default();
    apply_text(&mut scenario, text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Loads a scenario file and applies `section.key=value` overrides in order.
pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut scenario = Scenario::default();
    apply_text(&mut scenario, &text)?;
    for o in overrides {
        apply_override(&mut scenario, o)?;
    }
    scenario.validate()?;
    Ok(scenario)
}

/// Renders every field as a scenario text that parses back to the same scenario.
pub fn render_scenario(s: &Scenario) -> String {
    let join = |v: &[String]| v.join(", ");
    let mut out = String::new();
    let mut section = "";
    for &field in FIELDS {
        let (sec, key) = field.split_once('.').expect("fields are dotted");
        if sec != section {
            if !section.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{sec}]\n"));
            section = sec;
        }
        let value = match field {
            "run.seed" => s.seed.to_string(),
            "run.duration_s" => s.duration_s.to_string(),
            "run.step_s" => s.step_s.to_string(),
            "run.report_period_s" => s.report_period_s.to_string(),
            "run.ue_speed_kmh" => s.ue_speed_kmh.to_string(),
            "run.speeds_kmh" => join(&s.speeds_kmh.iter().map(f64::to_string).collect::<Vec<_>>()),
            "run.n_ues_per_cell" => s.n_ues_per_cell.to_string(),
            "run.policy" => s.policy.to_string(),
            "layout.kind" => s.layout.kind.as_str().to_string(),
            "layout.sites" => s.layout.sites.to_string(),
            "layout.cell_radius_m" => s.layout.cell_radius_m.to_string(),
            "layout.corridor_width_m" => s.layout.corridor_width_m.to_string(),
            "site.tx_power_dbm" => s.site.tx_power_dbm.to_string(),
            "site.carrier_freq_hz" => s.site.carrier_freq_hz.to_string(),
            "site.bandwidth_hz" => s.site.bandwidth_hz.to_string(),
            "site.noise_figure_db" => s.site.noise_figure_db.to_string(),
            "channel.path_loss_exponent" => s.channel.path_loss_exponent.to_string(),
            "channel.shadowing_sigma_db" => s.channel.shadowing_sigma_db.to_string(),
            "channel.shadowing_decorrelation_m" => s.channel.shadowing_decorrelation_m.to_string(),
            "channel.thermal_noise_density_dbm_hz" => s.channel.thermal_noise_density_dbm_hz.to_string(),
            "channel.meas_noise_sigma_db" => s.channel.meas_noise_sigma_db.to_string(),
            "channel.env_noise_mean_dbm" => s.channel.env_noise_mean_dbm.to_string(),
            "channel.env_noise_sigma_db" => s.channel.env_noise_sigma_db.to_string(),
            "channel.env_noise_step_db" => s.channel.env_noise_step_db.to_string(),
            "kalman.q_rsrp" => s.kalman.q.0[0][0].to_string(),
            "kalman.q_noise" => s.kalman.q.0[1][1].to_string(),
            "kalman.r_rsrp" => s.kalman.r.0[0][0].to_string(),
            "kalman.r_noise" => s.kalman.r.0[1][1].to_string(),
            "kalman.p0" => s.kalman.p0.0[0][0].to_string(),
            "learning.alpha" => s.learning.alpha.to_string(),
            "learning.gamma" => s.learning.gamma.to_string(),
            "learning.r" => s.learning.r.to_string(),
            "learning.n" => s.learning.n.to_string(),
            "learning.t_init_min_s" => s.learning.t_init_min_s.to_string(),
            "learning.t_init_max_s" => s.learning.t_init_max_s.to_string(),
            "learning.disabled_cells" => join(&s.disabled_agents.iter().map(|c| c.0.to_string()).collect::<Vec<_>>()),
            "engine.exec_latency_s" => s.engine.exec_latency_s.to_string(),
            "engine.decision_delay_s" => s.engine.decision_delay_s.to_string(),
            "engine.ping_pong_window_s" => s.engine.ping_pong_window_s.to_string(),
            "engine.q_out_db" => s.engine.q_out_db.to_string(),
            "engine.min_access_dbm" => s.engine.min_access_dbm.to_string(),
            "engine.trigger_offset_db" => s.engine.trigger_offset_db.to_string(),
            "engine.reestablish_s" => s.engine.reestablish_s.to_string(),
            "engine.rlf_timer_s" => s.engine.rlf_timer_s.to_string(),
            "report.max_neighbors" => s.report.max_neighbors.to_string(),
            "report.detection_threshold_dbm" => s.report.detection_threshold_dbm.to_string(),
            "fixed.ttt_ms" => s.fixed.ttt_ms.to_string(),
            "fixed.hyst_db" => s.fixed.hyst_db.to_string(),
            "traffic.utilization" => s.traffic.utilization.to_string(),
            "traffic.ber" => s.traffic.ber.to_string(),
            "traffic.demod_threshold_db" => s.traffic.demod_threshold_db.to_string(),
            "traffic.packet_bits" => s.traffic.packet_bits.to_string(),
            "traffic.core_delay_ms" => s.traffic.core_delay_ms.to_string(),
            "traffic.plr_bucket_s" => s.traffic.plr_bucket_s.to_string(),
            other => unreachable!("field {other} has no renderer"),
        };
        out.push_str(&format!("{key} = {value}\n"));
    }
    out
}
