use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lim2::config::{apply_override, load_scenario, parse_list};
use lim2::engine::{write_event_line, EVENT_LOG_HEADER};
use lim2::metrics::{
    aggregate, cdf, kpi_csv_header, kpi_csv_values, summarize, write_atomic, write_cdf_rows, CDF_CSV_HEADER,
};
use lim2::rlho::write_qtables_csv;
use lim2::sim::{PolicyKind, RunRecord, Scenario};

#[derive(Parser)]
#[command(name = "lim2", version, about = "Cellular handover simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run; writes kpi.csv and events.csv.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long)]
        policy: Option<PolicyKind>,
    },
    /// Policies × speeds × seeds; writes sweep.csv, summary.csv and cdf.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds [default: the scenario seed].
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated speeds in km/h [default: run.speeds_kmh].
        #[arg(long)]
        speeds: Option<String>,
        /// Comma-separated policies [default: all].
        #[arg(long = "policy")]
        policies: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Long LIM2 runs; writes the per-second PLR averaged over seeds to convergence.csv.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// One LIM2 run; writes the final Q-Tables to qtables.csv.
    Qtable {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        speed: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Field override, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long, env = "LIM2_OUT", default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut scenario = match &self.scenario {
            Some(path) => load_scenario(path, &self.overrides)?,
            None => {
                let mut s = Scenario::default();
                for o in &self.overrides {
                    apply_override(&mut s, o)?;
                }
                s
            }
        };
        if let Some(d) = self.duration {
            scenario.duration_s = d;
        }
        scenario.validate()?;
        Ok(scenario)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn list<T: std::str::FromStr>(flag: &str, value: &Option<String>, default: Vec<T>) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = match value {
        Some(v) => parse_list(flag, v)?,
        None => default,
    };
    if items.is_empty() {
        bail!("--{flag} must name at least one value");
    }
    Ok(items)
}

fn write_file(dir: &Path, name: &str, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let path = dir.join(name);
    write_atomic(&path, fill).with_context(|| format!("cannot write {}", path.display()))
}

fn kpi_rows(out: &mut dyn Write, records: &[RunRecord]) -> std::io::Result<()> {
    writeln!(out, "{}", kpi_csv_header(&["policy", "speed_kmh", "seed"]))?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.policy, r.speed_kmh, r.seed, kpi_csv_values(&r.kpi))?;
    }
    Ok(())
}

/// Contiguous groups of records sharing policy and speed, in sweep order.
fn groups(records: &[RunRecord]) -> Vec<&[RunRecord]> {
    records
        .chunk_by(|a, b| a.policy == b.policy && a.speed_kmh == b.speed_kmh)
        .collect()
}

fn cmd_run(common: &Common, seed: Option<u64>, speed: Option<f64>, policy: Option<PolicyKind>) -> Result<()> {
    let mut scenario = common.scenario()?;
    scenario.seed = seed.unwrap_or(scenario.seed);
    scenario.ue_speed_kmh = speed.unwrap_or(scenario.ue_speed_kmh);
    scenario.policy = policy.unwrap_or(scenario.policy);
    let out = lim2::run(&scenario)?;
    let dir = common.out_dir()?;
    let record = RunRecord {
        policy: scenario.policy,
        speed_kmh: scenario.ue_speed_kmh,
        seed: scenario.seed,
        kpi: out.kpi.clone(),
    };
    write_file(dir, "kpi.csv", |w| kpi_rows(w, std::slice::from_ref(&record)))?;
    write_file(dir, "events.csv", |w| {
        writeln!(w, "{EVENT_LOG_HEADER}")?;
        out.events.iter().try_for_each(|e| write_event_line(&mut &mut *w, e))
    })?;
    let k = &out.kpi;
    println!(
        "{} seed {} at {} km/h: {:.2} Mbps, PLR {:.4}, {} handovers ({} failed, {} ping-pong)",
        scenario.policy,
        scenario.seed,
        scenario.ue_speed_kmh,
        k.mean_throughput_mbps,
        k.plr,
        k.successes + k.failures,
        k.failures,
        k.ping_pongs
    );
    Ok(())
}

fn cmd_sweep(
    common: &Common,
    seeds: &Option<String>,
    speeds: &Option<String>,
    policies: &Option<String>,
    jobs: usize,
) -> Result<()> {
    let scenario = common.scenario()?;
    let seeds: Vec<u64> = list("seeds", seeds, vec![scenario.seed])?;
    let speeds: Vec<f64> = list("speeds", speeds, scenario.speeds_kmh.clone())?;
    let policies: Vec<PolicyKind> = list("policy", policies, PolicyKind::ALL.to_vec())?;
    let records = lim2::sweep(&scenario, &policies, &speeds, &seeds, jobs)?;
    let dir = common.out_dir()?;

    write_file(dir, "sweep.csv", |w| kpi_rows(w, &records))?;
    write_file(dir, "summary.csv", |w| {
        writeln!(w, "policy,speed_kmh,runs,metric,mean,std")?;
        for g in groups(&records) {
            let kpis: Vec<_> = g.iter().map(|r| r.kpi.clone()).collect();
            for (metric, s) in aggregate(&kpis) {
                writeln!(w, "{},{},{},{metric},{:.6},{:.6}", g[0].policy, g[0].speed_kmh, g.len(), s.mean, s.std)?;
            }
        }
        Ok(())
    })?;
    write_file(dir, "cdf.csv", |w| {
        writeln!(w, "{CDF_CSV_HEADER}")?;
        for &policy in &policies {
            let of = |get: fn(&RunRecord) -> f64| -> Vec<f64> {
                records.iter().filter(|r| r.policy == policy).map(get).collect()
            };
            write_cdf_rows(w, policy.as_str(), "ho_failure_rate", &cdf(&of(|r| r.kpi.ho_failure_rate)))?;
            write_cdf_rows(w, policy.as_str(), "mean_throughput_mbps", &cdf(&of(|r| r.kpi.mean_throughput_mbps)))?;
        }
        Ok(())
    })?;
    for g in groups(&records) {
        let thr: Vec<f64> = g.iter().map(|r| r.kpi.mean_throughput_mbps).collect();
        let fail: Vec<f64> = g.iter().map(|r| r.kpi.ho_failure_rate).collect();
        let (thr, fail) = (summarize(&thr), summarize(&fail));
        println!(
            "{:<12} {:>5} km/h: {:.2} ± {:.2} Mbps, failure rate {:.3} ± {:.3}",
            g[0].policy, g[0].speed_kmh, thr.mean, thr.std, fail.mean, fail.std
        );
    }
    Ok(())
}

fn cmd_convergence(common: &Common, seeds: &Option<String>, speed: Option<f64>, jobs: usize) -> Result<()> {
    let mut scenario = common.scenario()?;
    if common.duration.is_none() {
        scenario.duration_s = 120.0;
    }
    let seeds: Vec<u64> = list("seeds", seeds, vec![scenario.seed])?;
    let speed = speed.unwrap_or(scenario.ue_speed_kmh);
    let records = lim2::sweep(&scenario, &[PolicyKind::Lim2], &[speed], &seeds, jobs)?;
    let len = records.iter().map(|r| r.kpi.plr_series.len()).max().unwrap_or(0);
    let bucket = scenario.traffic.plr_bucket_s;
    let dir = common.out_dir()?;
    write_file(dir, "convergence.csv", |w| {
        writeln!(w, "time_s,avg_plr,std_plr,runs")?;
        for i in 0..len {
            let samples: Vec<f64> = records.iter().filter_map(|r| r.kpi.plr_series.get(i).copied()).collect();
            let s = summarize(&samples);
            writeln!(w, "{},{:.6},{:.6},{}", i as f64 * bucket, s.mean, s.std, samples.len())?;
        }
        Ok(())
    })?;
    println!("{} seeds × {} s written to {}", seeds.len(), scenario.duration_s, dir.join("convergence.csv").display());
    Ok(())
}

fn cmd_qtable(common: &Common, seed: Option<u64>, speed: Option<f64>) -> Result<()> {
    let mut scenario = common.scenario()?;
    scenario.policy = PolicyKind::Lim2;
    scenario.seed = seed.unwrap_or(scenario.seed);
    scenario.ue_speed_kmh = speed.unwrap_or(scenario.ue_speed_kmh);
    let out = lim2::run(&scenario)?;
    let dir = common.out_dir()?;
    write_file(dir, "qtables.csv", |w| write_qtables_csv(&out.q_tables, &mut &mut *w))?;
    let filled: usize = out.q_tables.iter().map(|t| t.len()).sum();
    println!("{} tables, {filled} entries", out.q_tables.len());
    Ok(())
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run { common, seed, speed, policy } => cmd_run(&common, seed, speed, policy),
        Command::Sweep { common, seeds, speeds, policies, jobs } => cmd_sweep(&common, &seeds, &speeds, &policies, jobs),
        Command::Convergence { common, seeds, speed, jobs } => cmd_convergence(&common, &seeds, speed, jobs),
        Command::Qtable { common, seed, speed } => cmd_qtable(&common, seed, speed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
