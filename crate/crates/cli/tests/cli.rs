use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lim2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lim2"))
        .args(args)
        .env_remove("LIM2_OUT")
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .display()
        .to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

const SMALL: [&str; 4] = ["--set", "layout.sites=7", "--duration", "0.3"];

#[test]
fn missing_scenario_file_names_the_path() {
    let o = lim2(&["run", "--scenario", "/no/such/file.scenario"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/no/such/file.scenario"), "{}", stderr(&o));
}

#[test]
fn invalid_settings_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    for (arg, field) in [
        ("channel.bogus=1", "channel.bogus"),
        ("run.step_s=-1", "run.step_s"),
        ("learning.alpha=2", "learning.alpha"),
        ("fixed.ttt_ms=300", "fixed.ttt_ms"),
    ] {
        let o = lim2(&["run", "--set", arg, "--out", &out]);
        assert!(!o.status.success(), "{arg} accepted");
        assert!(stderr(&o).contains(field), "{arg}: {}", stderr(&o));
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0, "nothing written on failure");
}

#[test]
fn run_writes_kpi_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let o = lim2(&[&["run", "--out", &out_arg(dir.path()), "--policy", "greedy_rsrp"], &SMALL[..]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let kpi = read(dir.path(), "kpi.csv");
    let lines: Vec<_> = kpi.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("policy,speed_kmh,seed,mean_throughput_mbps"));
    assert!(lines[1].starts_with("greedy_rsrp,200,1,"));
    let events = read(dir.path(), "events.csv");
    assert!(events.starts_with("time,ue,source,target,ttt,hyst,result,latency,ping_pong\n"));
    assert!(!dir.path().join("kpi.csv.tmp").exists());
}

#[test]
fn sweep_has_one_row_per_policy_speed_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = lim2(&[
        &["sweep", "--scenario", &scenario("grid50.scenario"), "--seeds", "1,2,3", "--jobs", "2"],
        &SMALL[..],
        &["--out", &out_arg(dir.path())],
    ]
    .concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = read(dir.path(), "sweep.csv");
    assert_eq!(sweep.lines().count(), 1 + 7 * 3 * 3);
    let summary = read(dir.path(), "summary.csv");
    let throughput_rows = summary.lines().filter(|l| l.contains(",mean_throughput_mbps,")).count();
    assert_eq!(throughput_rows, 7 * 3);
    let cdf = read(dir.path(), "cdf.csv");
    assert!(cdf.starts_with("group,metric,value,fraction\n"));
    assert_eq!(cdf.lines().filter(|l| l.starts_with("lim2,ho_failure_rate,")).count(), 21);
}

fn sweep_bytes(jobs: &str, dir: &Path) -> Vec<(String, Vec<u8>)> {
    let o = lim2(&[
        &["sweep", "--seeds", "4,5", "--speeds", "100,300", "--jobs", jobs, "--out", &out_arg(dir)],
        &SMALL[..],
    ]
    .concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn outputs_are_identical_across_invocations_and_jobs() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = sweep_bytes("1", a.path());
    assert_eq!(first, sweep_bytes("1", b.path()));
    assert_eq!(first, sweep_bytes("3", c.path()));

    let run = |dir: &Path| {
        let o = lim2(&[&["run", "--seed", "9", "--out", &out_arg(dir)], &SMALL[..]].concat());
        assert!(o.status.success(), "{}", stderr(&o));
        (read(dir, "kpi.csv"), read(dir, "events.csv"))
    };
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn output_root_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("nested");
    let o = Command::new(env!("CARGO_BIN_EXE_lim2"))
        .args(["qtable", "--set", "layout.sites=7", "--duration", "4"])
        .env("LIM2_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let tables = read(&target, "qtables.csv");
    assert!(tables.starts_with("cell,ttt_ms,hyst_db,q\n"));
    assert!(tables.lines().count() > 1);
}

#[test]
fn convergence_writes_one_row_per_second() {
    let dir = tempfile::tempdir().unwrap();
    let o = lim2(&[
        "convergence",
        "--scenario",
        &scenario("convergence.scenario"),
        "--duration",
        "4",
        "--seeds",
        "1,2",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(dir.path(), "convergence.csv");
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "time_s,avg_plr,std_plr,runs");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",2"));
}

#[test]
fn bundled_scenarios_parse() {
    for name in ["grid50.scenario", "corridor.scenario", "convergence.scenario"] {
        let text = fs::read_to_string(scenario(name)).unwrap();
        lim2::parse_scenario(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
