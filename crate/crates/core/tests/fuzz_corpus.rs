//! Replays the fuzz seed corpus through the same checks the fuzz targets make.

use std::fs;
use std::path::PathBuf;

use lim2::config::{apply_override, parse_f64_list, parse_list, parse_override, parse_scenario, render_scenario};
use lim2::Scenario;

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn scenario_seeds_round_trip() {
    let mut parsed = 0;
    for (name, text) in corpus("scenario_text") {
        if let Ok(s) = parse_scenario(&text) {
            assert_eq!(parse_scenario(&render_scenario(&s)).unwrap(), s, "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn override_seeds() {
    for (name, arg) in corpus("override_arg") {
        if let Ok((key, _)) = parse_override(&arg) {
            assert!(key.contains('.'), "{name}");
        }
        let mut s = Scenario::default();
        if apply_override(&mut s, &arg).is_ok() {
            let _ = s.validate();
        }
    }
}

#[test]
fn number_list_seeds() {
    for (name, text) in corpus("number_list") {
        if let Ok(values) = parse_f64_list("run.speeds_kmh", &text) {
            assert!(values.iter().all(|v| v.is_finite()), "{name}");
        }
        let _ = parse_list::<u64>("seeds", &text);
    }
}
