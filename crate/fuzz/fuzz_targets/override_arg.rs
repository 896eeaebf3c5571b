#![no_main]

use libfuzzer_sys::fuzz_target;
use lim2::config::{apply_override, parse_override};
use lim2::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(arg) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((key, _)) = parse_override(arg) {
        assert!(key.contains('.'));
    }
    let mut scenario = Scenario::default();
    if apply_override(&mut scenario, arg).is_ok() {
        let _ = scenario.validate();
    }
});
