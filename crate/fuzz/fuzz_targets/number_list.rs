#![no_main]

use libfuzzer_sys::fuzz_target;
use lim2::config::{parse_f64_list, parse_list};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(values) = parse_f64_list("run.speeds_kmh", text) {
        assert!(values.iter().all(|v| v.is_finite()));
        assert!(values.len() <= text.matches(',').count() + 1);
    }
    let _ = parse_list::<u64>("seeds", text);
});
