#![no_main]

use libfuzzer_sys::fuzz_target;
use lim2::config::{parse_scenario, render_scenario};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(scenario) = parse_scenario(text) {
        // whatever parses must survive a render/parse round trip
        let again = parse_scenario(&render_scenario(&scenario)).expect("rendered scenario parses");
        assert_eq!(again, scenario);
    }
});
