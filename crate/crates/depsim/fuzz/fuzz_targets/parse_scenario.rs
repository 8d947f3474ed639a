//! The scenario parser must never panic, whatever the input: it either
//! returns a configuration or a line-numbered error. Accepted inputs must
//! also survive semantic validation without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = depsim::scenario::parse_scenario(text) {
            let _ = cfg.validate();
        }
    }
});
