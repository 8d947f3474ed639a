//! Round-trip invariant: any configuration the parser accepts re-emits as
//! canonical text that parses back to an equal configuration, and the
//! canonical form is a fixed point of write-then-parse.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = depsim::scenario::parse_scenario(text) else { return };
    let canon = depsim::scenario::write_scenario(&cfg);
    let cfg2 = depsim::scenario::parse_scenario(&canon)
        .expect("canonical form must parse");
    assert_eq!(cfg, cfg2, "round-trip changed the configuration");
    assert_eq!(
        canon,
        depsim::scenario::write_scenario(&cfg2),
        "canonical form is not a fixed point"
    );
});
