#![no_main]

use cgl_lab::sim::SimConfig;
use cgl_lab::LabError;
use libfuzzer_sys::fuzz_target;

// Arbitrary text must parse to a validated config or to a config error with a path.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let results = [SimConfig::from_toml_str(text), SimConfig::from_json_str(text)];
    for r in results {
        match r {
            Ok(cfg) => {
                cfg.validate().expect("accepted config must validate");
                let back = toml::to_string(&cfg).expect("serializes");
                assert_eq!(SimConfig::from_toml_str(&back).expect("round trip"), cfg);
            }
            Err(LabError::Config { .. }) => {}
            Err(e) => panic!("unexpected error kind: {e}"),
        }
    }
});
