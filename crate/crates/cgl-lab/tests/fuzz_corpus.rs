//! Runs the config-parser fuzz property over the checked-in corpus seeds.

use cgl_lab::sim::SimConfig;
use cgl_lab::LabError;
use std::path::Path;

#[test]
fn corpus_seeds_parse_or_report_a_path() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/sim_config");
    let mut n = 0;
    let mut accepted = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let text = std::fs::read_to_string(e.unwrap().path()).unwrap();
        for r in [SimConfig::from_toml_str(&text), SimConfig::from_json_str(&text)] {
            match r {
                Ok(cfg) => {
                    accepted += 1;
                    let back = toml::to_string(&cfg).unwrap();
                    assert_eq!(SimConfig::from_toml_str(&back).unwrap(), cfg);
                }
                Err(LabError::Config { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
        n += 1;
    }
    assert!(n >= 5 && accepted >= 3, "{n} seeds, {accepted} accepted");
}
