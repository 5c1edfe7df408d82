mod common;

use prepline_core::synth::{heldout_suite, training_suite};

#[test]
fn bundled_suites_match_the_generator() {
    let dir = common::repo_root().join("corpus/synth");
    for (suite, manifest) in [(training_suite(), "manifest.json"), (heldout_suite(), "heldout.json")] {
        for (file, d) in &suite {
            let bundled = std::fs::read_to_string(dir.join(file)).unwrap();
            assert_eq!(bundled, d.to_csv_string(), "{file} is stale; rerun `prepline synth`");
        }
        let listed: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(dir.join(manifest)).unwrap()).unwrap();
        assert_eq!(listed.len(), suite.len());
    }
    assert_eq!(training_suite().len(), 6);
    assert_eq!(heldout_suite().len(), 10);
}
