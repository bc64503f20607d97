use std::path::Path;

use clpriv::data::SplitName;
use clpriv::harness::ExperimentConfig;

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(Some(cfg.id.as_str()), path.file_stem().and_then(|s| s.to_str()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

#[test]
fn split_names_serialize_as_displayed() {
    for s in SplitName::ALL {
        assert_eq!(serde_json::to_value(s).unwrap(), serde_json::Value::String(s.to_string()));
    }
}
