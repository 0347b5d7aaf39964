use std::path::PathBuf;

use evac_core::scenario::PRESETS;
use evac_core::{preset, Error, NetworkScenario};

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

#[test]
fn shipped_files_match_presets() {
    for name in PRESETS {
        let loaded = NetworkScenario::load(shipped(name)).unwrap();
        assert_eq!(loaded, preset(name).unwrap(), "{name}");
    }
}

#[test]
fn save_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for name in PRESETS {
        let s = preset(name).unwrap();
        let path = dir.path().join("s.toml");
        s.save(&path).unwrap();
        assert_eq!(NetworkScenario::load(&path).unwrap(), s);
    }
}

fn scenario_error(text: &str) -> (String, String) {
    match NetworkScenario::from_toml_str(text) {
        Err(Error::Scenario { path, message }) => (path, message),
        other => panic!("expected a scenario error, got {other:?}"),
    }
}

#[test]
fn errors_name_the_field() {
    let base = preset("paper-network").unwrap().to_toml_string().unwrap();

    let bad_station = base.replacen("qos_max = 0.05", "qos_max = 1.5", 1);
    let (path, _) = scenario_error(&bad_station);
    assert!(path.starts_with("stations[0]"), "{path}");

    let unknown = base.replacen("[topology]", "[topology]\nbogus = 1", 1);
    let (path, message) = scenario_error(&unknown);
    assert!(path.starts_with("line "), "{path}");
    assert!(message.contains("bogus"), "{message}");

    let bad_weights = base.replacen("local = 0.45", "local = 0.9", 1);
    let (path, _) = scenario_error(&bad_weights);
    assert_eq!(path, "game.weights");
}

#[test]
fn load_reports_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, "name = 3").unwrap();
    let err = NetworkScenario::load(&path).unwrap_err().to_string();
    assert!(err.contains("broken.toml"), "{err}");
    assert!(matches!(
        NetworkScenario::load(dir.path().join("missing.toml")),
        Err(Error::Io(_))
    ));
}
