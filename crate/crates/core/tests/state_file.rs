use std::fs;

use imcts::experimenter::{LandscapeShape, SimBackend, SimLandscape};
use imcts::harness::{load_state, save_state, Search, SearchError, SearchPolicy, SimOracles, STATE_VERSION};
use imcts::tree::SearchParams;

fn partial_state(dir: &std::path::Path) -> std::path::PathBuf {
    let land = SimLandscape::new(11, LandscapeShape::ridge()).unwrap();
    let mut oracles = SimOracles::new(land.clone());
    let mut backend = SimBackend::new(land);
    let params = SearchParams { seed: 11, ..SearchParams::default() };
    let mut search = Search::start(params, SearchPolicy::ImctsNoIne, Default::default(), &mut oracles, &mut backend).unwrap();
    for _ in 0..4 {
        search.step().unwrap();
    }
    let path = dir.join("state.json");
    save_state(&search.state, &path).unwrap();
    path
}

#[test]
fn save_load_save_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = partial_state(dir.path());
    let state = load_state(&path).unwrap();
    assert_eq!(state.tree.rollouts_done, 4);
    assert_eq!(state.policy, SearchPolicy::ImctsNoIne);
    assert!(!state.pool.is_empty());
    let again = dir.path().join("again.json");
    save_state(&state, &again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn unsupported_or_corrupt_state_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = partial_state(dir.path());
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["version"] = (STATE_VERSION + 1).into();
    fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(load_state(&path), Err(SearchError::State(m)) if m.contains("not supported")));

    v.as_object_mut().unwrap().remove("version");
    fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(load_state(&path), Err(SearchError::State(_))));

    fs::write(&path, "{ truncated").unwrap();
    assert!(matches!(load_state(&path), Err(SearchError::State(_))));
}
