use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OracleCallCounts, SearchError, SearchPolicy};
use crate::experimenter::{ExperimentTask, StageCache};
use crate::stage::PipelineStage;
use crate::tree::Tree;

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub oracle: OracleCallCounts,
    pub backend_requests: u64,
    /// Stages the backend had to write code for, summed over simulations.
    pub backend_stage_invocations: u64,
}

/// Everything needed to report on or resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub version: u32,
    pub policy: SearchPolicy,
    pub task: ExperimentTask,
    pub tree: Tree,
    pub cache: StageCache,
    pub counters: RunCounters,
    /// Static insight pool per stage, for the pool-based policies.
    pub pool: BTreeMap<PipelineStage, Vec<String>>,
}

pub fn save_state(state: &RunState, path: impl AsRef<Path>) -> Result<(), SearchError> {
    let mut text = serde_json::to_string_pretty(state).map_err(|e| SearchError::State(e.to_string()))?;
    text.push('\n');
    let path = path.as_ref();
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<RunState, SearchError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| SearchError::State(format!("corrupt state file: {e}")))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| SearchError::State("state file has no version".into()))?;
    if version != u64::from(STATE_VERSION) {
        return Err(SearchError::State(format!(
            "state file version {version} is not supported (expected {STATE_VERSION})"
        )));
    }
    serde_json::from_value(value).map_err(|e| SearchError::State(format!("corrupt state file: {e}")))
}
