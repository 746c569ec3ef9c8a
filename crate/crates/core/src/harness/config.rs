use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::experimenter::{ExperimentTask, LandscapeShape};
use crate::llm::GenParams;
use crate::tree::SearchParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub retry_budget: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let gen = GenParams::default();
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "default".into(),
            temperature: gen.temperature,
            max_tokens: gen.max_tokens,
            timeout_secs: 120,
            retry_budget: gen.retry_budget,
        }
    }
}

impl LlmConfig {
    pub fn gen_params(&self) -> GenParams {
        GenParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            retry_budget: self.retry_budget,
            ..GenParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Program and arguments; `{request}` and `{response}` are substituted.
    pub command: Vec<String>,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { command: Vec::new(), timeout_secs: 3600 }
    }
}

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub llm: LlmConfig,
    pub backend: BackendConfig,
    pub landscape: LandscapeShape,
    pub task: ExperimentTask,
    pub search: SearchParams,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SearchError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SearchError::State(format!("config {}: {e}", path.display())))
    }
}
