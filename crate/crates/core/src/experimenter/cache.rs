use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ConfigEntry, ExperimentOutcome, PipelineConfig, StageCode};
use crate::rng::digest_hex;
use crate::stage::PipelineStage;

/// Hash of an ordered `(stage, insight)` prefix.
pub fn prefix_key(prefix: &[ConfigEntry]) -> String {
    let canonical = serde_json::to_string(prefix).expect("config entries serialize");
    digest_hex(&canonical)
}

/// Per-stage code keyed by the configuration prefix that produced it, plus
/// terminal outcomes keyed by the full configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCache {
    stages: BTreeMap<String, StageCode>,
    outcomes: BTreeMap<String, ExperimentOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixLookup {
    pub reused: Vec<StageCode>,
    pub missing: Vec<PipelineStage>,
}

impl StageCache {
    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Number of distinct stage code entries.
    pub fn stage_entries(&self) -> usize {
        self.stages.len()
    }

    pub fn outcome(&self, config: &PipelineConfig) -> Option<&ExperimentOutcome> {
        self.outcomes.get(&config.key())
    }

    pub fn store(&mut self, config: &PipelineConfig, outcome: &ExperimentOutcome) {
        let entries = config.entries();
        for i in 0..entries.len() {
            let stage = entries[i].stage;
            let code = outcome.artifact.per_stage_code.get(&stage).cloned().unwrap_or_default();
            self.stages
                .entry(prefix_key(&entries[..=i]))
                .or_insert(StageCode { stage, code });
        }
        self.outcomes.insert(config.key(), outcome.clone());
    }
}

/// Splits the stages of `config` into the longest cached prefix and the rest.
pub fn cache_prefix_lookup(cache: &StageCache, config: &PipelineConfig) -> PrefixLookup {
    let entries = config.entries();
    let mut reused = Vec::new();
    for i in 0..entries.len() {
        match cache.stages.get(&prefix_key(&entries[..=i])) {
            Some(code) => reused.push(code.clone()),
            None => break,
        }
    }
    let missing = entries[reused.len()..].iter().map(|e| e.stage).collect();
    PrefixLookup { reused, missing }
}
