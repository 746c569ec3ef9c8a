//! End-to-end search driver: policies, oracle bundles, run state, tree dumps
//! and the policy ablation suite.

mod ablation;
mod config;
mod dump;
mod oracles;
mod search;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::experimenter::{BackendError, ExperimentError, SimError};
use crate::introspection::IntrospectionError;
use crate::llm::OracleError;
use crate::tree::TreeError;
use crate::valuation::ValuationError;

pub use ablation::{run_ablation_suite, sign_test_p, AblationRow, AblationTable, SeedResult};
pub use config::{BackendConfig, LlmConfig, RunConfig};
pub use dump::{dump_tree_json, dump_tree_text, score_dict, TreeDump};
pub use oracles::{LlmOracles, OracleCallCounts, SearchOracles, SimOracles};
pub use search::{pick_child, run_search, Search, SearchReport};
pub use state::{load_state, save_state, RunCounters, RunState, STATE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchPolicy {
    Imcts,
    /// Expansion draws from a static insight pool instead of introspecting.
    ImctsNoIne,
    /// Reward is the measured score only.
    ImctsNoHrm,
    /// Static pool and measured-score reward.
    VanillaMcts,
    RandomSearch,
}

impl SearchPolicy {
    pub const ALL: [SearchPolicy; 5] = [
        SearchPolicy::Imcts,
        SearchPolicy::ImctsNoHrm,
        SearchPolicy::ImctsNoIne,
        SearchPolicy::VanillaMcts,
        SearchPolicy::RandomSearch,
    ];

    pub fn introspective(self) -> bool {
        matches!(self, SearchPolicy::Imcts | SearchPolicy::ImctsNoHrm)
    }

    pub fn hybrid_reward(self) -> bool {
        matches!(self, SearchPolicy::Imcts | SearchPolicy::ImctsNoIne)
    }

    pub fn uses_pool(self) -> bool {
        matches!(self, SearchPolicy::ImctsNoIne | SearchPolicy::VanillaMcts | SearchPolicy::RandomSearch)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            SearchPolicy::Imcts => "imcts",
            SearchPolicy::ImctsNoIne => "no-ine",
            SearchPolicy::ImctsNoHrm => "no-hrm",
            SearchPolicy::VanillaMcts => "vanilla",
            SearchPolicy::RandomSearch => "random",
        }
    }
}

impl fmt::Display for SearchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchPolicy::Imcts => "I-MCTS",
            SearchPolicy::ImctsNoIne => "I-MCTS w/o INE",
            SearchPolicy::ImctsNoHrm => "I-MCTS w/o HRM",
            SearchPolicy::VanillaMcts => "Vanilla MCTS",
            SearchPolicy::RandomSearch => "Random search",
        })
    }
}

impl FromStr for SearchPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.cli_name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown policy {s:?} (expected imcts, no-ine, no-hrm, vanilla or random)"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Introspection(#[from] IntrospectionError),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("simulated landscape: {0}")]
    Sim(#[from] SimError),
    #[error("run state: {0}")]
    State(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in SearchPolicy::ALL {
            assert_eq!(p.cli_name().parse::<SearchPolicy>().unwrap(), p);
        }
        assert!("mcts".parse::<SearchPolicy>().is_err());
    }

    #[test]
    fn policy_components() {
        assert!(SearchPolicy::Imcts.introspective() && SearchPolicy::Imcts.hybrid_reward());
        assert!(!SearchPolicy::ImctsNoHrm.hybrid_reward());
        assert!(!SearchPolicy::ImctsNoIne.introspective() && SearchPolicy::ImctsNoIne.hybrid_reward());
        assert!(!SearchPolicy::VanillaMcts.introspective() && !SearchPolicy::VanillaMcts.hybrid_reward());
    }
}
