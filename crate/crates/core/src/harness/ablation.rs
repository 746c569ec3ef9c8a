use std::fmt;

use serde::Serialize;

use super::{run_search, SearchError, SearchPolicy, SimOracles};
use crate::experimenter::{ExperimentTask, LandscapeShape, PipelineConfig, SimBackend, SimLandscape};
use crate::tree::{NodeId, SearchParams, Tree};

/// Outcome of one policy on one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub policy: SearchPolicy,
    /// True quality of the best-by-dev node.
    pub best_quality: f64,
    /// First rollout that simulated a node within 2% of the landscape optimum.
    pub rollouts_to_near_optimum: Option<usize>,
    /// Rollout at which the best-by-dev node was first simulated.
    pub best_first_rollout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub policy: SearchPolicy,
    pub median_best_quality: f64,
    pub mean_best_quality: f64,
    /// Mean over the seeds that got within 2% of the optimum.
    pub mean_rollouts_to_near_optimum: Option<f64>,
    pub near_optimum_rate: f64,
    pub median_best_first_rollout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rollouts: usize,
    pub rows: Vec<AblationRow>,
    pub runs: Vec<SeedResult>,
}

impl AblationTable {
    pub fn row(&self, policy: SearchPolicy) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    /// Per-seed best qualities of `policy`, in seed order.
    pub fn qualities(&self, policy: SearchPolicy) -> Vec<f64> {
        self.runs.iter().filter(|r| r.policy == policy).map(|r| r.best_quality).collect()
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rollouts: {}", self.rollouts)?;
        writeln!(
            f,
            "{:<16} {:>10} {:>10} {:>12} {:>10} {:>12}",
            "policy", "median q", "mean q", "to 2% (avg)", "2% rate", "best first"
        )?;
        for r in &self.rows {
            let to_opt = r.mean_rollouts_to_near_optimum.map_or("-".to_string(), |v| format!("{v:.2}"));
            writeln!(
                f,
                "{:<16} {:>10.4} {:>10.4} {:>12} {:>10.2} {:>12.1}",
                r.policy.to_string(),
                r.median_best_quality,
                r.mean_best_quality,
                to_opt,
                r.near_optimum_rate,
                r.median_best_first_rollout
            )?;
        }
        Ok(())
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One-sided sign test p-value for "a tends to exceed b" over paired samples.
/// Ties are dropped.
pub fn sign_test_p(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len() as u64;
    let wins = diffs.iter().filter(|d| **d > 0.0).count() as u64;
    // P(X >= wins), X ~ Binomial(n, 1/2)
    let mut coef = 1.0f64; // C(n, 0)
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= wins {
            tail += coef;
        }
        coef = coef * (n - i) as f64 / (i + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

fn config_of(tree: &Tree, id: NodeId) -> PipelineConfig {
    let mut cfg = PipelineConfig::new();
    for a in tree.ancestry(id) {
        let n = tree.node(a);
        if let (Some(stage), Some(insight)) = (n.stage, &n.insight) {
            cfg = cfg.with(stage, insight.clone());
        }
    }
    cfg
}

fn run_one(shape: &LandscapeShape, seed: u64, k: usize, policy: SearchPolicy) -> Result<SeedResult, SearchError> {
    let land = SimLandscape::new(seed, shape.clone())?;
    let (optimum, _) = land.optimum();
    let mut oracles = SimOracles::new(land.clone());
    let mut backend = SimBackend::new(land.clone());
    let params = SearchParams { rollouts: k, seed, ..SearchParams::default() };
    let report = run_search(params, policy, ExperimentTask::default(), &mut oracles, &mut backend)?;
    let tree = &report.tree;
    let best = tree.best_node()?.by_dev;
    let near = tree
        .log
        .iter()
        .find(|r| land.true_quality(&config_of(tree, r.node)) >= 0.98 * optimum)
        .map(|r| r.index);
    let first = tree.log.iter().find(|r| r.node == best).map_or(0, |r| r.index);
    Ok(SeedResult {
        seed,
        policy,
        best_quality: land.true_quality(&config_of(tree, best)),
        rollouts_to_near_optimum: near,
        best_first_rollout: first,
    })
}

/// Runs every policy on every seed of the simulated landscape.
pub fn run_ablation_suite(shape: &LandscapeShape, seeds: &[u64], k: usize) -> Result<AblationTable, SearchError> {
    let mut runs = Vec::with_capacity(seeds.len() * SearchPolicy::ALL.len());
    for &seed in seeds {
        for policy in SearchPolicy::ALL {
            runs.push(run_one(shape, seed, k, policy)?);
        }
    }
    let rows = SearchPolicy::ALL
        .into_iter()
        .map(|policy| {
            let mine: Vec<&SeedResult> = runs.iter().filter(|r| r.policy == policy).collect();
            let q: Vec<f64> = mine.iter().map(|r| r.best_quality).collect();
            let reached: Vec<f64> = mine.iter().filter_map(|r| r.rollouts_to_near_optimum).map(|v| v as f64).collect();
            let first: Vec<f64> = mine.iter().map(|r| r.best_first_rollout as f64).collect();
            AblationRow {
                policy,
                median_best_quality: median(&q),
                mean_best_quality: mean(&q),
                mean_rollouts_to_near_optimum: (!reached.is_empty()).then(|| mean(&reached)),
                near_optimum_rate: reached.len() as f64 / mine.len().max(1) as f64,
                median_best_first_rollout: median(&first),
            }
        })
        .collect();
    Ok(AblationTable { rollouts: k, rows, runs })
}
