use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::experimenter::{
    plan, sim_introspector, static_pool_draw, ExperimentTask, PipelineConfig, SimLandscape, SolutionPlan,
};
use crate::introspection::{expand_introspectively, InsightProposal, IntrospectionContext};
use crate::llm::{ChatOracle, GenParams, MeteredOracle};
use crate::rng::substream;
use crate::stage::PipelineStage;
use crate::valuation::estimate_value;

/// Model calls made so far, by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCallCounts {
    pub planning: u64,
    pub introspection: u64,
    pub valuation: u64,
    pub pool: u64,
}

impl OracleCallCounts {
    pub fn total(&self) -> u64 {
        self.planning + self.introspection + self.valuation + self.pool
    }
}

/// The model-backed decisions the search loop needs.
pub trait SearchOracles {
    fn plan(&mut self, task: &ExperimentTask, config: &PipelineConfig) -> Result<SolutionPlan, SearchError>;

    /// `width` distinct insights for `ctx.stage`, proposed after reviewing the parent.
    fn introspect(
        &mut self,
        ctx: &IntrospectionContext,
        parent: &PipelineConfig,
        width: usize,
    ) -> Result<Vec<InsightProposal>, SearchError>;

    /// Insight pool for `stage`, built once per run from the root context.
    fn static_pool(
        &mut self,
        ctx: &IntrospectionContext,
        size: usize,
        seed: u64,
    ) -> Result<Vec<String>, SearchError>;

    /// Value estimate in `[0, 1]` of a planned configuration.
    fn estimate_value(
        &mut self,
        task: &ExperimentTask,
        plan: &SolutionPlan,
        config: &PipelineConfig,
    ) -> Result<f64, SearchError>;

    fn counts(&self) -> OracleCallCounts;

    /// Restores counters when resuming a persisted run.
    fn set_counts(&mut self, counts: OracleCallCounts);
}

/// Oracles answered by a [`SimLandscape`]: plans are the baseline plan with
/// insights overlaid, introspection is a noisy one-step lookahead and value
/// estimates are noisy true quality.
#[derive(Debug, Clone)]
pub struct SimOracles {
    pub landscape: SimLandscape,
    counts: OracleCallCounts,
}

impl SimOracles {
    pub fn new(landscape: SimLandscape) -> Self {
        Self { landscape, counts: OracleCallCounts::default() }
    }
}

impl SearchOracles for SimOracles {
    fn plan(&mut self, _task: &ExperimentTask, config: &PipelineConfig) -> Result<SolutionPlan, SearchError> {
        Ok(SolutionPlan::baseline().overlay(config))
    }

    fn introspect(
        &mut self,
        ctx: &IntrospectionContext,
        parent: &PipelineConfig,
        width: usize,
    ) -> Result<Vec<InsightProposal>, SearchError> {
        let mut siblings = ctx.prior_insights.clone();
        let mut out = Vec::with_capacity(width);
        for _ in 0..width {
            self.counts.introspection += 1;
            let p = sim_introspector(&self.landscape, parent, &siblings, ctx.stage)?;
            siblings.push(p.insight.clone());
            out.push(p);
        }
        Ok(out)
    }

    fn static_pool(
        &mut self,
        ctx: &IntrospectionContext,
        size: usize,
        seed: u64,
    ) -> Result<Vec<String>, SearchError> {
        let size = size.min(self.landscape.universe_size());
        let mut rng = substream(seed, "pool", ctx.stage.slug());
        let mut pool = Vec::with_capacity(size);
        for _ in 0..size {
            self.counts.pool += 1;
            let insight = static_pool_draw(&self.landscape, ctx.stage, &pool, &mut rng)?;
            pool.push(insight);
        }
        Ok(pool)
    }

    fn estimate_value(
        &mut self,
        _task: &ExperimentTask,
        _plan: &SolutionPlan,
        config: &PipelineConfig,
    ) -> Result<f64, SearchError> {
        self.counts.valuation += 1;
        Ok(self.landscape.value_estimate(config))
    }

    fn counts(&self) -> OracleCallCounts {
        self.counts
    }

    fn set_counts(&mut self, counts: OracleCallCounts) {
        self.counts = counts;
    }
}

/// Oracles answered by a chat model.
pub struct LlmOracles<O> {
    oracle: O,
    pub params: GenParams,
    /// Re-requests allowed per unusable introspection reply.
    pub retries: usize,
    counts: OracleCallCounts,
}

impl<O: ChatOracle> LlmOracles<O> {
    pub fn new(oracle: O, params: GenParams) -> Self {
        Self { oracle, params, retries: 2, counts: OracleCallCounts::default() }
    }

    pub fn into_inner(self) -> O {
        self.oracle
    }

    /// Runs `f` against a metered view of the oracle and adds its calls to `slot`.
    fn metered<T>(
        &mut self,
        slot: fn(&mut OracleCallCounts) -> &mut u64,
        f: impl FnOnce(&mut dyn ChatOracle, &GenParams, usize) -> Result<T, SearchError>,
    ) -> Result<T, SearchError> {
        let mut m = MeteredOracle::new(&mut self.oracle);
        let result = f(&mut m, &self.params, self.retries);
        *slot(&mut self.counts) += m.stats().calls;
        result
    }
}

impl<O: ChatOracle> SearchOracles for LlmOracles<O> {
    fn plan(&mut self, task: &ExperimentTask, config: &PipelineConfig) -> Result<SolutionPlan, SearchError> {
        self.metered(|c| &mut c.planning, |o, p, _| Ok(plan(task, config, o, p)?))
    }

    fn introspect(
        &mut self,
        ctx: &IntrospectionContext,
        _parent: &PipelineConfig,
        width: usize,
    ) -> Result<Vec<InsightProposal>, SearchError> {
        self.metered(|c| &mut c.introspection, |o, p, r| Ok(expand_introspectively(ctx, width, o, p, r)?))
    }

    fn static_pool(
        &mut self,
        ctx: &IntrospectionContext,
        size: usize,
        _seed: u64,
    ) -> Result<Vec<String>, SearchError> {
        let proposals =
            self.metered(|c| &mut c.pool, |o, p, r| Ok(expand_introspectively(ctx, size, o, p, r)?))?;
        Ok(proposals.into_iter().map(|p| p.insight).collect())
    }

    fn estimate_value(
        &mut self,
        task: &ExperimentTask,
        plan: &SolutionPlan,
        _config: &PipelineConfig,
    ) -> Result<f64, SearchError> {
        let text = plan.render();
        self.metered(|c| &mut c.valuation, |o, p, _| Ok(estimate_value(&text, &task.problem, o, p)?))
    }

    fn counts(&self) -> OracleCallCounts {
        self.counts
    }

    fn set_counts(&mut self, counts: OracleCallCounts) {
        self.counts = counts;
    }
}

/// `width` distinct pool entries for one expansion, drawn with a stream keyed
/// by the expanded node.
pub(crate) fn draw_from_pool(pool: &[String], width: usize, seed: u64, node_label: &str) -> Vec<String> {
    let mut picks = pool.to_vec();
    picks.shuffle(&mut substream(seed, "pool-pick", node_label));
    picks.truncate(width);
    picks
}

/// Uniform pick from `pool` for the random-search rollout `index` at `stage`.
pub(crate) fn random_pick(pool: &[String], seed: u64, index: usize, stage: PipelineStage) -> Option<String> {
    use rand::Rng;
    if pool.is_empty() {
        return None;
    }
    let mut rng = substream(seed, "random", &format!("{index}/{}", stage.slug()));
    Some(pool[rng.random_range(0..pool.len())].clone())
}
