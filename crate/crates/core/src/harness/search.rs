use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::dump::score_dict;
use super::oracles::{draw_from_pool, random_pick};
use super::state::{RunCounters, RunState, STATE_VERSION};
use super::{OracleCallCounts, SearchError, SearchOracles, SearchPolicy};
use crate::experimenter::{
    simulate, BackendError, BackendRequest, BackendResponse, ExperimentBackend, ExperimentTask, PipelineConfig,
    StageCache,
};
use crate::introspection::IntrospectionContext;
use crate::tree::{blend, Node, NodeId, NodeStatus, RolloutRecord, SearchParams, Tree};

/// Child to simulate after an expansion. Estimate-guided policies take the
/// highest cached value estimate; the others take the first child. Ties and
/// missing estimates resolve to the lowest index.
pub fn pick_child(children: &[&Node], policy: SearchPolicy) -> Option<NodeId> {
    let first = children.first()?.id;
    if !policy.hybrid_reward() {
        return Some(first);
    }
    let mut best: Option<(NodeId, f64)> = None;
    for c in children {
        let Some(v) = c.s_llm else { continue };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((c.id, v));
        }
    }
    Some(best.map_or(first, |(id, _)| id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub label: String,
    pub dev_score: f64,
    pub test_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReport {
    pub policy: SearchPolicy,
    pub seed: u64,
    pub simulations: usize,
    pub best_by_dev: BestSummary,
    pub best_by_q: String,
    pub oracle_call_counts: OracleCallCounts,
    pub backend_requests: u64,
    pub backend_stage_invocations: u64,
    pub tree: Tree,
    /// Not serialized, so reports of identical runs compare equal.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SearchReport {
    /// Builds the report from persisted state alone.
    pub fn from_state(state: &RunState) -> Result<Self, SearchError> {
        let tree = &state.tree;
        let best = tree.best_node()?;
        let dev = tree.node(best.by_dev);
        let outcome = dev.outcome.as_ref().expect("best-by-dev node is simulated");
        Ok(Self {
            policy: state.policy,
            seed: tree.params.seed,
            simulations: tree.rollouts_done,
            best_by_dev: BestSummary {
                label: dev.label.clone(),
                dev_score: outcome.dev_score,
                test_score: outcome.test_score,
            },
            best_by_q: tree.node(best.by_q).label.clone(),
            oracle_call_counts: state.counters.oracle,
            backend_requests: state.counters.backend_requests,
            backend_stage_invocations: state.counters.backend_stage_invocations,
            tree: tree.clone(),
            wall_time: Duration::ZERO,
        })
    }
}

impl PartialEq for SearchReport {
    /// Compares everything except wall time.
    fn eq(&self, other: &Self) -> bool {
        self.policy == other.policy
            && self.seed == other.seed
            && self.simulations == other.simulations
            && self.best_by_dev == other.best_by_dev
            && self.best_by_q == other.best_by_q
            && self.oracle_call_counts == other.oracle_call_counts
            && self.backend_requests == other.backend_requests
            && self.backend_stage_invocations == other.backend_stage_invocations
            && self.tree == other.tree
    }
}

/// Counts requests passing through to the real backend.
struct Counted<'a> {
    inner: &'a mut dyn ExperimentBackend,
    requests: u64,
}

impl ExperimentBackend for Counted<'_> {
    fn execute(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.requests += 1;
        self.inner.execute(request)
    }
}

/// A run in progress. Each [`Search::step`] performs one rollout; the state
/// after any step can be saved and resumed.
pub struct Search<'a> {
    pub state: RunState,
    oracles: &'a mut dyn SearchOracles,
    backend: &'a mut dyn ExperimentBackend,
}

impl<'a> Search<'a> {
    /// Plans the root and, for random search, builds the insight pool.
    pub fn start(
        params: SearchParams,
        policy: SearchPolicy,
        task: ExperimentTask,
        oracles: &'a mut dyn SearchOracles,
        backend: &'a mut dyn ExperimentBackend,
    ) -> Result<Self, SearchError> {
        params.validate()?;
        let root_plan = oracles.plan(&task, &PipelineConfig::new())?;
        let tree = Tree::new(root_plan, params)?;
        let state = RunState {
            version: STATE_VERSION,
            policy,
            task,
            tree,
            cache: StageCache::default(),
            counters: RunCounters { oracle: oracles.counts(), ..RunCounters::default() },
            pool: Default::default(),
        };
        let mut search = Self { state, oracles, backend };
        if policy == SearchPolicy::RandomSearch {
            search.build_pool()?;
        }
        Ok(search)
    }

    /// Continues a persisted run. Replay transports must already be positioned
    /// past the exchanges counted in `state.counters`.
    pub fn resume(
        state: RunState,
        oracles: &'a mut dyn SearchOracles,
        backend: &'a mut dyn ExperimentBackend,
    ) -> Self {
        oracles.set_counts(state.counters.oracle);
        Self { state, oracles, backend }
    }

    pub fn is_done(&self) -> bool {
        self.state.tree.rollouts_done >= self.state.tree.params.rollouts
    }

    /// Runs the remaining rollouts.
    pub fn run(&mut self) -> Result<SearchReport, SearchError> {
        let start = Instant::now();
        while self.step()?.is_some() {}
        let mut report = SearchReport::from_state(&self.state)?;
        report.wall_time = start.elapsed();
        Ok(report)
    }

    /// One rollout; `None` once the budget is spent.
    pub fn step(&mut self) -> Result<Option<RolloutRecord>, SearchError> {
        if self.is_done() {
            return Ok(None);
        }
        let target = match self.state.policy {
            SearchPolicy::RandomSearch => self.random_target()?,
            _ => self.tree_target()?,
        };
        let record = self.rollout(target)?;
        if self.state.policy.uses_pool() && self.state.pool.is_empty() && target == NodeId::ROOT {
            self.build_pool()?;
        }
        Ok(Some(record))
    }

    fn tree_target(&mut self) -> Result<NodeId, SearchError> {
        let tree = &self.state.tree;
        if !tree.root().is_simulated() {
            return Ok(NodeId::ROOT);
        }
        let leaf = tree.select_leaf();
        let node = tree.node(leaf);
        if node.status == NodeStatus::Fresh {
            return Ok(leaf);
        }
        if node.depth < tree.params.max_depth() && node.children.is_empty() {
            self.expand(leaf)?;
            let tree = &self.state.tree;
            let children: Vec<&Node> = tree.node(leaf).children.iter().map(|&c| tree.node(c)).collect();
            return Ok(pick_child(&children, self.state.policy).unwrap_or(leaf));
        }
        // at the depth limit: run the same configuration again
        Ok(leaf)
    }

    fn random_target(&mut self) -> Result<NodeId, SearchError> {
        let index = self.state.tree.rollouts_done + 1;
        let params = self.state.tree.params.clone();
        let mut cur = NodeId::ROOT;
        for depth in 1..=params.max_depth() {
            let stage = params.stage_at_depth(depth).expect("depth within schedule");
            let pool = self.state.pool.get(&stage).map(Vec::as_slice).unwrap_or_default();
            let Some(insight) = random_pick(pool, params.seed, index, stage) else { break };
            let tree = &mut self.state.tree;
            let existing = tree
                .node(cur)
                .children
                .iter()
                .copied()
                .find(|&c| tree.node(c).insight.as_deref() == Some(insight.as_str()));
            cur = match existing {
                Some(c) => c,
                None => tree.attach_child(cur, stage, insight)?,
            };
        }
        Ok(cur)
    }

    fn config_of(&self, id: NodeId) -> PipelineConfig {
        let tree = &self.state.tree;
        let mut cfg = PipelineConfig::new();
        for a in tree.ancestry(id) {
            let n = tree.node(a);
            if let (Some(stage), Some(insight)) = (n.stage, &n.insight) {
                cfg = cfg.with(stage, insight.clone());
            }
        }
        cfg
    }

    fn ensure_plan(&mut self, id: NodeId) -> Result<(), SearchError> {
        if self.state.tree.node(id).plan.is_none() {
            let cfg = self.config_of(id);
            let plan = self.oracles.plan(&self.state.task, &cfg)?;
            self.state.tree.get_mut(id)?.plan = Some(plan);
        }
        Ok(())
    }

    fn ensure_estimate(&mut self, id: NodeId) -> Result<f64, SearchError> {
        if let Some(v) = self.state.tree.node(id).s_llm {
            return Ok(v);
        }
        self.ensure_plan(id)?;
        let cfg = self.config_of(id);
        let plan = self.state.tree.node(id).plan.clone().expect("planned");
        let v = self.oracles.estimate_value(&self.state.task, &plan, &cfg)?.clamp(0.0, 1.0);
        self.state.tree.get_mut(id)?.s_llm = Some(v);
        self.sync_counts();
        Ok(v)
    }

    fn sync_counts(&mut self) {
        self.state.counters.oracle = self.oracles.counts();
    }

    fn context_of(&self, id: NodeId, stage: crate::PipelineStage) -> IntrospectionContext {
        let node = self.state.tree.node(id);
        IntrospectionContext {
            current_plan: node.plan.as_ref().map(|p| p.render()).unwrap_or_default(),
            solution_code: node.outcome.as_ref().map(|o| o.artifact.concatenated.clone()).unwrap_or_default(),
            current_metrics: score_dict(node.outcome.as_ref()),
            dev_score: node.dev_score().unwrap_or(0.0),
            stage,
            prior_insights: Vec::new(),
        }
    }

    fn build_pool(&mut self) -> Result<(), SearchError> {
        let params = self.state.tree.params.clone();
        let size = params.expansion_width * params.max_depth();
        for &stage in &params.stage_schedule {
            let ctx = self.context_of(NodeId::ROOT, stage);
            let pool = self.oracles.static_pool(&ctx, size, params.seed)?;
            self.state.pool.insert(stage, pool);
        }
        self.sync_counts();
        Ok(())
    }

    fn expand(&mut self, id: NodeId) -> Result<(), SearchError> {
        let params = self.state.tree.params.clone();
        let depth = self.state.tree.node(id).depth;
        let stage = params.stage_at_depth(depth + 1).expect("expansion below depth limit");
        let proposals: Vec<(String, bool)> = if self.state.policy.introspective() {
            let ctx = self.context_of(id, stage);
            let cfg = self.config_of(id);
            let props = self.oracles.introspect(&ctx, &cfg, params.expansion_width)?;
            props.into_iter().map(|p| (p.insight, p.placeholder)).collect()
        } else {
            let pool = self.state.pool.get(&stage).map(Vec::as_slice).unwrap_or_default();
            let label = &self.state.tree.node(id).label;
            draw_from_pool(pool, params.expansion_width, params.seed, label)
                .into_iter()
                .map(|i| (i, false))
                .collect()
        };
        self.sync_counts();
        let mut children = Vec::with_capacity(proposals.len());
        for (insight, placeholder) in proposals {
            let child = self.state.tree.attach_child(id, stage, insight)?;
            self.state.tree.get_mut(child)?.placeholder = placeholder;
            children.push(child);
        }
        if self.state.policy.hybrid_reward() {
            for child in children {
                self.ensure_estimate(child)?;
            }
        }
        Ok(())
    }

    fn rollout(&mut self, id: NodeId) -> Result<RolloutRecord, SearchError> {
        self.ensure_plan(id)?;
        let hybrid = self.state.policy.hybrid_reward();
        let s_llm = if hybrid { Some(self.ensure_estimate(id)?) } else { None };
        let cfg = self.config_of(id);
        let plan = self.state.tree.node(id).plan.clone().expect("planned");
        let mut backend = Counted { inner: &mut *self.backend, requests: 0 };
        let sim = simulate(&self.state.task, &plan, &cfg, &mut self.state.cache, &mut backend)?;
        self.state.counters.backend_requests += backend.requests;
        self.state.counters.backend_stage_invocations += sim.invoked.len() as u64;
        self.sync_counts();

        let tree = &mut self.state.tree;
        let prior_visits = tree.node(id).visits;
        let s_actual = if sim.outcome.is_ok() { sim.outcome.dev_score } else { 0.0 };
        let reward = match s_llm {
            Some(est) => blend(est, s_actual, prior_visits, tree.params.gamma),
            None => s_actual,
        }
        .clamp(0.0, 1.0);
        tree.set_outcome(id, sim.outcome)?;
        tree.backpropagate(id, reward)?;
        let record = RolloutRecord { index: tree.rollouts_done, node: id, prior_visits, s_llm, s_actual, reward };
        tree.log.push(record.clone());
        Ok(record)
    }
}

/// Runs a complete search.
pub fn run_search(
    params: SearchParams,
    policy: SearchPolicy,
    task: ExperimentTask,
    oracles: &mut dyn SearchOracles,
    backend: &mut dyn ExperimentBackend,
) -> Result<SearchReport, SearchError> {
    Search::start(params, policy, task, oracles, backend)?.run()
}
