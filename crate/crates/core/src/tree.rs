//! Search tree, UCT selection, hybrid reward blending and backpropagation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::experimenter::{ExperimentOutcome, OutcomeStatus, SolutionPlan};
use crate::stage::PipelineStage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("no simulated node in tree")]
    NoSimulatedNode,
}

/// Arena index of a node. Creation order, so lower ids were created earlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Fresh,
    Expanded,
    Simulated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Path label: "0" for the root, parent label + "-" + child index otherwise.
    pub label: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    pub stage: Option<PipelineStage>,
    pub insight: Option<String>,
    /// Insight produced by a fallback after the proposal retries ran out.
    #[serde(default)]
    pub placeholder: bool,
    pub visits: u64,
    pub cum_value: f64,
    pub s_llm: Option<f64>,
    pub outcome: Option<ExperimentOutcome>,
    pub status: NodeStatus,
    pub plan: Option<SolutionPlan>,
}

impl Node {
    /// Mean backpropagated reward, 0 when unvisited.
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.cum_value / self.visits as f64
        }
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self.status, NodeStatus::Simulated | NodeStatus::Failed)
    }

    pub fn dev_score(&self) -> Option<f64> {
        self.outcome.as_ref().map(|o| o.dev_score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    /// Rollout budget `k`.
    pub rollouts: usize,
    pub gamma: f64,
    pub alpha_explore: f64,
    pub expansion_width: usize,
    /// Stage refined at depth 1, depth 2, ...
    pub stage_schedule: Vec<PipelineStage>,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            rollouts: 10,
            gamma: 0.2,
            alpha_explore: 2.0,
            expansion_width: 5,
            stage_schedule: vec![
                PipelineStage::FeatureEngineering,
                PipelineStage::ModelTraining,
                PipelineStage::ModelEvaluation,
            ],
            seed: 0,
        }
    }
}

impl SearchParams {
    pub fn max_depth(&self) -> usize {
        self.stage_schedule.len()
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(TreeError::InvalidParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.alpha_explore >= 0.0 && self.alpha_explore.is_finite()) {
            return Err(TreeError::InvalidParams(format!(
                "alpha_explore must be >= 0, got {}",
                self.alpha_explore
            )));
        }
        if self.expansion_width == 0 {
            return Err(TreeError::InvalidParams("expansion width must be >= 1".into()));
        }
        if self.stage_schedule.is_empty() {
            return Err(TreeError::InvalidParams("stage schedule is empty".into()));
        }
        if self.stage_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TreeError::InvalidParams(
                "stage schedule must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Stage refined by children created at `depth` (1-based).
    pub fn stage_at_depth(&self, depth: usize) -> Option<PipelineStage> {
        depth.checked_sub(1).and_then(|i| self.stage_schedule.get(i).copied())
    }
}

/// One completed rollout, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// 1-based rollout index.
    pub index: usize,
    pub node: NodeId,
    /// Visit count of the simulated node before this rollout.
    pub prior_visits: u64,
    pub s_llm: Option<f64>,
    pub s_actual: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub params: SearchParams,
    pub rollouts_done: usize,
    pub log: Vec<RolloutRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BestNodes {
    pub by_dev: NodeId,
    pub by_q: NodeId,
}

/// UCT score. Unvisited nodes score `+inf` so they are tried first.
pub fn uct_score(cum_value: f64, visits: u64, parent_visits: u64, alpha_explore: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let n = visits as f64;
    let exploit = cum_value / n;
    if alpha_explore == 0.0 {
        return exploit;
    }
    let ln_parent = (parent_visits.max(1) as f64).ln();
    exploit + alpha_explore * (ln_parent / n).sqrt()
}

pub fn uct(node: &Node, parent_visits: u64, alpha_explore: f64) -> f64 {
    uct_score(node.cum_value, node.visits, parent_visits, alpha_explore)
}

/// Blending weight on the model estimate: `gamma / (visits + gamma)`.
pub fn blend_weight(visits: u64, gamma: f64) -> f64 {
    gamma / (visits as f64 + gamma)
}

/// Hybrid reward: model estimate early, measured score as visits accumulate.
/// `visits` is the node's count before the current rollout.
pub fn blend(s_llm: f64, s_actual: f64, visits: u64, gamma: f64) -> f64 {
    let alpha = blend_weight(visits, gamma);
    alpha * s_llm + (1.0 - alpha) * s_actual
}

impl Tree {
    pub fn new(root_plan: SolutionPlan, params: SearchParams) -> Result<Self, TreeError> {
        params.validate()?;
        let root = Node {
            id: NodeId::ROOT,
            label: "0".into(),
            parent: None,
            children: Vec::new(),
            depth: 0,
            stage: None,
            insight: None,
            placeholder: false,
            visits: 0,
            cum_value: 0.0,
            s_llm: None,
            outcome: None,
            status: NodeStatus::Fresh,
            plan: Some(root_plan),
        };
        Ok(Self {
            nodes: vec![root],
            params,
            rollouts_done: 0,
            log: Vec::new(),
        })
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: NodeId) -> Result<&Node, TreeError> {
        self.nodes.get(id.0).ok_or(TreeError::UnknownNode(id.0))
    }

    pub fn get_mut(&mut self, id: NodeId) -> Result<&mut Node, TreeError> {
        self.nodes.get_mut(id.0).ok_or(TreeError::UnknownNode(id.0))
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn find_label(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.label == label).map(|n| n.id)
    }

    /// Nodes from `id` up to and including the root.
    pub fn ancestry(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(parent) = self.nodes[cur.0].parent {
            path.push(parent);
            cur = parent;
        }
        path
    }

    /// Appends a fresh child; its index is the parent's current child count.
    pub fn attach_child(
        &mut self,
        parent: NodeId,
        stage: PipelineStage,
        insight: String,
    ) -> Result<NodeId, TreeError> {
        let id = NodeId(self.nodes.len());
        let p = self.get_mut(parent)?;
        let label = format!("{}-{}", p.label, p.children.len());
        let depth = p.depth + 1;
        p.children.push(id);
        if p.status == NodeStatus::Fresh {
            p.status = NodeStatus::Expanded;
        }
        self.nodes.push(Node {
            id,
            label,
            parent: Some(parent),
            children: Vec::new(),
            depth,
            stage: Some(stage),
            insight: Some(insight),
            placeholder: false,
            visits: 0,
            cum_value: 0.0,
            s_llm: None,
            outcome: None,
            status: NodeStatus::Fresh,
            plan: None,
        });
        Ok(id)
    }

    /// Index of the child with the highest UCT score; ties go to the lowest index.
    pub fn best_uct_child(&self, id: NodeId) -> Option<NodeId> {
        let node = &self.nodes[id.0];
        let alpha = self.params.alpha_explore;
        let mut best: Option<(NodeId, f64)> = None;
        for &child in &node.children {
            let score = uct(&self.nodes[child.0], node.visits, alpha);
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((child, score)),
            }
        }
        best.map(|(c, _)| c)
    }

    /// Descends from the root by UCT until reaching a node without children
    /// or a node at the maximum depth.
    pub fn select_leaf(&self) -> NodeId {
        let max_depth = self.params.max_depth();
        let mut cur = NodeId::ROOT;
        loop {
            let node = &self.nodes[cur.0];
            if node.children.is_empty() || node.depth >= max_depth {
                return cur;
            }
            cur = self.best_uct_child(cur).expect("children non-empty");
        }
    }

    /// Adds `reward` to every node from `from` up to the root and counts one rollout.
    pub fn backpropagate(&mut self, from: NodeId, reward: f64) -> Result<(), TreeError> {
        self.get(from)?;
        if !(0.0..=1.0).contains(&reward) {
            return Err(TreeError::RewardOutOfRange(reward));
        }
        for id in self.ancestry(from) {
            let node = &mut self.nodes[id.0];
            node.visits += 1;
            node.cum_value += reward;
        }
        self.rollouts_done += 1;
        Ok(())
    }

    /// Records a simulation result on `id` and sets its status.
    pub fn set_outcome(&mut self, id: NodeId, outcome: ExperimentOutcome) -> Result<(), TreeError> {
        let node = self.get_mut(id)?;
        node.status = match outcome.status {
            OutcomeStatus::Ok => NodeStatus::Simulated,
            OutcomeStatus::Failed => NodeStatus::Failed,
        };
        node.outcome = Some(outcome);
        Ok(())
    }

    /// Best node by development score among successful simulations, and by
    /// mean value among visited nodes. Ties go to the earliest created node.
    pub fn best_node(&self) -> Result<BestNodes, TreeError> {
        let mut by_dev: Option<(NodeId, f64)> = None;
        for node in &self.nodes {
            if node.status != NodeStatus::Simulated {
                continue;
            }
            let dev = node.dev_score().unwrap_or(0.0);
            if by_dev.is_none_or(|(_, b)| dev > b) {
                by_dev = Some((node.id, dev));
            }
        }
        let (by_dev, _) = by_dev.ok_or(TreeError::NoSimulatedNode)?;
        let mut by_q: Option<(NodeId, f64)> = None;
        for node in self.nodes.iter().filter(|n| n.visits > 0) {
            let q = node.mean_value();
            if by_q.is_none_or(|(_, b)| q > b) {
                by_q = Some((node.id, q));
            }
        }
        let by_q = by_q.map_or(by_dev, |(id, _)| id);
        Ok(BestNodes { by_dev, by_q })
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
