use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Serialize;

use crate::experimenter::{prefix_key, ExperimentOutcome, PipelineConfig};
use crate::pyrepr;
use crate::tree::{NodeId, NodeStatus, Tree};

/// Python-dict rendering of a simulation result; `{}` when there is none.
pub fn score_dict(outcome: Option<&ExperimentOutcome>) -> String {
    let Some(o) = outcome else { return "{}".into() };
    if !o.is_ok() {
        return "{'test_score': 0, 'dev_score': 0, 'score': 0}".into();
    }
    let (dev, test) = (pyrepr::float(o.dev_score), pyrepr::float(o.test_score));
    match o.train_score {
        Some(train) => format!(
            "{{'train_score': {}, 'dev_score': {dev}, 'test_score': {test}, 'score': {dev}}}",
            pyrepr::float(train)
        ),
        None => format!("{{'test_score': {test}, 'dev_score': {dev}, 'score': {dev}}}"),
    }
}

fn avg_score(tree: &Tree, id: NodeId) -> String {
    let n = tree.node(id);
    if n.visits == 0 {
        "0".into()
    } else {
        pyrepr::float(n.mean_value())
    }
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

/// Distinct stage-code entries generated by successful simulations.
fn unique_codes(tree: &Tree) -> usize {
    let mut keys = BTreeSet::new();
    for n in tree.nodes.iter().filter(|n| n.status == NodeStatus::Simulated) {
        let entries = config_of(tree, n.id).entries();
        for i in 0..entries.len() {
            keys.insert(prefix_key(&entries[..=i]));
        }
    }
    keys.len()
}

/// Plan lines shown for a node: the full plan at the root, the refined
/// stage's step elsewhere.
fn plan_lines(tree: &Tree, id: NodeId) -> Vec<String> {
    let n = tree.node(id);
    match n.stage {
        None => n.plan.as_ref().map(|p| p.render().lines().map(str::to_string).collect()).unwrap_or_default(),
        Some(stage) => {
            let text = n
                .plan
                .as_ref()
                .and_then(|p| p.instruction(stage))
                .or(n.insight.as_deref())
                .unwrap_or_default();
            vec![format!("{}. {text}", stage.ordinal())]
        }
    }
}

fn preorder(tree: &Tree) -> Vec<NodeId> {
    let mut out = Vec::with_capacity(tree.len());
    let mut stack = vec![NodeId::ROOT];
    while let Some(id) = stack.pop() {
        out.push(id);
        stack.extend(tree.node(id).children.iter().rev());
    }
    out
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

/// Human-readable dump of the whole tree, one indented block per node.
pub fn dump_tree_text(tree: &Tree) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Number of simulations: {}", tree.rollouts_done);
    for id in preorder(tree) {
        let n = tree.node(id);
        let pad = "\t".repeat(n.depth);
        let _ = writeln!(out, "{pad}Node id: {}", n.label);
        let _ = writeln!(out, "{pad}Plans: ");
        for line in plan_lines(tree, id) {
            let _ = writeln!(out, "{pad}{line}");
        }
        let _ = writeln!(out, "{pad}Simulated: {}", py_bool(n.status == NodeStatus::Simulated));
        let _ = writeln!(
            out,
            "{pad}Score: avg score: {}, simulated score: {}, Visits: {}",
            avg_score(tree, id),
            score_dict(n.outcome.as_ref()),
            n.visits
        );
        out.push('\n');
    }
    let _ = writeln!(out, "Generated {} unique codes.", unique_codes(tree));
    match tree.best_node() {
        Ok(best) => {
            let q = tree.node(best.by_q);
            let dev = tree.node(best.by_dev);
            let _ = writeln!(out, "Best node: {}, score: {}", q.label, score_dict(q.outcome.as_ref()));
            let _ = writeln!(out, "Dev best node: {}, score: {}", dev.label, score_dict(dev.outcome.as_ref()));
            let test = dev.outcome.as_ref().map_or(0.0, |o| o.test_score);
            let _ = writeln!(out, "Grader score: {}", pyrepr::float(test));
        }
        Err(_) => out.push_str("Best node: None\nDev best node: None\n"),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDump {
    pub label: String,
    pub depth: usize,
    pub stage: Option<crate::PipelineStage>,
    pub insight: Option<String>,
    pub placeholder: bool,
    pub plan: Vec<String>,
    pub status: NodeStatus,
    pub s_llm: Option<f64>,
    pub avg_score: f64,
    pub visits: u64,
    pub outcome: Option<OutcomeDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeDump {
    pub ok: bool,
    pub train_score: Option<f64>,
    pub dev_score: f64,
    pub test_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeDump {
    pub simulations: usize,
    pub nodes: Vec<NodeDump>,
    pub unique_codes: usize,
    pub best_node: Option<String>,
    pub dev_best_node: Option<String>,
    pub grader_score: Option<f64>,
}

impl TreeDump {
    pub fn new(tree: &Tree) -> Self {
        let nodes = preorder(tree)
            .into_iter()
            .map(|id| {
                let n = tree.node(id);
                NodeDump {
                    label: n.label.clone(),
                    depth: n.depth,
                    stage: n.stage,
                    insight: n.insight.clone(),
                    placeholder: n.placeholder,
                    plan: plan_lines(tree, id),
                    status: n.status,
                    s_llm: n.s_llm,
                    avg_score: n.mean_value(),
                    visits: n.visits,
                    outcome: n.outcome.as_ref().map(|o| OutcomeDump {
                        ok: o.is_ok(),
                        train_score: o.train_score,
                        dev_score: o.dev_score,
                        test_score: o.test_score,
                    }),
                }
            })
            .collect();
        let best = tree.best_node().ok();
        Self {
            simulations: tree.rollouts_done,
            nodes,
            unique_codes: unique_codes(tree),
            best_node: best.map(|b| tree.node(b.by_q).label.clone()),
            dev_best_node: best.map(|b| tree.node(b.by_dev).label.clone()),
            grader_score: best.and_then(|b| tree.node(b.by_dev).outcome.as_ref()).map(|o| o.test_score),
        }
    }
}

pub fn dump_tree_json(tree: &Tree) -> String {
    let mut s = serde_json::to_string_pretty(&TreeDump::new(tree)).expect("dump serializes");
    s.push('\n');
    s
}
