//! Planning and execution of pipeline configurations.
//!
//! A configuration assigns at most one insight to each pipeline stage. It is
//! turned into a five-step [`SolutionPlan`], and an [`ExperimentBackend`]
//! writes and runs the code for each stage. [`simulate`] routes execution
//! through the [`StageCache`] so that configurations sharing a stage prefix
//! reuse earlier stage code.

mod backend;
mod cache;
mod landscape;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::llm::{extract_json_block, ChatOracle, GenParams, Message, OracleError};
use crate::stage::PipelineStage;

pub use backend::{
    BackendError, BackendRequest, BackendResponse, CommandBackend, ConfigEntry, ExperimentBackend,
    RecordingBackend, ReplayBackend, StageCode, StageInstruction,
};
pub use cache::{cache_prefix_lookup, prefix_key, PrefixLookup, StageCache};
pub use landscape::{
    sim_introspector, static_pool_draw, LandscapeShape, SimBackend, SimError, SimLandscape,
};

/// Insights along a root-to-node path, keyed by stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub insights: BTreeMap<PipelineStage, String>,
}

impl PipelineConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, stage: PipelineStage, insight: impl Into<String>) -> Self {
        self.insights.insert(stage, insight.into());
        self
    }

    pub fn depth(&self) -> usize {
        self.insights.len()
    }

    pub fn insight(&self, stage: PipelineStage) -> Option<&str> {
        self.insights.get(&stage).map(String::as_str)
    }

    /// All five stages in order, with the insight for each (if any).
    pub fn entries(&self) -> Vec<ConfigEntry> {
        PipelineStage::ALL
            .iter()
            .map(|&stage| ConfigEntry { stage, insight: self.insight(stage).map(str::to_string) })
            .collect()
    }

    /// Stable text key identifying the whole configuration.
    pub fn key(&self) -> String {
        prefix_key(&self.entries())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionPlan {
    /// One instruction per stage, in stage order.
    pub instructions: Vec<StageInstruction>,
}

const BASELINE_STEPS: [&str; 5] = [
    "Explore the training data: inspect feature distributions, missing values and outliers.",
    "Preprocess the data: impute missing values, encode categorical columns and scale numeric features, applying the same transformations to the train, dev and test splits.",
    "Engineer additional features that may help the model, without using the target column.",
    "Train a model on the processed training data and tune its hyperparameters on the dev split.",
    "Evaluate the model on the train, dev and test splits with the task metric and save the dev and test predictions.",
];

impl SolutionPlan {
    /// The no-insight plan.
    pub fn baseline() -> Self {
        Self {
            instructions: PipelineStage::ALL
                .iter()
                .zip(BASELINE_STEPS)
                .map(|(&stage, text)| StageInstruction { stage, instruction: text.to_string() })
                .collect(),
        }
    }

    /// Replaces the instruction of every stage carrying an insight by the insight itself.
    pub fn overlay(mut self, config: &PipelineConfig) -> Self {
        for step in &mut self.instructions {
            if let Some(insight) = config.insight(step.stage) {
                if !step.instruction.contains(insight) {
                    step.instruction = insight.to_string();
                }
            }
        }
        self
    }

    pub fn instruction(&self, stage: PipelineStage) -> Option<&str> {
        self.instructions.iter().find(|s| s.stage == stage).map(|s| s.instruction.as_str())
    }

    pub fn is_complete(&self) -> bool {
        self.instructions.len() == PipelineStage::ALL.len()
            && self.instructions.iter().zip(PipelineStage::ALL).all(|(s, t)| s.stage == t)
    }

    /// Numbered list, one line per stage.
    pub fn render(&self) -> String {
        self.instructions
            .iter()
            .map(|s| format!("{}. {}", s.stage.ordinal(), s.instruction))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionArtifact {
    pub per_stage_code: BTreeMap<PipelineStage, String>,
    pub concatenated: String,
}

impl SolutionArtifact {
    pub fn from_stages(per_stage_code: BTreeMap<PipelineStage, String>) -> Self {
        let concatenated = per_stage_code.values().cloned().collect::<Vec<_>>().join("\n");
        Self { per_stage_code, concatenated }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub train_score: Option<f64>,
    pub dev_score: f64,
    pub test_score: f64,
    pub status: OutcomeStatus,
    pub artifact: SolutionArtifact,
}

impl ExperimentOutcome {
    pub fn failed(artifact: SolutionArtifact) -> Self {
        Self {
            train_score: None,
            dev_score: 0.0,
            test_score: 0.0,
            status: OutcomeStatus::Failed,
            artifact,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == OutcomeStatus::Ok
    }
}

/// Problem description and dataset handed to planners and backends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentTask {
    pub problem: String,
    pub metadata: String,
    pub dataset_ref: String,
}

impl Default for ExperimentTask {
    fn default() -> Self {
        Self {
            problem: "Predict the target column of the provided tabular dataset.".into(),
            metadata: "Tabular data split into train, dev and test files.".into(),
            dataset_ref: "dataset".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("problem description is empty")]
    EmptyProblem,
    #[error("plan does not cover every stage exactly once")]
    IncompletePlan,
    #[error("planner oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("planner reply: {0}")]
    BadPlan(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

const PLAN_PROMPT: &str = "You are planning a machine learning experiment.

# Problem
{problem}

# Dataset metadata
{metadata}

# Required stage insights
{insights}

Write a plan with exactly five steps, one per stage, in this order: EDA, Data Preprocessing, Feature Engineering, Model Training, Model Evaluation. When a stage has a required insight, that step must follow the insight.

Respond with a JSON object of the form:
```json
{\"plan\": [\"step 1\", \"step 2\", \"step 3\", \"step 4\", \"step 5\"]}
```
";

pub fn render_plan_prompt(problem: &str, metadata: &str, config: &PipelineConfig) -> String {
    let insights = if config.insights.is_empty() {
        "None.".to_string()
    } else {
        config
            .insights
            .iter()
            .map(|(stage, insight)| format!("- {stage}: {insight}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    PLAN_PROMPT
        .replace("{problem}", problem)
        .replace("{metadata}", metadata)
        .replace("{insights}", &insights)
}

pub fn parse_plan_reply(reply: &str) -> Result<SolutionPlan, ExperimentError> {
    #[derive(Deserialize)]
    struct Reply {
        plan: Vec<String>,
    }
    let block = extract_json_block(reply).map_err(|e| ExperimentError::BadPlan(e.to_string()))?;
    let parsed: Reply = serde_json::from_str(block).map_err(|e| ExperimentError::BadPlan(e.to_string()))?;
    if parsed.plan.len() != PipelineStage::ALL.len() {
        return Err(ExperimentError::BadPlan(format!("expected 5 steps, got {}", parsed.plan.len())));
    }
    let instructions = PipelineStage::ALL
        .iter()
        .zip(parsed.plan)
        .map(|(&stage, text)| StageInstruction { stage, instruction: strip_step_number(&text).to_string() })
        .collect();
    Ok(SolutionPlan { instructions })
}

fn strip_step_number(text: &str) -> &str {
    let t = text.trim();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        if let Some(rest) = t[digits..].strip_prefix('.') {
            return rest.trim_start();
        }
    }
    t
}

/// Asks the planner model for a five-step plan realising `config`. Stages
/// that carry an insight always end up containing it verbatim.
pub fn plan(
    task: &ExperimentTask,
    config: &PipelineConfig,
    oracle: &mut dyn ChatOracle,
    params: &GenParams,
) -> Result<SolutionPlan, ExperimentError> {
    if task.problem.trim().is_empty() {
        return Err(ExperimentError::EmptyProblem);
    }
    let prompt = render_plan_prompt(&task.problem, &task.metadata, config);
    let reply = oracle.chat(&[Message::user(prompt)], params)?;
    Ok(parse_plan_reply(&reply)?.overlay(config))
}

/// Result of one cached simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub outcome: ExperimentOutcome,
    pub reused: Vec<PipelineStage>,
    /// Stages the backend had to generate code for.
    pub invoked: Vec<PipelineStage>,
}

fn request_for(
    task: &ExperimentTask,
    plan: &SolutionPlan,
    config: &PipelineConfig,
    reusable: Vec<StageCode>,
    missing: Vec<PipelineStage>,
) -> BackendRequest {
    BackendRequest {
        problem: task.problem.clone(),
        metadata: task.metadata.clone(),
        dataset_ref: task.dataset_ref.clone(),
        config: config.entries(),
        instructions: plan.instructions.clone(),
        reusable_code: reusable,
        missing_stages: missing,
    }
}

fn outcome_from(response: BackendResponse, reusable: &[StageCode]) -> Result<ExperimentOutcome, BackendError> {
    let mut code: BTreeMap<PipelineStage, String> = reusable.iter().map(|c| (c.stage, c.code.clone())).collect();
    for c in response.stage_code {
        code.insert(c.stage, c.code);
    }
    let artifact = SolutionArtifact::from_stages(code);
    if response.status == OutcomeStatus::Failed {
        return Ok(ExperimentOutcome::failed(artifact));
    }
    for (name, v) in [("dev_score", response.dev_score), ("test_score", response.test_score)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(BackendError::BadResponse(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok(ExperimentOutcome {
        train_score: response.train_score,
        dev_score: response.dev_score,
        test_score: response.test_score,
        status: OutcomeStatus::Ok,
        artifact,
    })
}

/// Writes and runs code for every stage of `plan`, with no reuse.
pub fn code_and_execute(
    task: &ExperimentTask,
    plan: &SolutionPlan,
    config: &PipelineConfig,
    backend: &mut dyn ExperimentBackend,
) -> Result<ExperimentOutcome, ExperimentError> {
    if !plan.is_complete() {
        return Err(ExperimentError::IncompletePlan);
    }
    let req = request_for(task, plan, config, Vec::new(), PipelineStage::ALL.to_vec());
    let response = backend.execute(&req)?;
    Ok(outcome_from(response, &[])?)
}

/// Runs `config` to a terminal pipeline, reusing cached stage code for the
/// longest matching prefix and storing whatever the backend generates.
pub fn simulate(
    task: &ExperimentTask,
    plan: &SolutionPlan,
    config: &PipelineConfig,
    cache: &mut StageCache,
    backend: &mut dyn ExperimentBackend,
) -> Result<Simulation, ExperimentError> {
    if !plan.is_complete() {
        return Err(ExperimentError::IncompletePlan);
    }
    let lookup = cache_prefix_lookup(cache, config);
    let reused: Vec<PipelineStage> = lookup.reused.iter().map(|c| c.stage).collect();
    if lookup.missing.is_empty() {
        if let Some(outcome) = cache.outcome(config) {
            return Ok(Simulation { outcome: outcome.clone(), reused, invoked: Vec::new() });
        }
    }
    let missing = lookup.missing.clone();
    let req = request_for(task, plan, config, lookup.reused.clone(), missing.clone());
    let response = backend.execute(&req)?;
    let outcome = outcome_from(response, &lookup.reused)?;
    if outcome.is_ok() {
        cache.store(config, &outcome);
    }
    Ok(Simulation { outcome, reused, invoked: missing })
}
