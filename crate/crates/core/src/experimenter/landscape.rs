//! Seeded synthetic quality landscape over pipeline configurations.
//!
//! Each stage in the landscape has a universe of `m` insight ids. Quality is a
//! weighted sum of per-stage unimodal bumps plus "ridge" interactions between
//! consecutive stages (the best id at one stage shifts with the id chosen at
//! the previous one), affinely rescaled so that the worst configuration scores
//! 0 and the best scores 1. A stage without an insight follows the baseline
//! plan, which scores `default_level` of the way from the average choice for
//! that stage to the best one.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendRequest, BackendResponse, ExperimentBackend, OutcomeStatus,
    PipelineConfig, StageCode,
};
use crate::introspection::InsightProposal;
use crate::pyrepr;
use crate::rng::substream;
use crate::stage::PipelineStage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeShape {
    /// Size `m` of each stage's insight universe.
    pub insights_per_stage: usize,
    pub stages: Vec<PipelineStage>,
    pub stage_weights: Vec<f64>,
    /// Range the per-stage bump width is drawn from.
    pub bump_width: (f64, f64),
    /// Ridge height, multiplied by the weight of the later stage of the pair.
    pub ridge_scale: f64,
    pub ridge_width: f64,
    /// Std-dev of per-cell noise added to the ridge table.
    pub jitter: f64,
    /// Where an insight-free stage sits between the average (0) and best (1) choice.
    pub default_level: f64,
    pub noise_dev: f64,
    pub noise_value: f64,
    /// Std-dev of the simulated introspector's lookahead error.
    pub noise_introspect: f64,
    pub fail_rate: f64,
}

impl LandscapeShape {
    /// The ridge landscape used for the policy ablations.
    pub fn ridge() -> Self {
        Self {
            insights_per_stage: 8,
            stages: vec![
                PipelineStage::FeatureEngineering,
                PipelineStage::ModelTraining,
                PipelineStage::ModelEvaluation,
            ],
            stage_weights: vec![1.0, 0.8, 0.3],
            bump_width: (0.8, 1.6),
            ridge_scale: 0.6,
            ridge_width: 1.0,
            jitter: 0.05,
            default_level: 0.3,
            noise_dev: 0.05,
            noise_value: 0.1,
            noise_introspect: 0.15,
            fail_rate: 0.0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.insights_per_stage == 0 || self.insights_per_stage > 16 {
            return Err(SimError::BadShape("insights_per_stage must be in 1..=16".into()));
        }
        if self.stages.is_empty() || self.stages.len() > 5 {
            return Err(SimError::BadShape("stages must list 1..=5 stages".into()));
        }
        if self.stage_weights.len() != self.stages.len() {
            return Err(SimError::BadShape("one stage weight per stage".into()));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::BadShape("stages must be strictly increasing".into()));
        }
        let ok_noise = [self.noise_dev, self.noise_value, self.noise_introspect, self.jitter]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite());
        if !ok_noise || !(0.0..=1.0).contains(&self.fail_rate) || !(0.0..=1.0).contains(&self.default_level) {
            return Err(SimError::BadShape(
                "noise levels must be >= 0, fail_rate and default_level in [0, 1]".into(),
            ));
        }
        if self.bump_width.0 <= 0.0 || self.bump_width.1 < self.bump_width.0 || self.ridge_width <= 0.0 {
            return Err(SimError::BadShape("widths must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LandscapeShape {
    fn default() -> Self {
        Self::ridge()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid landscape shape: {0}")]
    BadShape(String),
    #[error("stage {0} is not part of the landscape")]
    UnknownStage(PipelineStage),
    #[error("every insight of stage {0} is already used")]
    UniverseExhausted(PipelineStage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLandscape {
    pub seed: u64,
    pub shape: LandscapeShape,
    /// `bumps[s][i]` for stage index `s`, insight id `i`.
    bumps: Vec<Vec<f64>>,
    /// `ridges[s][i][j]` couples stage `s` id `i` with stage `s + 1` id `j`.
    ridges: Vec<Vec<Vec<f64>>>,
    raw_min: f64,
    raw_max: f64,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn circular_distance(a: usize, b: usize, m: usize) -> f64 {
    let d = a.abs_diff(b);
    d.min(m - d) as f64
}

impl SimLandscape {
    pub fn new(seed: u64, shape: LandscapeShape) -> Result<Self, SimError> {
        shape.validate()?;
        let m = shape.insights_per_stage;
        let mut rng = substream(seed, "landscape", "");
        let bumps = shape
            .stages
            .iter()
            .map(|_| {
                let peak = rng.random_range(0.0..=(m - 1) as f64);
                let width = rng.random_range(shape.bump_width.0..=shape.bump_width.1);
                (0..m).map(|i| (-0.5 * ((i as f64 - peak) / width).powi(2)).exp()).collect()
            })
            .collect();
        let ridges = (1..shape.stages.len())
            .map(|s| {
                let height = shape.ridge_scale * shape.stage_weights[s];
                let offset = rng.random_range(0..m);
                (0..m)
                    .map(|i| {
                        (0..m)
                            .map(|j| {
                                let d = circular_distance(j, (i + offset) % m, m);
                                height * (-0.5 * (d / shape.ridge_width).powi(2)).exp()
                                    + shape.jitter * normal(&mut rng)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut land = Self { seed, shape, bumps, ridges, raw_min: 0.0, raw_max: 1.0 };
        let (lo, hi) = land.raw_extremes();
        land.raw_min = lo;
        land.raw_max = if hi > lo { hi } else { lo + 1.0 };
        Ok(land)
    }

    pub fn universe_size(&self) -> usize {
        self.shape.insights_per_stage
    }

    pub fn stages(&self) -> &[PipelineStage] {
        &self.shape.stages
    }

    fn stage_index(&self, stage: PipelineStage) -> Option<usize> {
        self.shape.stages.iter().position(|s| *s == stage)
    }

    /// Canonical text of insight `id` at `stage`.
    pub fn insight_text(&self, stage: PipelineStage, id: usize) -> String {
        format!("{} option {id}", stage.display_name())
    }

    /// Inverse of [`Self::insight_text`]; `None` for text outside the universe.
    pub fn insight_id(&self, stage: PipelineStage, text: &str) -> Option<usize> {
        let prefix = format!("{} option ", stage.display_name());
        let id: usize = text.strip_prefix(&prefix)?.parse().ok()?;
        (id < self.universe_size() && self.stage_index(stage).is_some()).then_some(id)
    }

    /// Per-landscape-stage ids of `config`; stages without a recognised insight are `None`.
    pub fn ids(&self, config: &PipelineConfig) -> Vec<Option<usize>> {
        self.shape
            .stages
            .iter()
            .map(|&s| config.insight(s).and_then(|t| self.insight_id(s, t)))
            .collect()
    }

    /// Contribution of an insight-free stage given the values its choices would have.
    fn default_of(&self, values: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let max = values.fold(f64::NEG_INFINITY, f64::max);
        mean + self.shape.default_level * (max - mean)
    }

    fn raw(&self, ids: &[Option<usize>]) -> f64 {
        let mut total = 0.0;
        for (s, id) in ids.iter().enumerate() {
            let bump = id.map_or_else(|| self.default_of(self.bumps[s].iter().copied()), |i| self.bumps[s][i]);
            total += self.shape.stage_weights[s] * bump;
        }
        for (s, pair) in ids.windows(2).enumerate() {
            let table = &self.ridges[s];
            total += match (pair[0], pair[1]) {
                (Some(i), Some(j)) => table[i][j],
                (Some(i), None) => self.default_of(table[i].iter().copied()),
                (None, Some(j)) => self.default_of(table.iter().map(|row| row[j])),
                (None, None) => self.default_of(table.iter().flatten().copied()),
            };
        }
        total
    }

    fn all_id_vectors(&self) -> Vec<Vec<Option<usize>>> {
        let m = self.universe_size();
        let mut out = vec![Vec::new()];
        for _ in &self.shape.stages {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<Option<usize>>| {
                    std::iter::once(None).chain((0..m).map(Some)).map(move |id| {
                        let mut v = prefix.clone();
                        v.push(id);
                        v
                    })
                })
                .collect();
        }
        out
    }

    fn raw_extremes(&self) -> (f64, f64) {
        self.all_id_vectors()
            .iter()
            .map(|ids| self.raw(ids))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    fn quality_of_ids(&self, ids: &[Option<usize>]) -> f64 {
        ((self.raw(ids) - self.raw_min) / (self.raw_max - self.raw_min)).clamp(0.0, 1.0)
    }

    /// Noise-free quality in `[0, 1]`.
    pub fn true_quality(&self, config: &PipelineConfig) -> f64 {
        self.quality_of_ids(&self.ids(config))
    }

    /// Highest quality over every configuration, with the ids that reach it.
    pub fn optimum(&self) -> (f64, Vec<Option<usize>>) {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for ids in self.all_id_vectors() {
            let q = self.quality_of_ids(&ids);
            if q > best.0 {
                best = (q, ids);
            }
        }
        best
    }

    pub fn config_from_ids(&self, ids: &[Option<usize>]) -> PipelineConfig {
        let mut cfg = PipelineConfig::new();
        for (s, id) in ids.iter().enumerate() {
            if let Some(i) = id {
                let stage = self.shape.stages[s];
                cfg = cfg.with(stage, self.insight_text(stage, *i));
            }
        }
        cfg
    }

    fn noisy(&self, purpose: &str, key: &str, base: f64, sd: f64) -> f64 {
        let z = normal(&mut substream(self.seed, purpose, key));
        (base + sd * z).clamp(0.0, 1.0)
    }

    /// Simulated dev score: quality plus seeded noise, clipped.
    pub fn dev_score(&self, config: &PipelineConfig) -> f64 {
        self.noisy("dev", &config.key(), self.true_quality(config), self.shape.noise_dev)
    }

    pub fn test_score(&self, config: &PipelineConfig) -> f64 {
        self.noisy("test", &config.key(), self.true_quality(config), self.shape.noise_dev)
    }

    /// Simulated value-model estimate: quality plus seeded noise, clipped.
    pub fn value_estimate(&self, config: &PipelineConfig) -> f64 {
        self.noisy("value", &config.key(), self.true_quality(config), self.shape.noise_value)
    }

    pub fn fails(&self, config: &PipelineConfig) -> bool {
        self.shape.fail_rate > 0.0 && substream(self.seed, "fail", &config.key()).random::<f64>() < self.shape.fail_rate
    }

    /// Universe of `stage` as insight texts.
    pub fn universe(&self, stage: PipelineStage) -> Result<Vec<String>, SimError> {
        self.stage_index(stage).ok_or(SimError::UnknownStage(stage))?;
        Ok((0..self.universe_size()).map(|i| self.insight_text(stage, i)).collect())
    }

    /// Lookahead error of the simulated introspector for one candidate.
    fn lookahead_noise(&self, parent: &PipelineConfig, stage: PipelineStage, id: usize) -> f64 {
        let key = format!("{}/{}/{id}", parent.key(), stage.slug());
        self.shape.noise_introspect * normal(&mut substream(self.seed, "introspect", &key))
    }
}

/// Proposes the unused insight at `stage` with the best noisy one-step
/// lookahead of true quality from `parent`.
pub fn sim_introspector(
    landscape: &SimLandscape,
    parent: &PipelineConfig,
    sibling_insights: &[String],
    stage: PipelineStage,
) -> Result<InsightProposal, SimError> {
    landscape.stage_index(stage).ok_or(SimError::UnknownStage(stage))?;
    let used: Vec<usize> = sibling_insights.iter().filter_map(|t| landscape.insight_id(stage, t)).collect();
    let parent_q = landscape.true_quality(parent);
    let mut best: Option<(usize, f64)> = None;
    for id in (0..landscape.universe_size()).filter(|i| !used.contains(i)) {
        let child = parent.clone().with(stage, landscape.insight_text(stage, id));
        let score = landscape.true_quality(&child) + landscape.lookahead_noise(parent, stage, id);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((id, score));
        }
    }
    let (id, projected) = best.ok_or(SimError::UniverseExhausted(stage))?;
    Ok(InsightProposal {
        task_type: stage,
        critic_feedback: format!(
            "Parent configuration scores {}; refining {} projects {}.",
            pyrepr::float(parent_q),
            stage,
            pyrepr::float(projected)
        ),
        insight: landscape.insight_text(stage, id),
        placeholder: false,
    })
}

/// Uniformly random insight at `stage` not in `used`.
pub fn static_pool_draw<R: Rng>(
    landscape: &SimLandscape,
    stage: PipelineStage,
    used: &[String],
    rng: &mut R,
) -> Result<String, SimError> {
    let free: Vec<String> = landscape.universe(stage)?.into_iter().filter(|t| !used.contains(t)).collect();
    if free.is_empty() {
        return Err(SimError::UniverseExhausted(stage));
    }
    let pick = rng.random_range(0..free.len());
    Ok(free[pick].clone())
}

/// Backend that scores configurations on a [`SimLandscape`].
#[derive(Debug, Clone)]
pub struct SimBackend {
    pub landscape: SimLandscape,
}

impl SimBackend {
    pub fn new(landscape: SimLandscape) -> Self {
        Self { landscape }
    }
}

impl ExperimentBackend for SimBackend {
    fn execute(&mut self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut config = PipelineConfig::new();
        for entry in &req.config {
            if let Some(ins) = &entry.insight {
                config = config.with(entry.stage, ins.clone());
            }
        }
        let instructions: BTreeMap<_, _> = req.instructions.iter().map(|i| (i.stage, i.instruction.as_str())).collect();
        let stage_code = req
            .missing_stages
            .iter()
            .map(|&stage| StageCode {
                stage,
                code: format!(
                    "# {}\n# {}\nrun_{}(data)\n",
                    stage,
                    instructions.get(&stage).copied().unwrap_or(""),
                    stage.slug()
                ),
            })
            .collect();
        if self.landscape.fails(&config) {
            return Ok(BackendResponse {
                status: OutcomeStatus::Failed,
                train_score: None,
                dev_score: 0.0,
                test_score: 0.0,
                stage_code,
            });
        }
        let q = self.landscape.true_quality(&config);
        Ok(BackendResponse {
            status: OutcomeStatus::Ok,
            train_score: Some((q + 0.1 * (1.0 - q)).min(1.0)),
            dev_score: self.landscape.dev_score(&config),
            test_score: self.landscape.test_score(&config),
            stage_code,
        })
    }
}
