use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the five phases of a machine-learning workflow, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PipelineStage {
    Eda,
    DataPreprocessing,
    FeatureEngineering,
    ModelTraining,
    ModelEvaluation,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 5] = [
        PipelineStage::Eda,
        PipelineStage::DataPreprocessing,
        PipelineStage::FeatureEngineering,
        PipelineStage::ModelTraining,
        PipelineStage::ModelEvaluation,
    ];

    /// 1-based position in the workflow.
    pub fn ordinal(self) -> usize {
        self as usize + 1
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PipelineStage::Eda => "EDA",
            PipelineStage::DataPreprocessing => "Data Preprocessing",
            PipelineStage::FeatureEngineering => "Feature Engineering",
            PipelineStage::ModelTraining => "Model Training",
            PipelineStage::ModelEvaluation => "Model Evaluation",
        }
    }

    /// Short machine-friendly name used on the command line and in config files.
    pub fn slug(self) -> &'static str {
        match self {
            PipelineStage::Eda => "eda",
            PipelineStage::DataPreprocessing => "data_preprocessing",
            PipelineStage::FeatureEngineering => "feature_engineering",
            PipelineStage::ModelTraining => "model_training",
            PipelineStage::ModelEvaluation => "model_evaluation",
        }
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown pipeline stage `{0}`")]
pub struct UnknownStage(pub String);

impl FromStr for PipelineStage {
    type Err = UnknownStage;

    /// Accepts display names, slugs and a few common spellings, ignoring case,
    /// spaces, dashes and underscores.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-' | '&'))
            .flat_map(char::to_lowercase)
            .collect();
        let stage = match key.as_str() {
            "eda" | "exploratorydataanalysis" | "t1" | "τ1" => PipelineStage::Eda,
            "datapreprocessing" | "preprocessing" | "t2" | "τ2" => PipelineStage::DataPreprocessing,
            "featureengineering" | "t3" | "τ3" => PipelineStage::FeatureEngineering,
            "modeltraining" | "training" | "t4" | "τ4" => PipelineStage::ModelTraining,
            "modelevaluation" | "evaluation" | "t5" | "τ5" => PipelineStage::ModelEvaluation,
            _ => return Err(UnknownStage(s.to_string())),
        };
        Ok(stage)
    }
}
