//! Model-based value estimates: rubric prompt, score parsing and the
//! mapping onto the `[0, 1]` reward scale.

use serde_json::Value;

use crate::introspection::{parse_json_object, ParseError};
use crate::llm::{ChatOracle, GenParams, Message, OracleError};
use crate::pyrepr;

pub const EVALUATOR_SYSTEM_MSG: &str = include_str!("../assets/evaluator_system.txt");
pub const EVALUATION_CRITERIA: &str = include_str!("../assets/evaluation_criteria.txt");
pub const EVALUATE_NODE_PROMPT: &str = include_str!("../assets/evaluate_node.txt");

/// Appended to the user message when a reply could not be parsed.
pub const REPROMPT_SUFFIX: &str = "\n\nReturn only the JSON object.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricEvaluation {
    pub evaluation_feedback: String,
    pub total_score: u8,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalParseError {
    #[error(transparent)]
    Json(#[from] ParseError),
    #[error("total_score is not an integer: {0}")]
    NotInteger(String),
    #[error("total_score {0} outside [0, 100]")]
    OutOfRange(i64),
}

#[derive(Debug, thiserror::Error)]
pub enum ValuationError {
    #[error("{0} must be non-empty")]
    EmptyInput(&'static str),
    #[error("value oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("unparsable evaluation after re-prompt: {0}")]
    Parse(#[from] EvalParseError),
}

/// System and user messages for one evaluation.
pub fn render_evaluation_prompt(
    user_requirement: &str,
    candidate_plan: &str,
) -> Result<(String, String), ValuationError> {
    if user_requirement.trim().is_empty() {
        return Err(ValuationError::EmptyInput("user requirement"));
    }
    if candidate_plan.trim().is_empty() {
        return Err(ValuationError::EmptyInput("candidate plan"));
    }
    let user = pyrepr::format(
        EVALUATE_NODE_PROMPT,
        &[
            ("evaluation_Criteria", EVALUATION_CRITERIA),
            ("user_requirement", user_requirement),
            ("candidate_plan", candidate_plan),
        ],
    );
    Ok((EVALUATOR_SYSTEM_MSG.to_string(), user))
}

pub fn parse_evaluation(reply: &str) -> Result<RubricEvaluation, EvalParseError> {
    let map = parse_json_object(reply)?;
    let score = map
        .get("total_score")
        .or_else(|| map.get("Total_Score"))
        .ok_or(ParseError::MissingField("total_score"))?;
    let score = match score {
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i,
            (None, Some(f)) if f.fract() == 0.0 && f.abs() < 1e9 => f as i64,
            _ => return Err(EvalParseError::NotInteger(n.to_string())),
        },
        other => return Err(EvalParseError::NotInteger(other.to_string())),
    };
    if !(0..=100).contains(&score) {
        return Err(EvalParseError::OutOfRange(score));
    }
    let evaluation_feedback = map
        .get("evaluation_feedback")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Ok(RubricEvaluation { evaluation_feedback, total_score: score as u8 })
}

pub fn to_unit_score(e: &RubricEvaluation) -> f64 {
    f64::from(e.total_score) / 100.0
}

/// Scores `solution_text` with the rubric. One re-prompt is allowed for an
/// unparsable reply.
pub fn estimate_value(
    solution_text: &str,
    requirement: &str,
    oracle: &mut dyn ChatOracle,
    params: &GenParams,
) -> Result<f64, ValuationError> {
    let (system, user) = render_evaluation_prompt(requirement, solution_text)?;
    let reply = oracle.chat(&[Message::system(&system), Message::user(&user)], params)?;
    let eval = match parse_evaluation(&reply) {
        Ok(e) => e,
        Err(_) => {
            let retry = format!("{user}{REPROMPT_SUFFIX}");
            let reply = oracle.chat(&[Message::system(system), Message::user(retry)], params)?;
            parse_evaluation(&reply)?
        }
    };
    Ok(to_unit_score(&eval))
}
