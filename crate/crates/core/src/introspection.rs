//! Introspective expansion: prompt rendering, reply parsing and sequential,
//! de-duplicated generation of child insights.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::llm::{extract_json_block, ChatOracle, GenParams, Message, OracleError};
use crate::pyrepr;
use crate::stage::PipelineStage;

pub const INTROSPECTION_PROMPT: &str = include_str!("../assets/introspection_prompt.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsightProposal {
    pub task_type: PipelineStage,
    pub critic_feedback: String,
    pub insight: String,
    /// Set on the fallback emitted when every retry produced an unusable reply.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub placeholder: bool,
}

/// What the model sees about the node being expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrospectionContext {
    pub current_plan: String,
    pub solution_code: String,
    pub current_metrics: String,
    pub dev_score: f64,
    /// Stage the new insight must refine.
    pub stage: PipelineStage,
    /// Insights already proposed at this expansion point.
    pub prior_insights: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no JSON object in reply")]
    NoJson,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("missing or empty field `{0}`")]
    MissingField(&'static str),
    #[error("unknown task_type `{0}`")]
    UnknownTaskType(String),
}

#[derive(Debug, thiserror::Error)]
pub enum IntrospectionError {
    #[error("expansion width must be >= 1")]
    ZeroWidth,
    #[error("introspection oracle: {0}")]
    Oracle(#[from] OracleError),
}

pub fn render_introspection_prompt(ctx: &IntrospectionContext) -> String {
    let dev = pyrepr::float(ctx.dev_score);
    let prior = pyrepr::string_list(&ctx.prior_insights);
    pyrepr::format(
        INTROSPECTION_PROMPT,
        &[
            ("current_plan", &ctx.current_plan),
            ("solution_code", &ctx.solution_code),
            ("current_metrics", &ctx.current_metrics),
            ("dev_score", &dev),
            ("task_type", ctx.stage.display_name()),
            ("cur_expansion_list", &prior),
        ],
    )
}

/// Parses a JSON object out of a model reply, repairing the missing comma
/// between adjacent string fields that replies copied from the prompt schema
/// tend to carry.
pub(crate) fn parse_json_object(reply: &str) -> Result<serde_json::Map<String, Value>, ParseError> {
    let block = extract_json_block(reply).map_err(|_| ParseError::NoJson)?;
    let value: Value = match serde_json::from_str(block) {
        Ok(v) => v,
        Err(first) => serde_json::from_str(&repair_missing_commas(block))
            .map_err(|_| ParseError::InvalidJson(first.to_string()))?,
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(ParseError::InvalidJson("not an object".into())),
    }
}

fn repair_missing_commas(block: &str) -> String {
    let lines: Vec<&str> = block.lines().collect();
    let mut out = String::with_capacity(block.len() + 8);
    for (i, line) in lines.iter().enumerate() {
        out.push_str(line);
        let next_starts_key = lines.get(i + 1).is_some_and(|n| n.trim_start().starts_with('"'));
        let t = line.trim_end();
        if next_starts_key && t.ends_with('"') && !t.ends_with(',') && !t.ends_with("\":") {
            out.push(',');
        }
        out.push('\n');
    }
    out
}

pub fn parse_insight(reply: &str) -> Result<InsightProposal, ParseError> {
    let map = parse_json_object(reply)?;
    let text = |key: &'static str| -> Result<String, ParseError> {
        match map.get(key) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
            _ => Err(ParseError::MissingField(key)),
        }
    };
    let raw_type = text("task_type")?;
    let task_type = raw_type.parse().map_err(|_| ParseError::UnknownTaskType(raw_type.clone()))?;
    Ok(InsightProposal {
        task_type,
        critic_feedback: text("critic_feedback")?,
        insight: text("insight")?,
        placeholder: false,
    })
}

/// Lowercased, whitespace-collapsed form used for duplicate detection.
pub fn normalize_insight(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn is_duplicate(insight: &str, prior: &[String]) -> bool {
    let n = normalize_insight(insight);
    prior.iter().any(|p| normalize_insight(p) == n)
}

pub fn placeholder_insight(stage: PipelineStage) -> String {
    format!("retry-exhausted placeholder for stage {stage}")
}

/// Generates `width` insights one at a time. Every prompt lists the insights
/// accepted so far; unparsable or duplicate replies are re-requested up to
/// `retries` times before a flagged placeholder is used.
pub fn expand_introspectively(
    parent_ctx: &IntrospectionContext,
    width: usize,
    oracle: &mut dyn ChatOracle,
    params: &GenParams,
    retries: usize,
) -> Result<Vec<InsightProposal>, IntrospectionError> {
    if width == 0 {
        return Err(IntrospectionError::ZeroWidth);
    }
    let mut ctx = parent_ctx.clone();
    let mut accepted = Vec::with_capacity(width);
    for _ in 0..width {
        let mut proposal = None;
        for _ in 0..=retries {
            let prompt = render_introspection_prompt(&ctx);
            let reply = oracle.chat(&[Message::user(prompt)], params)?;
            match parse_insight(&reply) {
                Ok(mut p) if !is_duplicate(&p.insight, &ctx.prior_insights) => {
                    // the schema example in the prompt names a fixed stage; keep the requested one
                    p.task_type = ctx.stage;
                    proposal = Some(p);
                    break;
                }
                _ => continue,
            }
        }
        let proposal = proposal.unwrap_or_else(|| {
            let mut insight = placeholder_insight(ctx.stage);
            let mut n = 2;
            while is_duplicate(&insight, &ctx.prior_insights) {
                insight = format!("{} ({n})", placeholder_insight(ctx.stage));
                n += 1;
            }
            InsightProposal {
                task_type: ctx.stage,
                critic_feedback: String::new(),
                insight,
                placeholder: true,
            }
        });
        ctx.prior_insights.push(proposal.insight.clone());
        accepted.push(proposal);
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedOracle;
    use proptest::prelude::*;

    fn ctx() -> IntrospectionContext {
        IntrospectionContext {
            current_plan: "1. Look at the data.".into(),
            solution_code: "import pandas as pd".into(),
            current_metrics: "{'dev_score': 0.397}".into(),
            dev_score: 0.397,
            stage: PipelineStage::FeatureEngineering,
            prior_insights: vec![],
        }
    }

    fn reply(insight: &str) -> String {
        format!(
            "Here is my proposal.\n```json\n{{\n    \"task_type\": \"Feature Engineering\",\n    \"critic_feedback\": \"The plan ignores dates.\",\n    \"insight\": \"{insight}\"\n}}\n```\nGood luck!"
        )
    }

    #[test]
    fn template_is_verbatim_asset() {
        assert!(INTROSPECTION_PROMPT.starts_with("\nYou are an AI assistant tasked with analyzing"));
        assert!(INTROSPECTION_PROMPT.contains("# Current Performance on Development Set: \n{dev_score}\n"));
        assert!(INTROSPECTION_PROMPT.ends_with("}}\n```\n"));
    }

    #[test]
    fn render_substitutes_slots() {
        let text = render_introspection_prompt(&ctx());
        assert!(text.contains("Kindly AVOID suggesting an insight that is similar to them.\n[]\n"));
        assert!(text.contains("\n0.397\n"));
        assert!(text.contains("\nFeature Engineering\n"));
        assert!(text.contains("{\n    \"task_type\": \"Data Preprocessing\","));
        assert!(!text.contains("{{"));

        let mut c = ctx();
        c.prior_insights = vec!["Add ratios".into(), "it's dates".into()];
        let text = render_introspection_prompt(&c);
        assert!(text.contains("\n['Add ratios', \"it's dates\"]\n"));
    }

    #[test]
    fn parse_happy_path_with_surrounding_prose() {
        let p = parse_insight(&reply("Add vehicle age.")).unwrap();
        assert_eq!(p.task_type, PipelineStage::FeatureEngineering);
        assert_eq!(p.insight, "Add vehicle age.");
        assert_eq!(p.critic_feedback, "The plan ignores dates.");
        let bare = "{\"task_type\": \"Data Preprocessing\", \"critic_feedback\": \"x\", \"insight\": \"y\"}";
        assert_eq!(parse_insight(bare).unwrap().task_type, PipelineStage::DataPreprocessing);
    }

    #[test]
    fn parse_repairs_schema_comma() {
        // the prompt's schema omits the comma after critic_feedback
        let r = "```json\n{\n    \"task_type\": \"Model Training\",\n    \"critic_feedback\": \"weak model\"\n    \"insight\": \"Use LightGBM.\"\n}\n```";
        assert_eq!(parse_insight(r).unwrap().insight, "Use LightGBM.");
    }

    #[test]
    fn parse_error_kinds() {
        assert_eq!(parse_insight("no json"), Err(ParseError::NoJson));
        let missing = "{\"task_type\": \"Feature Engineering\", \"critic_feedback\": \"x\"}";
        assert_eq!(parse_insight(missing), Err(ParseError::MissingField("insight")));
        let empty = "{\"task_type\": \"Feature Engineering\", \"critic_feedback\": \"x\", \"insight\": \"  \"}";
        assert_eq!(parse_insight(empty), Err(ParseError::MissingField("insight")));
        let unknown = "{\"task_type\": \"Deployment\", \"critic_feedback\": \"x\", \"insight\": \"y\"}";
        assert_eq!(parse_insight(unknown), Err(ParseError::UnknownTaskType("Deployment".into())));
        assert!(matches!(parse_insight("{\"a\": [1,}"), Err(ParseError::InvalidJson(_))));
    }

    #[test]
    fn sequential_prompts_accumulate_prior_insights() {
        let replies: Vec<String> = (1..=5).map(|i| reply(&format!("insight {i}"))).collect();
        let mut oracle = ScriptedOracle::new(replies);
        let out = expand_introspectively(&ctx(), 5, &mut oracle, &GenParams::default(), 2).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(oracle.transcript.len(), 5);
        let third = &oracle.transcript[2][0].content;
        assert!(third.contains("\n['insight 1', 'insight 2']\n"));
        for (i, p) in out.iter().enumerate() {
            assert_eq!(p.insight, format!("insight {}", i + 1));
            assert!(!p.placeholder);
        }
    }

    #[test]
    fn duplicate_is_re_requested() {
        let mut c = ctx();
        c.prior_insights = vec!["Add vehicle age.".into()];
        let mut oracle = ScriptedOracle::new([reply("add   VEHICLE age."), reply("Bin the odometer.")]);
        let out = expand_introspectively(&c, 1, &mut oracle, &GenParams::default(), 2).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].insight, "Bin the odometer.");
        assert_eq!(oracle.transcript.len(), 2);
    }

    #[test]
    fn exhausted_retries_emit_flagged_placeholder() {
        let mut oracle = ScriptedOracle::new(["garbage", "still garbage", "more", "nope"]);
        let out = expand_introspectively(&ctx(), 2, &mut oracle, &GenParams::default(), 1).unwrap();
        assert_eq!(oracle.transcript.len(), 4);
        assert!(out.iter().all(|p| p.placeholder));
        assert_eq!(out[0].insight, "retry-exhausted placeholder for stage Feature Engineering");
        assert_ne!(normalize_insight(&out[0].insight), normalize_insight(&out[1].insight));
    }

    #[test]
    fn requested_stage_wins() {
        let r = "{\"task_type\": \"Data Preprocessing\", \"critic_feedback\": \"x\", \"insight\": \"y\"}";
        let mut oracle = ScriptedOracle::new([r]);
        let out = expand_introspectively(&ctx(), 1, &mut oracle, &GenParams::default(), 0).unwrap();
        assert_eq!(out[0].task_type, PipelineStage::FeatureEngineering);
    }

    #[test]
    fn transport_failure_and_zero_width() {
        let mut oracle = ScriptedOracle::new(Vec::<String>::new());
        assert!(matches!(
            expand_introspectively(&ctx(), 1, &mut oracle, &GenParams::default(), 3),
            Err(IntrospectionError::Oracle(_))
        ));
        assert!(matches!(
            expand_introspectively(&ctx(), 0, &mut oracle, &GenParams::default(), 3),
            Err(IntrospectionError::ZeroWidth)
        ));
    }

    proptest! {
        #[test]
        fn parser_is_total(s in "\\PC*") {
            let _ = parse_insight(&s);
        }

        #[test]
        fn expansion_never_duplicates(picks in proptest::collection::vec(0usize..4, 1..30), width in 1usize..5) {
            let pool = ["Alpha", "alpha ", "Beta", "GAMMA  x"];
            let replies: Vec<String> = picks.iter().map(|i| reply(pool[*i])).collect();
            let mut oracle = ScriptedOracle::new(replies);
            let mut c = ctx();
            c.prior_insights = vec!["beta".into()];
            if let Ok(out) = expand_introspectively(&c, width, &mut oracle, &GenParams::default(), 2) {
                let mut seen: Vec<String> = c.prior_insights.iter().map(|s| normalize_insight(s)).collect();
                for p in &out {
                    let n = normalize_insight(&p.insight);
                    prop_assert!(!seen.contains(&n));
                    seen.push(n);
                }
                // prompt monotonicity: each prompt's list extends the previous one
                let lists: Vec<usize> = oracle.transcript.iter().map(|m| m[0].content.matches("', '").count()).collect();
                prop_assert!(lists.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
