#![allow(dead_code)]

use std::collections::BTreeMap;

use imcts::experimenter::{
    BackendError, BackendRequest, BackendResponse, ExperimentBackend, OutcomeStatus, PipelineConfig, StageCode,
};
use imcts::llm::{FnOracle, Message};
use imcts::rng::digest_hex;
use imcts::tree::{NodeId, Tree};
use imcts::PipelineStage;

fn hash_unit(text: &str) -> f64 {
    let hex = digest_hex(text);
    u32::from_str_radix(&hex[..8], 16).unwrap() as f64 / u32::MAX as f64
}

/// Chat model stand-in that recognises the three prompt kinds and answers
/// deterministically from the prompt text.
pub fn scripted_llm() -> FnOracle<impl FnMut(&[Message]) -> String> {
    let mut proposals = 0usize;
    FnOracle::new(move |messages: &[Message]| {
        let prompt = &messages.last().unwrap().content;
        if prompt.contains("# Evaluation Criteria") {
            let score = 30 + (hash_unit(prompt) * 60.0) as u32;
            format!("```json\n{{\"evaluation_feedback\": \"scripted\", \"total_score\": {score}}}\n```")
        } else if prompt.starts_with("You are planning") {
            r#"{"plan": ["1. Look at the data.", "2. Clean it.", "3. Add features.", "4. Fit a model.", "5. Score it."]}"#
                .to_string()
        } else {
            proposals += 1;
            let stage = ["Feature Engineering", "Model Training", "Model Evaluation"]
                .into_iter()
                .find(|s| prompt.contains(&format!("performance.\n{s}\n")))
                .unwrap_or("Model Training");
            format!(
                "```json\n{{\"task_type\": \"{stage}\", \"critic_feedback\": \"scripted critique\", \"insight\": \"{stage} idea {proposals}\"}}\n```"
            )
        }
    })
}

/// Deterministic backend scoring each configuration from a hash of its text.
#[derive(Default)]
pub struct HashBackend {
    pub requests: usize,
    pub stage_runs: usize,
    /// Configurations whose insight text contains this marker fail.
    pub fail_marker: Option<String>,
}

impl ExperimentBackend for HashBackend {
    fn execute(&mut self, req: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.requests += 1;
        self.stage_runs += req.missing_stages.len();
        let text: String = req.config.iter().filter_map(|c| c.insight.clone()).collect::<Vec<_>>().join("|");
        let failed = self.fail_marker.as_ref().is_some_and(|m| text.contains(m.as_str()));
        let dev = 0.2 + 0.6 * hash_unit(&text);
        let stage_code = req
            .missing_stages
            .iter()
            .map(|&stage| StageCode { stage, code: format!("# {stage}\nstep_{}()\n", stage.slug()) })
            .collect();
        Ok(BackendResponse {
            status: if failed { OutcomeStatus::Failed } else { OutcomeStatus::Ok },
            train_score: Some(0.95),
            dev_score: if failed { 0.0 } else { dev },
            test_score: if failed { 0.0 } else { dev * 0.9 },
            stage_code,
        })
    }
}

/// Configuration of a node, read from insight texts along the label path.
pub fn config_of(tree: &Tree, id: NodeId) -> PipelineConfig {
    let mut cfg = PipelineConfig::new();
    let mut cur = Some(id);
    while let Some(c) = cur {
        let n = tree.node(c);
        if let (Some(stage), Some(insight)) = (n.stage, &n.insight) {
            cfg = cfg.with(stage, insight.clone());
        }
        cur = n.parent;
    }
    cfg
}

/// Whether label `a` names `b` or one of its ancestors ("0-1" covers "0-1-3").
pub fn covers(a: &str, b: &str) -> bool {
    b == a || b.starts_with(&format!("{a}-"))
}

/// Per-node (visits, cumulative value) recomputed from the rollout log alone.
pub fn replay_statistics(tree: &Tree) -> BTreeMap<String, (u64, f64)> {
    let mut stats: BTreeMap<String, (u64, f64)> =
        tree.nodes.iter().map(|n| (n.label.clone(), (0, 0.0))).collect();
    for rec in &tree.log {
        let target = &tree.node(rec.node).label;
        for (label, (n, w)) in stats.iter_mut() {
            if covers(label, target) {
                *n += 1;
                *w += rec.reward;
            }
        }
    }
    stats
}

/// Stage runs the backend must perform for successfully simulated
/// configurations in order: each stage reuses code from any earlier
/// configuration with an identical prefix up to and including that stage.
pub fn expected_stage_runs(configs: &[PipelineConfig]) -> usize {
    let mut seen: Vec<&PipelineConfig> = Vec::new();
    let mut total = 0;
    for cfg in configs {
        let shared = seen
            .iter()
            .map(|prev| {
                PipelineStage::ALL
                    .iter()
                    .take_while(|&&s| prev.insight(s) == cfg.insight(s))
                    .count()
            })
            .max()
            .unwrap_or(0);
        total += PipelineStage::ALL.len() - shared;
        seen.push(cfg);
    }
    total
}

/// Minimal HTTP/1.1 server on a loopback port. Each request body is passed to
/// `respond`, which returns the status code and body. Serves forever on a
/// background thread.
pub fn serve_http<F>(mut respond: F) -> String
where
    F: FnMut(&str) -> (u16, String) + Send + 'static,
{
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let (status, reply) = respond(&String::from_utf8_lossy(&body));
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    format!("http://{addr}/v1")
}

/// Wraps a reply in an OpenAI-style completion body.
pub fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

/// HTTP responder answering with [`scripted_llm`].
pub fn scripted_http() -> impl FnMut(&str) -> (u16, String) + Send + 'static {
    use imcts::llm::{ChatOracle, GenParams};
    let mut llm = scripted_llm();
    move |body: &str| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let messages: Vec<Message> = serde_json::from_value(req["messages"].clone()).unwrap();
        (200, completion(&llm.complete(&messages, &GenParams::default()).unwrap()))
    }
}
