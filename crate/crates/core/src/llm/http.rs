use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{ChatOracle, GenParams, Message, OracleError};

/// Environment variable holding the bearer token for live endpoints.
pub const API_KEY_ENV: &str = "IMCTS_API_KEY";

/// Blocking client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpOracle {
    client: Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(OracleError),
}

impl HttpOracle {
    /// Reads the API key from `IMCTS_API_KEY` if set.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Result<Self, OracleError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| OracleError::BadResponse(format!("client setup: {e}")))?;
        Ok(Self {
            client,
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint)
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Attempt {
        let mut req = self.client.post(self.url()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport: {e}")),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(OracleError::Http { status: status.as_u16(), body: text });
        }
        match serde_json::from_str::<ChatResponse>(&text) {
            Ok(parsed) => match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
                Some(content) => Attempt::Done(content),
                None => Attempt::Fatal(OracleError::BadResponse("no choices[0].message.content".into())),
            },
            Err(e) => Attempt::Fatal(OracleError::BadResponse(e.to_string())),
        }
    }
}

impl ChatOracle for HttpOracle {
    fn complete(&mut self, messages: &[Message], params: &GenParams) -> Result<String, OracleError> {
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut attempt = 0u32;
        loop {
            match self.attempt(&body) {
                Attempt::Done(reply) => return Ok(reply),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => {
                    if attempt >= params.retry_budget {
                        return Err(OracleError::RetriesExhausted { attempts: attempt + 1, last: reason });
                    }
                    std::thread::sleep(params.backoff.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}
