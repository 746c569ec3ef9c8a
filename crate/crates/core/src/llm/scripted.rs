use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatOracle, GenParams, Message, OracleError};

/// One request/reply pair; a recording is a JSON-lines file of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub messages: Vec<Message>,
    pub reply: String,
}

/// Serves a fixed queue of replies, ignoring the request.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    replies: VecDeque<String>,
    served: usize,
    /// Every request seen, in order.
    pub transcript: Vec<Vec<Message>>,
}

impl ScriptedOracle {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            served: 0,
            transcript: Vec::new(),
        }
    }

    pub fn push(&mut self, reply: impl Into<String>) {
        self.replies.push_back(reply.into());
    }

    pub fn remaining(&self) -> usize {
        self.replies.len()
    }
}

impl ChatOracle for ScriptedOracle {
    fn complete(&mut self, messages: &[Message], _: &GenParams) -> Result<String, OracleError> {
        self.transcript.push(messages.to_vec());
        let reply = self.replies.pop_front().ok_or(OracleError::ScriptExhausted(self.served))?;
        self.served += 1;
        Ok(reply)
    }
}

/// Answers each request with a closure; a scripted oracle whose replies
/// depend on the prompt.
pub struct FnOracle<F> {
    respond: F,
    pub calls: usize,
}

impl<F: FnMut(&[Message]) -> String> FnOracle<F> {
    pub fn new(respond: F) -> Self {
        Self { respond, calls: 0 }
    }
}

impl<F: FnMut(&[Message]) -> String> ChatOracle for FnOracle<F> {
    fn complete(&mut self, messages: &[Message], _: &GenParams) -> Result<String, OracleError> {
        self.calls += 1;
        Ok((self.respond)(messages))
    }
}

/// Replays a recording in order, checking that each request matches.
#[derive(Debug, Clone)]
pub struct ReplayOracle {
    exchanges: Vec<Exchange>,
    cursor: usize,
}

impl ReplayOracle {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        Self { exchanges, cursor: 0 }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Ok(Self::new(read_recording(path)?))
    }

    /// Advances past `n` exchanges already consumed by an earlier, interrupted run.
    pub fn skip(&mut self, n: usize) {
        self.cursor = (self.cursor + n).min(self.exchanges.len());
    }

    pub fn position(&self) -> usize {
        self.cursor
    }
}

impl ChatOracle for ReplayOracle {
    fn complete(&mut self, messages: &[Message], _: &GenParams) -> Result<String, OracleError> {
        let ex = self
            .exchanges
            .get(self.cursor)
            .ok_or(OracleError::ReplayExhausted(self.exchanges.len()))?;
        if ex.messages != messages {
            return Err(OracleError::ReplayMismatch(self.cursor));
        }
        self.cursor += 1;
        Ok(ex.reply.clone())
    }
}

/// Records every successful exchange of the wrapped oracle, optionally
/// appending each one to a JSON-lines file as it happens.
pub struct RecordingOracle<O> {
    inner: O,
    exchanges: Vec<Exchange>,
    sink: Option<BufWriter<File>>,
}

impl<O: ChatOracle> RecordingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, exchanges: Vec::new(), sink: None }
    }

    /// Appends to `path`, creating it if needed.
    pub fn to_file(inner: O, path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner, exchanges: Vec::new(), sink: Some(BufWriter::new(file)) })
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    pub fn into_parts(self) -> (O, Vec<Exchange>) {
        (self.inner, self.exchanges)
    }
}

impl<O: ChatOracle> ChatOracle for RecordingOracle<O> {
    fn complete(&mut self, messages: &[Message], params: &GenParams) -> Result<String, OracleError> {
        let reply = self.inner.chat(messages, params)?;
        let ex = Exchange { messages: messages.to_vec(), reply: reply.clone() };
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &ex)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.exchanges.push(ex);
        Ok(reply)
    }
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<Vec<Exchange>, OracleError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_recording(path: impl AsRef<Path>, exchanges: &[Exchange]) -> Result<(), OracleError> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in exchanges {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
