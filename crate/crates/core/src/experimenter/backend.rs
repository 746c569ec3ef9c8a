use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::OutcomeStatus;
use crate::stage::PipelineStage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub stage: PipelineStage,
    pub insight: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageInstruction {
    pub stage: PipelineStage,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCode {
    pub stage: PipelineStage,
    pub code: String,
}

/// Contents of the request file handed to an external backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub problem: String,
    pub metadata: String,
    pub dataset_ref: String,
    pub config: Vec<ConfigEntry>,
    pub instructions: Vec<StageInstruction>,
    /// Code for the cached stage prefix; the backend must not regenerate it.
    pub reusable_code: Vec<StageCode>,
    /// Stages the backend has to write code for.
    pub missing_stages: Vec<PipelineStage>,
}

/// Contents of the response file written by an external backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub status: OutcomeStatus,
    #[serde(default)]
    pub train_score: Option<f64>,
    #[serde(default)]
    pub dev_score: f64,
    #[serde(default)]
    pub test_score: f64,
    #[serde(default)]
    pub stage_code: Vec<StageCode>,
}

/// Transport-level failure; an experiment that ran and failed is a
/// [`BackendResponse`] with `status: failed` instead.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend io: {0}")]
    Io(#[from] std::io::Error),
    #[error("backend command timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend command exited with {0}")]
    CommandFailed(String),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("backend replay: {0}")]
    Replay(String),
}

pub trait ExperimentBackend {
    fn execute(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<T: ExperimentBackend + ?Sized> ExperimentBackend for &mut T {
    fn execute(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).execute(request)
    }
}

impl<T: ExperimentBackend + ?Sized> ExperimentBackend for Box<T> {
    fn execute(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).execute(request)
    }
}

/// Runs an external command per experiment.
///
/// The request is written to `<work_dir>/request-<n>.json`; the command is
/// expected to write `<work_dir>/response-<n>.json`. Arguments equal to
/// `{request}` / `{response}` are replaced by those paths, which are also
/// exported as `IMCTS_REQUEST` and `IMCTS_RESPONSE`.
pub struct CommandBackend {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    work_dir: PathBuf,
    counter: usize,
}

impl CommandBackend {
    pub fn new(command: &[String], timeout: Duration, work_dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::CommandFailed("empty backend command".into()))?;
        let work_dir = work_dir.into();
        fs::create_dir_all(&work_dir)?;
        Ok(Self { program: program.clone(), args: args.to_vec(), timeout, work_dir, counter: 0 })
    }

    fn wait(&self, child: &mut std::process::Child) -> Result<std::process::ExitStatus, BackendError> {
        let start = Instant::now();
        loop {
            if let Some(status) = child.try_wait()? {
                return Ok(status);
            }
            if start.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BackendError::Timeout(self.timeout));
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }
}

impl ExperimentBackend for CommandBackend {
    fn execute(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.counter += 1;
        let req_path = self.work_dir.join(format!("request-{}.json", self.counter));
        let resp_path = self.work_dir.join(format!("response-{}.json", self.counter));
        let _ = fs::remove_file(&resp_path);
        fs::write(&req_path, serde_json::to_vec_pretty(request).expect("request serializes"))?;

        let sub = |a: &String| -> String {
            a.replace("{request}", &req_path.to_string_lossy())
                .replace("{response}", &resp_path.to_string_lossy())
        };
        let mut child = Command::new(&self.program)
            .args(self.args.iter().map(sub))
            .env("IMCTS_REQUEST", &req_path)
            .env("IMCTS_RESPONSE", &resp_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .spawn()?;
        let status = self.wait(&mut child)?;
        if !status.success() {
            return Err(BackendError::CommandFailed(status.to_string()));
        }
        let text = fs::read_to_string(&resp_path)
            .map_err(|e| BackendError::BadResponse(format!("{}: {e}", resp_path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::BadResponse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BackendExchange {
    request: BackendRequest,
    response: BackendResponse,
}

/// Records every exchange of the wrapped backend to a JSON-lines file.
pub struct RecordingBackend<B> {
    inner: B,
    sink: BufWriter<File>,
}

impl<B: ExperimentBackend> RecordingBackend<B> {
    pub fn to_file(inner: B, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner, sink: BufWriter::new(file) })
    }
}

impl<B: ExperimentBackend> ExperimentBackend for RecordingBackend<B> {
    fn execute(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let response = self.inner.execute(request)?;
        let ex = BackendExchange { request: request.clone(), response: response.clone() };
        serde_json::to_writer(&mut self.sink, &ex).map_err(|e| BackendError::BadResponse(e.to_string()))?;
        self.sink.write_all(b"\n")?;
        self.sink.flush()?;
        Ok(response)
    }
}

/// Serves recorded backend responses in order, checking each request.
pub struct ReplayBackend {
    exchanges: Vec<BackendExchange>,
    cursor: usize,
}

impl ReplayBackend {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)?;
        let exchanges = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| BackendError::Replay(e.to_string()))?;
        Ok(Self { exchanges, cursor: 0 })
    }

    pub fn skip(&mut self, n: usize) {
        self.cursor = (self.cursor + n).min(self.exchanges.len());
    }
}

impl ExperimentBackend for ReplayBackend {
    fn execute(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let ex = self
            .exchanges
            .get(self.cursor)
            .ok_or_else(|| BackendError::Replay(format!("exhausted after {} exchanges", self.exchanges.len())))?;
        if &ex.request != request {
            return Err(BackendError::Replay(format!("request mismatch at exchange {}", self.cursor)));
        }
        self.cursor += 1;
        Ok(ex.response.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> BackendRequest {
        BackendRequest {
            problem: "p".into(),
            metadata: "m".into(),
            dataset_ref: "d".into(),
            config: vec![],
            instructions: vec![],
            reusable_code: vec![],
            missing_stages: vec![PipelineStage::ModelTraining],
        }
    }

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn command_backend_reads_response() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = sh(r#"printf '{"status":"ok","dev_score":0.25,"test_score":0.2,"train_score":0.9}' > "$IMCTS_RESPONSE""#);
        let mut b = CommandBackend::new(&cmd, Duration::from_secs(10), dir.path()).unwrap();
        let resp = b.execute(&request()).unwrap();
        assert_eq!(resp.dev_score, 0.25);
        assert_eq!(resp.train_score, Some(0.9));
        assert!(dir.path().join("request-1.json").exists());
    }

    #[test]
    fn command_backend_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = CommandBackend::new(&sh("exit 3"), Duration::from_secs(10), dir.path()).unwrap();
        assert!(matches!(b.execute(&request()), Err(BackendError::CommandFailed(_))));

        let mut b = CommandBackend::new(&sh("sleep 5"), Duration::from_millis(100), dir.path()).unwrap();
        assert!(matches!(b.execute(&request()), Err(BackendError::Timeout(_))));

        let mut b = CommandBackend::new(&sh("echo nope > \"$IMCTS_RESPONSE\""), Duration::from_secs(10), dir.path()).unwrap();
        assert!(matches!(b.execute(&request()), Err(BackendError::BadResponse(_))));

        assert!(CommandBackend::new(&[], Duration::from_secs(1), dir.path()).is_err());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backend.jsonl");
        let cmd = sh(r#"printf '{"status":"failed"}' > {response}"#);
        let inner = CommandBackend::new(&cmd, Duration::from_secs(10), dir.path().join("work")).unwrap();
        let mut rec = RecordingBackend::to_file(inner, &path).unwrap();
        let live = rec.execute(&request()).unwrap();
        assert_eq!(live.status, OutcomeStatus::Failed);
        drop(rec);

        let mut replay = ReplayBackend::from_file(&path).unwrap();
        assert_eq!(replay.execute(&request()).unwrap(), live);
        assert!(matches!(replay.execute(&request()), Err(BackendError::Replay(_))));

        let mut replay = ReplayBackend::from_file(&path).unwrap();
        let mut other = request();
        other.problem = "different".into();
        assert!(matches!(replay.execute(&other), Err(BackendError::Replay(_))));
    }
}
