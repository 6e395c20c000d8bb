//! Client side of the policy wire protocol.
//!
//! One JSON object per line in each direction. A request carries the role,
//! the task instruction, the current page record, action space, history and
//! attempts as canonical action strings, and, for judge/reflect calls, the
//! outcome page (and the candidate for judge calls):
//!
//! ```text
//! {"role":"judger","instruction":"...","page":{...},"action_space":["click(...)"],
//!  "history":[...],"attempts":[...],"outcome_page":{...},"candidate":"scroll(...)"}
//! ```
//!
//! Responses are `{"action":"..."}` for the generator and reflector,
//! `{"helpful":0|1,"confidence":0.93}` for the judger, or an error frame
//! `{"error":{"kind":"timeout|parse|upstream","message":"...","retries":n}}`.
//! Timeouts and upstream errors are retried; parse errors are not.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::Role;
use super::{Generator, Judger, JudgerVerdict, PolicyContext, PolicyError, Reflector};
use crate::action::{parse_action, Action};
use crate::page::Page;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub role: Role,
    pub instruction: String,
    pub page: Page,
    pub action_space: Vec<String>,
    pub history: Vec<String>,
    pub attempts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_page: Option<Page>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
}

impl PolicyRequest {
    pub fn new(role: Role, ctx: &PolicyContext<'_>, candidate: Option<&Action>) -> Self {
        Self {
            role,
            instruction: ctx.task.instruction.clone(),
            page: ctx.page.clone(),
            action_space: ctx.action_space.iter().map(Action::canonical).collect(),
            history: ctx.history.iter().map(|c| c.display_text()).collect(),
            attempts: ctx.attempts.iter().map(|c| c.display_text()).collect(),
            outcome_page: ctx.outcome_page.cloned(),
            candidate: candidate.map(Action::canonical),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Timeout,
    Parse,
    Upstream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub kind: ErrorKind,
    #[serde(default)]
    pub message: String,
    #[serde(default)]
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyResponse {
    Error {
        error: ErrorFrame,
    },
    Action {
        action: String,
    },
    Verdict {
        helpful: u8,
        #[serde(default)]
        confidence: Option<f64>,
    },
}

/// Sends one request line and returns one response line.
pub trait Transport: Send + Sync {
    fn round_trip(&self, line: &str, timeout: Duration) -> io::Result<String>;
}

/// Opens a fresh TCP connection per request.
#[derive(Debug, Clone)]
pub struct TcpTransport {
    addr: String,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into() }
    }
}

impl Transport for TcpTransport {
    fn round_trip(&self, line: &str, timeout: Duration) -> io::Result<String> {
        let addr = self
            .addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {}", self.addr)))?;
        let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        stream.flush()?;
        let mut reader = BufReader::new(stream);
        let mut out = String::new();
        if reader.read_line(&mut out)? == 0 {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "backend closed the connection",
            ));
        }
        Ok(out.trim_end().to_string())
    }
}

/// Talks to a child process over its stdin/stdout.
pub struct ProcessTransport {
    inner: Mutex<ProcessPipes>,
}

struct ProcessPipes {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<io::Result<String>>,
}

impl ProcessTransport {
    pub fn spawn(program: &str, args: &[String]) -> io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            inner: Mutex::new(ProcessPipes {
                child,
                stdin,
                lines: rx,
            }),
        })
    }
}

impl Transport for ProcessTransport {
    fn round_trip(&self, line: &str, timeout: Duration) -> io::Result<String> {
        let mut pipes = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(pipes.stdin, "{line}")?;
        pipes.stdin.flush()?;
        match pipes.lines.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(io::Error::new(io::ErrorKind::TimedOut, "backend timed out")),
            Err(RecvTimeoutError::Disconnected) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "backend exited")),
        }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        if let Ok(p) = self.inner.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub timeout_secs: f64,
    pub retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 60.0,
            retries: 2,
        }
    }
}

/// A policy role served by an external backend.
pub struct RemotePolicy {
    transport: Box<dyn Transport>,
    cfg: RemoteConfig,
}

impl RemotePolicy {
    pub fn new(transport: impl Transport + 'static, cfg: RemoteConfig) -> Self {
        Self {
            transport: Box::new(transport),
            cfg,
        }
    }

    /// `tcp://host:port` or `exec:program arg...`.
    pub fn from_endpoint(endpoint: &str, cfg: RemoteConfig) -> io::Result<Self> {
        if let Some(addr) = endpoint.strip_prefix("tcp://") {
            return Ok(Self::new(TcpTransport::new(addr), cfg));
        }
        if let Some(cmd) = endpoint.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts
                .next()
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty exec endpoint"))?;
            let args: Vec<String> = parts.collect();
            return Ok(Self::new(ProcessTransport::spawn(&program, &args)?, cfg));
        }
        Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("unsupported endpoint {endpoint:?}"),
        ))
    }

    pub fn call(&self, request: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        let line = serde_json::to_string(request).expect("request serializes");
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs.max(0.001));
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            let raw = match self.transport.round_trip(&line, timeout) {
                Ok(raw) => raw,
                Err(e) => {
                    log::warn!("policy backend attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                    continue;
                }
            };
            let response: PolicyResponse =
                serde_json::from_str(&raw).map_err(|e| PolicyError::UnparseableResponse {
                    raw: raw.clone(),
                    reason: e.to_string(),
                })?;
            match response {
                PolicyResponse::Error { error } if error.kind == ErrorKind::Parse => {
                    return Err(PolicyError::UnparseableResponse {
                        raw,
                        reason: error.message,
                    });
                }
                PolicyResponse::Error { error } => {
                    log::warn!(
                        "policy backend attempt {} returned {:?}: {}",
                        attempt + 1,
                        error.kind,
                        error.message
                    );
                    last = format!("{:?}: {}", error.kind, error.message);
                }
                ok => return Ok(ok),
            }
        }
        Err(PolicyError::BackendUnavailable(format!(
            "{} attempts failed, last error: {last}",
            self.cfg.retries + 1
        )))
    }

    fn call_for_action(&self, request: &PolicyRequest) -> Result<Action, PolicyError> {
        match self.call(request)? {
            PolicyResponse::Action { action } => parse_action(&action).map_err(|e| PolicyError::UnparseableResponse {
                raw: action.clone(),
                reason: e.reason,
            }),
            other => Err(PolicyError::UnparseableResponse {
                raw: format!("{other:?}"),
                reason: "expected an action response".into(),
            }),
        }
    }
}

impl Generator for RemotePolicy {
    fn generate(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        self.call_for_action(&PolicyRequest::new(Role::Generator, ctx, None))
    }
}

impl Reflector for RemotePolicy {
    fn reflect(&self, ctx: &PolicyContext<'_>) -> Result<Action, PolicyError> {
        self.call_for_action(&PolicyRequest::new(Role::Reflector, ctx, None))
    }
}

impl Judger for RemotePolicy {
    fn judge(&self, ctx: &PolicyContext<'_>, candidate: &Action) -> Result<JudgerVerdict, PolicyError> {
        match self.call(&PolicyRequest::new(Role::Judger, ctx, Some(candidate)))? {
            PolicyResponse::Verdict { helpful, confidence } => {
                let bad = |reason: &str| PolicyError::UnparseableResponse {
                    raw: format!("{{\"helpful\":{helpful},\"confidence\":{confidence:?}}}"),
                    reason: reason.to_string(),
                };
                if helpful > 1 {
                    return Err(bad("helpful must be 0 or 1"));
                }
                let confidence = confidence.unwrap_or(f64::from(helpful));
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(bad("confidence outside [0, 1]"));
                }
                let verdict = JudgerVerdict::from_confidence(confidence);
                if verdict.helpful != (helpful == 1) {
                    return Err(bad("helpful label disagrees with confidence"));
                }
                Ok(verdict)
            }
            other => Err(PolicyError::UnparseableResponse {
                raw: format!("{other:?}"),
                reason: "expected a verdict response".into(),
            }),
        }
    }
}
