//! Client side of the substitution-provider protocol.
//!
//! The provider is a child process spoken to over its standard input and
//! output, one JSON object per line in each direction:
//!
//! ```text
//! -> {"text": "...", "protected_span": [start, end] | null, "p": 0.3, "seed": 7}
//! <- {"text": "..."}            or   {"error": "..."}
//! ```
//!
//! `protected_span` is a half-open range of Unicode scalar offsets into
//! `text`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub text: String,
    pub protected_span: Option<[usize; 2]>,
    pub p: f64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
struct ProviderResponse {
    text: Option<String>,
    error: Option<String>,
}

pub struct SubstitutionProvider {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl SubstitutionProvider {
    /// Starts `command` through `sh -c`. Its standard error is inherited.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Provider(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(SubstitutionProvider {
            command: command.to_string(),
            child,
            stdin: Some(stdin),
            stdout,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends one request and waits for its response line.
    pub fn request(&mut self, req: &ProviderRequest) -> Result<String> {
        let unavailable = |what: &str, e: std::io::Error| {
            Error::Provider(format!("{}: {what}: {e}", self.command))
        };
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        let stdin = self.stdin.as_mut().expect("stdin open until drop");
        stdin
            .write_all(line.as_bytes())
            .and_then(|()| stdin.flush())
            .map_err(|e| unavailable("write failed", e))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| unavailable("read failed", e))?;
        if n == 0 {
            return Err(Error::Provider(format!("{}: provider closed its output", self.command)));
        }
        let resp: ProviderResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Provider(format!("{}: malformed response {:?}: {e}", self.command, reply.trim_end())))?;
        match (resp.text, resp.error) {
            (_, Some(err)) => Err(Error::Provider(format!("{}: {err}", self.command))),
            (Some(text), None) => Ok(text),
            (None, None) => Err(Error::Provider(format!("{}: response has no text", self.command))),
        }
    }
}

impl Drop for SubstitutionProvider {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}
