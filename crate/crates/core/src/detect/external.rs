//! Scoring through a subprocess.
//!
//! Protocol: rows go to the child's stdin as header-less comma-separated decimal text, one
//! row per `\n`-terminated line, in dataset column order. The child prints exactly one real
//! per line on stdout, lower = more anomalous. A non-zero exit status or a line count that
//! differs from the row count is an error.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_width, DetectError, Scorer};

#[derive(Debug, Serialize, Deserialize)]
pub struct ExternalScorer {
    /// Shell command line, run through `sh -c`.
    pub command: String,
    /// Expected row width, when known.
    #[serde(default)]
    pub n_features: Option<usize>,
    #[serde(skip)]
    lock: Mutex<()>,
}

impl Clone for ExternalScorer {
    fn clone(&self) -> Self {
        ExternalScorer::new(self.command.clone(), self.n_features)
    }
}

impl ExternalScorer {
    pub fn new(command: impl Into<String>, n_features: Option<usize>) -> Self {
        ExternalScorer {
            command: command.into(),
            n_features,
            lock: Mutex::new(()),
        }
    }
}

/// Encodes rows in the wire format: comma-separated shortest round-trip decimals, `\n` ends
/// every line.
pub fn encode_rows(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn decode_scores(stdout: &str, expected: usize) -> Result<Vec<f64>, DetectError> {
    let scores = stdout
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim().parse::<f64>().map_err(|_| {
                DetectError::External(format!("line {}: cannot parse '{}' as a score", i + 1, line))
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if scores.len() != expected {
        return Err(DetectError::External(format!(
            "expected {expected} scores, got {}",
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(DetectError::External(format!("line {}: non-finite score", i + 1)));
    }
    Ok(scores)
}

impl Scorer for ExternalScorer {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError> {
        if let Some(d) = self.n_features {
            check_width(rows, d)?;
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| DetectError::External(format!("cannot launch '{}': {e}", self.command)))?;

        let payload = encode_rows(rows);
        let mut stdin = child.stdin.take().expect("stdin is piped");
        // feed stdin from a separate thread so a child that streams output cannot deadlock us
        let writer = std::thread::spawn(move || {
            let res = stdin.write_all(payload.as_bytes());
            drop(stdin);
            res
        });
        let mut stdout = String::new();
        let mut stderr = String::new();
        child
            .stdout
            .take()
            .expect("stdout is piped")
            .read_to_string(&mut stdout)
            .map_err(|e| DetectError::External(format!("reading stdout: {e}")))?;
        child
            .stderr
            .take()
            .expect("stderr is piped")
            .read_to_string(&mut stderr)
            .map_err(|e| DetectError::External(format!("reading stderr: {e}")))?;
        let status = child
            .wait()
            .map_err(|e| DetectError::External(format!("waiting for child: {e}")))?;
        let write_result = writer.join().expect("stdin writer panicked");
        if !status.success() {
            return Err(DetectError::External(format!(
                "'{}' exited with {status}; stderr: {}",
                self.command,
                stderr.trim()
            )));
        }
        if let Err(e) = write_result {
            return Err(DetectError::External(format!("writing rows: {e}")));
        }
        decode_scores(&stdout, rows.len())
    }
}
