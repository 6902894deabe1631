//! Line protocol for classifiers running in another process.
//!
//! For each record the verifier writes one line of comma-separated
//! `name=value` pairs; the process answers with one decimal in `[0, 1]` per
//! line. Stdin is flushed after every batch. One process serves the whole
//! run.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::ClassifierError;
use crate::popmodel::FeatureRecord;

struct Pipes {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

pub struct ExternalClassifier {
    command: Vec<String>,
    features: Option<Vec<String>>,
    pipes: Mutex<Pipes>,
}

impl std::fmt::Debug for ExternalClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalClassifier")
            .field("command", &self.command)
            .field("features", &self.features)
            .finish()
    }
}

fn protocol(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::ExternalProtocol(msg.into())
}

impl ExternalClassifier {
    pub fn spawn(command: &[String], features: Option<Vec<String>>) -> Result<Self, ClassifierError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ClassifierError::Invalid("empty external command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| protocol(format!("cannot start `{}`: {e}", command.join(" "))))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped"));
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(ExternalClassifier {
            command: command.to_vec(),
            features,
            pipes: Mutex::new(Pipes { child, stdin, stdout }),
        })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn encode(&self, x: &FeatureRecord, line: &mut String) -> Result<(), ClassifierError> {
        line.clear();
        match &self.features {
            Some(names) => {
                for (i, name) in names.iter().enumerate() {
                    let v = x.get(name).ok_or_else(|| ClassifierError::MissingFeature(name.clone()))?;
                    if i > 0 {
                        line.push(',');
                    }
                    let _ = write!(line, "{name}={v}");
                }
            }
            None => {
                for (i, (name, v)) in x.iter().enumerate() {
                    if i > 0 {
                        line.push(',');
                    }
                    let _ = write!(line, "{name}={v}");
                }
            }
        }
        line.push('\n');
        Ok(())
    }

    pub fn evaluate_batch(&self, xs: &[FeatureRecord]) -> Result<Vec<f64>, ClassifierError> {
        let mut pipes = self.pipes.lock().unwrap_or_else(|e| e.into_inner());
        let mut line = String::new();
        for x in xs {
            self.encode(x, &mut line)?;
            pipes
                .stdin
                .write_all(line.as_bytes())
                .map_err(|e| protocol(format!("write failed: {e}")))?;
        }
        pipes.stdin.flush().map_err(|e| protocol(format!("flush failed: {e}")))?;

        let mut out = Vec::with_capacity(xs.len());
        let mut reply = String::new();
        for _ in xs {
            reply.clear();
            let n = pipes
                .stdout
                .read_line(&mut reply)
                .map_err(|e| protocol(format!("read failed: {e}")))?;
            if n == 0 {
                let status = pipes.child.try_wait().ok().flatten();
                return Err(protocol(match status {
                    Some(s) => format!("process exited ({s}) before replying"),
                    None => "process closed its output before replying".to_string(),
                }));
            }
            let text = reply.trim();
            let v: f64 = text
                .parse()
                .map_err(|_| protocol(format!("malformed reply `{text}`")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(protocol(format!("reply {v} is outside [0, 1]")));
            }
            out.push(v);
        }
        Ok(out)
    }
}

impl Drop for ExternalClassifier {
    fn drop(&mut self) {
        let pipes = self.pipes.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = pipes.child.kill();
        let _ = pipes.child.wait();
    }
}
