//! External agents driven over line-delimited JSON on a child process's
//! standard streams.
//!
//! ```text
//! -> {"type":"hello","version":1,"layout":[...],"bounds":{...},"dt":0.5}
//! <- {"type":"ready"}
//! -> {"type":"obs","tick":n,"data":[...]}
//! <- {"type":"act","tick":n,"u":[F_u,T_r]}
//! -> {"type":"done","reason":"goal-reached"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use shipsafe_core::env::DoneReason;
use shipsafe_core::policy::{Policy, PolicyError};
use shipsafe_core::vessel::{ControlInput, InputBounds};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ToAgent {
    Hello {
        version: u32,
        layout: Vec<String>,
        bounds: InputBounds,
        dt: f64,
    },
    Obs {
        tick: usize,
        data: Vec<f64>,
    },
    Done {
        reason: Option<DoneReason>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FromAgent {
    Ready,
    Act { tick: usize, u: [f64; 2] },
}

fn err(msg: impl Into<String>) -> PolicyError {
    PolicyError::External(msg.into())
}

pub struct ExternalAgent {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    bounds: InputBounds,
}

impl ExternalAgent {
    /// Spawns the agent and completes the handshake.
    pub fn spawn(
        command: &[String],
        layout: Vec<String>,
        bounds: InputBounds,
        dt: f64,
        timeout: Duration,
    ) -> Result<Self, PolicyError> {
        let (program, args) = command.split_first().ok_or_else(|| err("empty agent command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| err(format!("cannot start '{program}': {e}")))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut agent = Self {
            child,
            stdin,
            lines: rx,
            timeout,
            bounds,
        };
        agent.send(&ToAgent::Hello {
            version: PROTOCOL_VERSION,
            layout,
            bounds,
            dt,
        })?;
        match agent.receive()? {
            FromAgent::Ready => Ok(agent),
            other => Err(err(format!("expected ready, got {other:?}"))),
        }
    }

    fn send(&mut self, msg: &ToAgent) -> Result<(), PolicyError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| err("agent input is closed"))?;
        let mut line = serde_json::to_string(msg).expect("message serializes");
        line.push('\n');
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| err(format!("agent exited or closed its input: {e}")))
    }

    fn receive(&mut self) -> Result<FromAgent, PolicyError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => serde_json::from_str(&line).map_err(|e| err(format!("malformed message {line:?}: {e}"))),
            Ok(Err(e)) => Err(err(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(err(format!("no reply within {:?}", self.timeout))),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                Err(err(format!("agent exited ({status:?})")))
            }
        }
    }

    /// Tells the agent the episode ended and waits for it to exit.
    pub fn finish(mut self, reason: Option<DoneReason>) -> Result<(), PolicyError> {
        let sent = self.send(&ToAgent::Done { reason });
        self.stdin = None;
        let _ = self.child.wait();
        sent
    }
}

impl Drop for ExternalAgent {
    fn drop(&mut self) {
        self.stdin = None;
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

impl Policy for ExternalAgent {
    fn act(&mut self, tick: usize, obs: &[f64]) -> Result<ControlInput, PolicyError> {
        self.send(&ToAgent::Obs {
            tick,
            data: obs.to_vec(),
        })?;
        match self.receive()? {
            FromAgent::Act { tick: t, u } if t == tick => {
                let u = ControlInput::new(u[0], u[1]);
                if !u.is_finite() {
                    return Err(err(format!("non-finite action at tick {tick}")));
                }
                Ok(self.bounds.clamp(u))
            }
            other => Err(err(format!("expected act for tick {tick}, got {other:?}"))),
        }
    }
}
