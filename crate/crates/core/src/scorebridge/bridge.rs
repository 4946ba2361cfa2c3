//! Line-delimited JSON bridge to an external scorer process.
//!
//! The child writes one handshake object on startup, then answers one response line per
//! request line, matched by `id`, in any order.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Capabilities, ImageRef, ScoreError, Scorer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub working_dir: Option<PathBuf>,
    pub timeout_secs: f64,
    pub handshake_timeout_secs: f64,
    /// Extra attempts after the first.
    pub retries: usize,
    /// Maximum requests in flight.
    pub window: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            working_dir: None,
            timeout_secs: 60.0,
            handshake_timeout_secs: 60.0,
            retries: 3,
            window: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub scorer_id: String,
    pub range: [f64; 2],
    pub capabilities: Vec<String>,
    /// Anything else the adapter advertises, e.g. its preprocessing.
    #[serde(flatten)]
    pub metadata: BTreeMap<String, Value>,
}

struct Request {
    op: &'static str,
    image: Option<String>,
    caption: String,
}

impl Request {
    /// Fields in protocol order: id, op, image, caption.
    fn line(&self, id: &str) -> String {
        let q = |s: &str| Value::String(s.to_string()).to_string();
        let mut line = format!("{{\"id\":{},\"op\":{}", q(id), q(self.op));
        if let Some(img) = &self.image {
            line.push_str(&format!(",\"image\":{}", q(img)));
        }
        line.push_str(&format!(",\"caption\":{}}}\n", q(&self.caption)));
        line
    }
}

type Pending = Arc<Mutex<HashMap<String, Sender<Value>>>>;

struct Window {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Window {
    fn acquire(&self) {
        let mut used = self.used.lock().expect("window lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("window lock");
        }
        *used += 1;
    }

    fn release(&self) {
        *self.used.lock().expect("window lock") -= 1;
        self.freed.notify_one();
    }
}

pub struct ExternalScorer {
    handshake: Handshake,
    caps: Capabilities,
    config: BridgeConfig,
    stdin: Mutex<ChildStdin>,
    child: Mutex<Child>,
    pending: Pending,
    next_id: AtomicU64,
    window: Window,
}

impl ExternalScorer {
    pub fn spawn(config: BridgeConfig) -> Result<Self, ScoreError> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| ScoreError::Handshake("empty command".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        if let Some(dir) = &config.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| ScoreError::Handshake(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let pending: Pending = Arc::default();
        let (hs_tx, hs_rx) = mpsc::channel::<String>();
        let routes = Arc::clone(&pending);
        thread::spawn(move || {
            let mut lines = BufReader::new(stdout).lines();
            match lines.next() {
                Some(Ok(first)) => {
                    if hs_tx.send(first).is_err() {
                        return;
                    }
                }
                _ => return,
            }
            for line in lines {
                let Ok(line) = line else { break };
                let Ok(v) = serde_json::from_str::<Value>(&line) else { continue };
                let Some(id) = v.get("id").and_then(Value::as_str).map(str::to_string) else { continue };
                let tx = routes.lock().expect("pending lock").remove(&id);
                if let Some(tx) = tx {
                    let _ = tx.send(v);
                }
            }
            // Child closed stdout: fail everything still waiting.
            routes.lock().expect("pending lock").clear();
        });

        let kill = |mut child: Child, msg: String| {
            let _ = child.kill();
            let _ = child.wait();
            ScoreError::Handshake(msg)
        };
        let line = match hs_rx.recv_timeout(Duration::from_secs_f64(config.handshake_timeout_secs)) {
            Ok(l) => l,
            Err(RecvTimeoutError::Timeout) => return Err(kill(child, "no handshake before timeout".into())),
            Err(RecvTimeoutError::Disconnected) => return Err(kill(child, "process exited before handshake".into())),
        };
        let handshake: Handshake = match serde_json::from_str(&line) {
            Ok(h) => h,
            Err(e) => return Err(kill(child, format!("malformed handshake {line:?}: {e}"))),
        };
        if !(handshake.range[0] < handshake.range[1]) {
            return Err(kill(child, format!("invalid range {:?}", handshake.range)));
        }
        let caps = Capabilities {
            score: handshake.capabilities.iter().any(|c| c == "score"),
            embed_text: handshake.capabilities.iter().any(|c| c == "embed_text"),
        };
        let window = Window { used: Mutex::new(0), freed: Condvar::new(), limit: config.window.max(1) };
        Ok(Self {
            handshake,
            caps,
            config,
            stdin: Mutex::new(stdin),
            child: Mutex::new(child),
            pending,
            next_id: AtomicU64::new(1),
            window,
        })
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn attempt(&self, req: &Request) -> Result<Value, ScoreError> {
        let id = format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = mpsc::channel();
        self.pending.lock().expect("pending lock").insert(id.clone(), tx);
        let line = req.line(&id);
        let written = {
            let mut w = self.stdin.lock().expect("stdin lock");
            w.write_all(line.as_bytes()).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.pending.lock().expect("pending lock").remove(&id);
            return Err(ScoreError::unavailable(format!("bridge write failed: {e}")));
        }
        match rx.recv_timeout(Duration::from_secs_f64(self.config.timeout_secs)) {
            Ok(v) => Ok(v),
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().expect("pending lock").remove(&id);
                Err(ScoreError::unavailable(format!("request {id} timed out")))
            }
            Err(RecvTimeoutError::Disconnected) => Err(ScoreError::unavailable("scorer process closed its output")),
        }
    }

    /// One request with retries on timeout or an error reply. A dead process is not retried.
    fn request(&self, req: Request) -> Result<Value, ScoreError> {
        self.window.acquire();
        let mut last = ScoreError::unavailable("no attempt made");
        for _ in 0..=self.config.retries {
            match self.attempt(&req) {
                Ok(v) => match v.get("error") {
                    Some(err) => last = ScoreError::unavailable(format!("scorer error: {err}")),
                    None => {
                        self.window.release();
                        return Ok(v);
                    }
                },
                Err(e) => {
                    let fatal = matches!(&e, ScoreError::Unavailable { reason, .. } if reason.contains("closed") || reason.contains("write failed"));
                    last = e;
                    if fatal {
                        break;
                    }
                }
            }
        }
        self.window.release();
        Err(last)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        if let Ok(mut c) = self.child.lock() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

impl Scorer for ExternalScorer {
    fn id(&self) -> &str {
        &self.handshake.scorer_id
    }

    fn range(&self) -> (f64, f64) {
        (self.handshake.range[0], self.handshake.range[1])
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn score(&self, image: &ImageRef, caption: &str) -> Result<f64, ScoreError> {
        if !self.caps.score {
            return Err(ScoreError::Unsupported("scorer does not advertise score".into()));
        }
        let v = self.request(Request {
            op: "score",
            image: Some(image.path.to_string_lossy().into_owned()),
            caption: caption.to_string(),
        })?;
        v.get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| ScoreError::unavailable(format!("protocol violation: {v}")))
    }

    fn embed_text(&self, caption: &str) -> Result<Vec<f64>, ScoreError> {
        if !self.caps.embed_text {
            return Err(ScoreError::Unsupported("scorer does not advertise embed_text".into()));
        }
        if caption.trim().is_empty() {
            return Err(ScoreError::InvalidInput("empty caption".into()));
        }
        let v = self.request(Request { op: "embed_text", image: None, caption: caption.to_string() })?;
        v.get("vector")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| ScoreError::unavailable(format!("protocol violation: {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_lines_follow_protocol_order() {
        let r = Request { op: "score", image: Some("a/b.png".into()), caption: "There is a \"bed\".".into() };
        assert_eq!(r.line("r1"), "{\"id\":\"r1\",\"op\":\"score\",\"image\":\"a/b.png\",\"caption\":\"There is a \\\"bed\\\".\"}\n");
        let e = Request { op: "embed_text", image: None, caption: "African".into() };
        assert_eq!(e.line("r2"), "{\"id\":\"r2\",\"op\":\"embed_text\",\"caption\":\"African\"}\n");
    }

    #[test]
    fn handshake_parses_with_metadata() {
        let h: Handshake = serde_json::from_str(
            r#"{"scorer_id":"clipscore","range":[0,1],"capabilities":["score","embed_text"],"resolution":224}"#,
        )
        .unwrap();
        assert_eq!(h.scorer_id, "clipscore");
        assert_eq!(h.range, [0.0, 1.0]);
        assert_eq!(h.metadata["resolution"], 224);
    }
}
