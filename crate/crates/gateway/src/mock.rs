//! In-process mock servers for tests and smoke runs.
//!
//! A mock binds an ephemeral local port and answers HTTP/1.1 POSTs either
//! from a script (ordered request-matcher entries with canned replies, also
//! loadable from fixture files) or from a deterministic emulator that behaves
//! like a policy and reward server pair: step text and scores are pure
//! functions of the request, so runs against it replay identically.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::protocol::REWARD_TOKEN;

fn default_status() -> u16 {
    200
}

/// One scripted reply: the first unconsumed entry whose matchers all pass
/// answers the request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub path_prefix: Option<String>,
    #[serde(default)]
    pub body_contains: Option<String>,
    #[serde(default = "default_status")]
    pub status: u16,
    pub body: Value,
    /// How many requests this entry may answer; `None` means unlimited.
    #[serde(default)]
    pub times: Option<u32>,
}

impl ScriptEntry {
    fn matches(&self, path: &str, body: &str) -> bool {
        if let Some(prefix) = &self.path_prefix {
            if !path.starts_with(prefix.as_str()) {
                return false;
            }
        }
        if let Some(needle) = &self.body_contains {
            if !body.contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

/// An ordered reply script.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        MockScript { entries }
    }

    /// Load a script from a JSON fixture file.
    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Answer in a question's place: when the user message contains
/// `question_contains`, the emulator concludes with `answer`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmulatorAnswer {
    pub question_contains: String,
    pub answer: String,
}

/// Deterministic policy-and-reward emulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmulatorSpec {
    /// Steps generated before the concluding boxed-answer step.
    pub steps_per_answer: usize,
    #[serde(default)]
    pub answers: Vec<EmulatorAnswer>,
    pub default_answer: String,
    #[serde(default)]
    pub score_seed: u64,
}

impl Default for EmulatorSpec {
    fn default() -> Self {
        EmulatorSpec {
            steps_per_answer: 3,
            answers: Vec::new(),
            default_answer: "42".into(),
            score_seed: 0,
        }
    }
}

/// What drives the mock's replies.
pub enum MockBehavior {
    Scripted(MockScript),
    Emulator(EmulatorSpec),
}

/// A request the mock has served, for assertions.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub path: String,
    pub body: String,
}

/// The running mock server.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
}

impl MockServer {
    /// Bind an ephemeral local port and serve until dropped.
    pub fn start(behavior: MockBehavior) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let state = Arc::new(ServerState {
            behavior,
            script_consumed: Mutex::new(Vec::new()),
            requests: Arc::clone(&requests),
        });
        let stop = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let state = Arc::clone(&state);
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, &state);
                });
            }
        });
        Ok(MockServer {
            addr,
            shutdown,
            handle: Some(handle),
            requests,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests served so far, in arrival order.
    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().expect("request log").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

struct ServerState {
    behavior: MockBehavior,
    /// Per-entry consumption counts for scripted mode.
    script_consumed: Mutex<Vec<u32>>,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
}

fn serve_connection(mut stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();

    state
        .requests
        .lock()
        .expect("request log")
        .push(RecordedRequest {
            path: path.clone(),
            body: body.clone(),
        });

    let (status, reply) = respond(state, &path, &body);
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let payload = reply.to_string();
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()
}

fn respond(state: &ServerState, path: &str, body: &str) -> (u16, Value) {
    match &state.behavior {
        MockBehavior::Scripted(script) => {
            let mut consumed = state.script_consumed.lock().expect("script state");
            consumed.resize(script.entries.len(), 0);
            for (i, entry) in script.entries.iter().enumerate() {
                if let Some(limit) = entry.times {
                    if consumed[i] >= limit {
                        continue;
                    }
                }
                if entry.matches(path, body) {
                    consumed[i] += 1;
                    return (entry.status, entry.body.clone());
                }
            }
            (404, json!({ "error": format!("no script entry matches {path}") }))
        }
        MockBehavior::Emulator(spec) => {
            if path.starts_with("/v1/chat/completions") {
                emulate_chat(spec, body)
            } else if path.starts_with("/v1/score") {
                emulate_score(spec, body)
            } else {
                (404, json!({ "error": format!("unknown path {path}") }))
            }
        }
    }
}

fn fnv64(parts: &[&[u8]]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for part in parts {
        for &byte in *part {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
    }
    hash
}

fn unit_score(seed: u64, parts: &[&[u8]]) -> f64 {
    let mut all: Vec<&[u8]> = vec![];
    let seed_bytes = seed.to_le_bytes();
    all.push(&seed_bytes);
    all.extend_from_slice(parts);
    let h = fnv64(&all);
    0.05 + (h % 9_000) as f64 / 10_000.0
}

fn emulate_chat(spec: &EmulatorSpec, body: &str) -> (u16, Value) {
    let Ok(parsed) = serde_json::from_str::<Value>(body) else {
        return (400, json!({ "error": "invalid JSON" }));
    };
    let messages = parsed["messages"].as_array().cloned().unwrap_or_default();
    let question = messages
        .iter()
        .find(|m| m["role"] == "user")
        .and_then(|m| m["content"].as_str())
        .unwrap_or("")
        .to_string();
    let prefix = messages
        .iter()
        .rev()
        .find(|m| m["role"] == "assistant")
        .and_then(|m| m["content"].as_str())
        .unwrap_or("");
    // The prefix is primed with the delimiter, so its count names the step
    // being generated.
    let step_index = prefix.matches("## Step").count().max(1);

    let (content, stop_reason) = if step_index <= spec.steps_per_answer {
        let tag = fnv64(&[question.as_bytes(), &step_index.to_le_bytes()]) % 10_000;
        (
            format!(" {step_index}: Work segment {tag}.\nIntermediate reasoning for step {step_index}.\n\n"),
            Value::String("## Step".into()),
        )
    } else {
        let answer = spec
            .answers
            .iter()
            .find(|a| question.contains(&a.question_contains))
            .map(|a| a.answer.as_str())
            .unwrap_or(&spec.default_answer);
        (
            format!(
                " {step_index}: Conclude.\nTherefore, the final answer is: $\\boxed{{{answer}}}$. I hope it is correct."
            ),
            Value::Null,
        )
    };
    (
        200,
        json!({
            "id": format!("mock-{}", fnv64(&[body.as_bytes()]) % 100_000),
            "object": "chat.completion",
            "choices": [{
                "index": 0,
                "message": { "role": "assistant", "content": content },
                "finish_reason": "stop",
                "stop_reason": stop_reason,
            }],
        }),
    )
}

fn emulate_score(spec: &EmulatorSpec, body: &str) -> (u16, Value) {
    let Ok(parsed) = serde_json::from_str::<Value>(body) else {
        return (400, json!({ "error": "invalid JSON" }));
    };
    let question = parsed["question"].as_str().unwrap_or("");
    let input = parsed["input"].as_str().unwrap_or("");
    let mode = parsed["mode"].as_str().unwrap_or("per_step");
    let boundaries = input.matches(REWARD_TOKEN).count().max(1);
    let count = if mode == "whole" { 1 } else { boundaries };
    let scores: Vec<f64> = (0..count)
        .map(|i| {
            unit_score(
                spec.score_seed,
                &[question.as_bytes(), input.as_bytes(), &i.to_le_bytes(), mode.as_bytes()],
            )
        })
        .collect();
    (200, json!({ "scores": scores }))
}
