//! A scripted chat-completions server on localhost, for tests and demos.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::json;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum MockReply {
    /// Answer with the last line of the prompt.
    Echo,
    Text(String),
    /// Answer with this HTTP status and an error body.
    Status(u16),
    /// Answer 200 with a body that is not chat-completions JSON.
    Garbage,
    /// Close the connection without answering.
    Hangup,
    /// Fail with 503 this many times per prompt, then echo.
    FlakyEcho(usize),
}

struct Script {
    rules: Vec<(String, MockReply)>,
    fallback: MockReply,
    seen: Mutex<std::collections::HashMap<String, usize>>,
    requests: AtomicUsize,
}

impl Script {
    fn reply_for(&self, prompt: &str) -> MockReply {
        self.rules
            .iter()
            .find(|(needle, _)| prompt.contains(needle.as_str()))
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| self.fallback.clone())
    }
}

/// Runs until dropped.
pub struct MockServer {
    addr: SocketAddr,
    script: Arc<Script>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// `rules` are tried in order; the first whose key occurs in the prompt wins.
    pub fn start(rules: Vec<(String, MockReply)>, fallback: MockReply) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| Error::io("127.0.0.1:0", e))?;
        let addr = listener.local_addr().map_err(|e| Error::io("127.0.0.1:0", e))?;
        let script = Arc::new(Script {
            rules,
            fallback,
            seen: Mutex::new(Default::default()),
            requests: AtomicUsize::new(0),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let (s2, stop2) = (script.clone(), stop.clone());
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = conn {
                    let s = s2.clone();
                    thread::spawn(move || {
                        let _ = serve(stream, &s);
                    });
                }
            }
        });
        Ok(Self {
            addr,
            script,
            stop,
            handle: Some(handle),
        })
    }

    /// Base URL to hand to the client.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.script.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, script: &Script) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    script.requests.fetch_add(1, Ordering::SeqCst);

    let prompt = serde_json::from_slice::<serde_json::Value>(&body)
        .ok()
        .and_then(|v| v["messages"][0]["content"].as_str().map(str::to_string))
        .unwrap_or_default();
    let last_line = prompt.lines().last().unwrap_or_default().to_string();
    let mut out = stream;
    let reply = match script.reply_for(&prompt) {
        MockReply::FlakyEcho(n) => {
            let mut seen = script.seen.lock().expect("mock state");
            let count = seen.entry(prompt.clone()).or_insert(0);
            *count += 1;
            if *count <= n {
                MockReply::Status(503)
            } else {
                MockReply::Echo
            }
        }
        r => r,
    };
    let (status, body) = match reply {
        MockReply::Hangup => return Ok(()),
        MockReply::Echo => (200, completion(&last_line)),
        MockReply::Text(t) => (200, completion(&t)),
        MockReply::Garbage => (200, "{\"unexpected\": true}".to_string()),
        MockReply::Status(code) => (code, json!({"error": {"message": "scripted failure"}}).to_string()),
        MockReply::FlakyEcho(_) => unreachable!("resolved above"),
    };
    write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()
}

fn completion(text: &str) -> String {
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
    })
    .to_string()
}
