//! Shared test helpers: a minimal local completion endpoint and corpus paths.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// A tiny HTTP/1.1 completion endpoint for judge tests. Replies
/// `{"text": ...}` based on the predicted answer embedded in the prompt:
/// "goodanswer" → "Yes.", "badanswer" → "no", anything else → "maybe".
pub struct StubEndpoint {
    pub url: String,
    pub calls: Arc<AtomicUsize>,
}

impl StubEndpoint {
    pub fn spawn() -> Self {
        Self::spawn_with_status(200)
    }

    /// A stub that always answers with the given HTTP status; non-2xx
    /// exercises the retry/annotation path.
    pub fn spawn_with_status(status: u16) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub endpoint");
        let addr = listener.local_addr().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&calls);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                counter.fetch_add(1, Ordering::SeqCst);
                let body = read_request_body(&mut stream);
                let reply = if status == 200 {
                    let text = if body.contains("goodanswer") {
                        "Yes."
                    } else if body.contains("badanswer") {
                        "no"
                    } else {
                        "maybe"
                    };
                    format!("{{\"text\": \"{text}\"}}")
                } else {
                    String::from("{}")
                };
                let response = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        StubEndpoint {
            url: format!("http://{addr}/complete"),
            calls,
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn read_request_body(stream: &mut std::net::TcpStream) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let mut content_length = None;
    loop {
        // Parse headers first to learn the body length.
        if let Some(pos) = find_header_end(&buf) {
            if content_length.is_none() {
                let headers = String::from_utf8_lossy(&buf[..pos]).to_lowercase();
                content_length = headers
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:"))
                    .and_then(|v| v.trim().parse::<usize>().ok());
            }
            let have = buf.len() - (pos + 4);
            if have >= content_length.unwrap_or(0) {
                return String::from_utf8_lossy(&buf[pos + 4..]).into_owned();
            }
        }
        match stream.read(&mut chunk) {
            Ok(0) => return String::from_utf8_lossy(&buf).into_owned(),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => return String::new(),
        }
    }
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Path of the compiled `uqeval` binary.
pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_uqeval")
}

/// Repo-level data directory with the bundled synthetic corpus.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Runs the binary, returning (exit code, stdout, stderr).
pub fn run(args: &[&str]) -> (i32, String, String) {
    let output = std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("spawn uqeval");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}
