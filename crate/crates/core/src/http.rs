//! JSON-over-HTTP with bounded retries, shared by the remote embedder and
//! the remote chat client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Retry contract for remote providers: `attempts` total tries, sleeping
/// `initial_backoff`, then doubling, between consecutive failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum HttpFailure {
    /// Connection refused, reset, timed out, or unreadable body.
    Transport { attempts: u32, message: String },
    /// Non-success status; `body` is the provider's error payload.
    Status { attempts: u32, status: u16, body: String },
}

impl HttpFailure {
    fn retryable(&self) -> bool {
        match self {
            HttpFailure::Transport { .. } => true,
            HttpFailure::Status { status, .. } => *status == 429 || *status >= 500,
        }
    }

    fn with_attempts(self, n: u32) -> Self {
        match self {
            HttpFailure::Transport { message, .. } => HttpFailure::Transport { attempts: n, message },
            HttpFailure::Status { status, body, .. } => HttpFailure::Status {
                attempts: n,
                status,
                body,
            },
        }
    }
}

/// The error and its sources, outermost first.
fn error_chain(e: &dyn std::error::Error) -> String {
    let mut parts = vec![e.to_string()];
    let mut source = e.source();
    while let Some(inner) = source {
        let text = inner.to_string();
        if !parts.iter().any(|p| p.contains(&text)) {
            parts.push(text);
        }
        source = inner.source();
    }
    parts.join(": ")
}

pub(crate) fn client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds with static settings")
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// POSTs `body` and returns the decoded JSON response. The last failure wins
/// once the policy is exhausted; a success ends the loop immediately.
pub(crate) fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    policy: &RetryPolicy,
) -> Result<Value, HttpFailure> {
    let attempts = policy.attempts.max(1);
    let mut backoff = policy.initial_backoff;
    let mut last = None;
    for attempt in 1..=attempts {
        match post_once(client, url, api_key, body) {
            Ok(value) => return Ok(value),
            Err(failure) => {
                let retry = failure.retryable();
                tracing::warn!(attempt, url, ?failure, "provider request failed");
                last = Some(failure.with_attempts(attempt));
                if !retry || attempt == attempts {
                    break;
                }
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

fn post_once(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, HttpFailure> {
    let transport = |e: reqwest::Error| HttpFailure::Transport {
        attempts: 0,
        message: error_chain(&e),
    };
    let mut request = client.post(url).json(body);
    if let Some(key) = api_key {
        request = request.bearer_auth(key);
    }
    let response = request.send().map_err(transport)?;
    let status = response.status();
    let text = response.text().map_err(transport)?;
    if !status.is_success() {
        return Err(HttpFailure::Status {
            attempts: 0,
            status: status.as_u16(),
            body: text,
        });
    }
    serde_json::from_str(&text).map_err(|e| HttpFailure::Transport {
        attempts: 0,
        message: format!("response is not JSON: {e}"),
    })
}

/// Reads an API key from the named environment variable, ignoring blanks.
pub(crate) fn api_key_from_env(var: Option<&str>) -> Option<String> {
    var.and_then(|v| std::env::var(v).ok())
        .filter(|k| !k.trim().is_empty())
}

#[cfg(test)]
pub(crate) mod testing {
    //! Minimal single-purpose HTTP server for exercising remote clients.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{SocketAddr, TcpListener};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    pub struct StubServer {
        pub addr: SocketAddr,
        pub hits: Arc<AtomicUsize>,
        pub bodies: Arc<Mutex<Vec<String>>>,
    }

    impl StubServer {
        pub fn base_url(&self) -> String {
            format!("http://{}", self.addr)
        }
    }

    /// Serves `respond(request_body, hit_number)` -> (status, body) forever.
    pub fn serve<F>(respond: F) -> StubServer
    where
        F: Fn(&str, usize) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).ok();
                let body = String::from_utf8_lossy(&body).to_string();
                let n = h.fetch_add(1, Ordering::SeqCst) + 1;
                b.lock().unwrap().push(body.clone());
                let (status, payload) = respond(&body, n);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                stream.write_all(reply.as_bytes()).ok();
            }
        });
        StubServer { addr, hits, bodies }
    }

    /// Accepts connections and drops them without a response.
    pub fn black_hole() -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                h.fetch_add(1, Ordering::SeqCst);
                drop(stream);
            }
        });
        StubServer {
            addr,
            hits,
            bodies: Arc::new(Mutex::new(Vec::new())),
        }
    }
}
