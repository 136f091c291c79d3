use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable holding the bearer token for [`HttpBackend`].
pub const API_TOKEN_ENV: &str = "CHARTSEAL_API_TOKEN";

/// One multimodal completion request.
#[derive(Debug, Clone, PartialEq)]
pub struct MllmRequest {
    pub prompt: String,
    /// PNG-encoded images, attached in order.
    pub images: Vec<Vec<u8>>,
    /// Caller-side identifier of the image being analyzed. Never sent over
    /// the wire; test backends may key on it.
    pub label: Option<String>,
}

/// `(images + prompt) → text`. Replies are untrusted until validated.
pub trait MllmBackend: Send + Sync {
    fn complete(&self, request: &MllmRequest) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub timeout_secs: u64,
    pub retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

/// Vendor-neutral JSON-over-HTTP backend.
///
/// Request body: `{"prompt": str, "images": [{"mime_type": "image/png", "data": base64}]}`.
/// The reply is either a JSON object with a string `text`, `output` or
/// `content` field, or plain text.
pub struct HttpBackend {
    config: HttpBackendConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireImage<'a> {
    mime_type: &'a str,
    data: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    images: Vec<WireImage<'a>>,
}

impl HttpBackend {
    /// Reads the token from [`API_TOKEN_ENV`] if set.
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        let token = std::env::var(API_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::with_token(config, token)
    }

    pub fn with_token(config: HttpBackendConfig, token: Option<String>) -> Result<Self> {
        if !(config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
            return Err(Error::arg(format!(
                "backend endpoint must be an http(s) URL, got `{}`",
                config.endpoint
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::Transport(format!("building HTTP client: {e}")))?;
        Ok(Self { config, token, client })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn attempt(&self, body: &WireRequest) -> std::result::Result<String, (bool, String)> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, e.to_string()))?;
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("HTTP {status}")));
        }
        Ok(extract_reply(&text))
    }
}

fn extract_reply(body: &str) -> String {
    if let Ok(serde_json::Value::Object(obj)) = serde_json::from_str(body) {
        for key in ["text", "output", "content"] {
            if let Some(serde_json::Value::String(s)) = obj.get(key) {
                return s.clone();
            }
        }
    }
    body.to_owned()
}

impl MllmBackend for HttpBackend {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let body = WireRequest {
            prompt: &request.prompt,
            images: request
                .images
                .iter()
                .map(|png| WireImage {
                    mime_type: "image/png",
                    data: b64.encode(png),
                })
                .collect(),
        };
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) => {
                    last = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(Error::Transport(format!(
            "{} failed after {} attempt(s): {last}",
            self.config.endpoint,
            self.config.retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn serve(responses: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (mut s, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                // read headers, then the declared body length
                loop {
                    let n = s.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf).to_string();
                    if let Some(idx) = text.find("\r\n\r\n") {
                        let len = text
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if buf.len() >= idx + 4 + len {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                seen.push(String::from_utf8_lossy(&buf).to_string());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                s.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn config(endpoint: String) -> HttpBackendConfig {
        HttpBackendConfig {
            endpoint,
            timeout_secs: 5,
            retries: 2,
            backoff_ms: 1,
            max_in_flight: 1,
        }
    }

    fn request() -> MllmRequest {
        MllmRequest {
            prompt: "hello".into(),
            images: vec![vec![1, 2, 3]],
            label: Some("secret-label".into()),
        }
    }

    #[test]
    fn posts_prompt_image_and_token() {
        let (url, h) = serve(vec![(200, r#"{"text": "answer"}"#)]);
        let b = HttpBackend::with_token(config(url), Some("tok123".into())).unwrap();
        assert_eq!(b.complete(&request()).unwrap(), "answer");
        let seen = h.join().unwrap();
        assert!(seen[0].to_ascii_lowercase().contains("authorization: bearer tok123"));
        assert!(seen[0].contains("\"prompt\":\"hello\""));
        assert!(seen[0].contains("\"data\":\"AQID\""));
        assert!(!seen[0].contains("secret-label"));
    }

    #[test]
    fn retries_server_errors() {
        let (url, h) = serve(vec![(503, "busy"), (200, "plain reply")]);
        let b = HttpBackend::with_token(config(url), None).unwrap();
        assert_eq!(b.complete(&request()).unwrap(), "plain reply");
        assert_eq!(h.join().unwrap().len(), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, h) = serve(vec![(401, "no")]);
        let b = HttpBackend::with_token(config(url), None).unwrap();
        assert!(matches!(b.complete(&request()), Err(Error::Transport(_))));
        assert_eq!(h.join().unwrap().len(), 1);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let b = HttpBackend::with_token(config(url), None).unwrap();
        assert!(matches!(b.complete(&request()), Err(Error::Transport(_))));
    }

    #[test]
    fn rejects_non_http_endpoint() {
        assert!(matches!(
            HttpBackend::with_token(config("ftp://x".into()), None),
            Err(Error::Argument(_))
        ));
    }
}
