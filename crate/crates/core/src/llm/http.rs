//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{approx_token_count, truncate_at_stop, BackendError, Completion, CompletionBackend, CompletionRequest, Usage};

pub const API_BASE_ENV: &str = "REACT_TOD_API_BASE";
pub const API_KEY_ENV: &str = "REACT_TOD_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Backoff before the first retry; doubles for each further retry.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, initial_backoff: Duration::from_secs(1), timeout: Duration::from_secs(60) }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff.saturating_mul(1u32 << retry.min(16))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, BackendError> {
        let base_url = std::env::var(API_BASE_ENV)
            .map_err(|_| BackendError::Config(format!("{API_BASE_ENV} is not set")))?;
        Ok(HttpConfig { base_url, api_key: std::env::var(API_KEY_ENV).ok(), retry: RetryPolicy::default() })
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    stop: &'a [String],
    max_tokens: u32,
    temperature: f64,
    n: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.retry.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(HttpBackend { client, endpoint, api_key: config.api_key, retry: config.retry })
    }

    /// One request without retries. Transport errors, 429 and 5xx come back
    /// as [`BackendError::Retryable`].
    pub fn attempt(&self, request: &CompletionRequest, attempt: u32) -> Result<Completion, BackendError> {
        let body = ChatRequest {
            model: &request.model,
            messages: [ChatMessage { role: "user", content: &request.prompt }],
            stop: &request.stop,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            n: 1,
        };
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| BackendError::Retryable { attempt, message: format!("transport: {e}") })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Retryable { attempt, message: format!("server returned {status}") });
        }
        if !status.is_success() {
            let detail = response.text().unwrap_or_default();
            return Err(BackendError::Fatal { attempts: attempt, message: format!("server returned {status}: {detail}") });
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| BackendError::Fatal { attempts: attempt, message: format!("malformed response: {e}") })?;
        let raw = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal { attempts: attempt, message: "response has no content".into() })?;
        let text = truncate_at_stop(&raw, &request.stop).to_string();
        let usage = match parsed.usage {
            Some(u) => Usage::new(u.prompt_tokens, u.completion_tokens),
            None => Usage::new(approx_token_count(&request.prompt), approx_token_count(&text)),
        };
        Ok(Completion { text, usage })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let mut attempt = 1;
        loop {
            match self.attempt(request, attempt) {
                Err(BackendError::Retryable { message, .. }) => {
                    if attempt > self.retry.max_retries {
                        return Err(BackendError::Fatal { attempts: attempt, message });
                    }
                    tracing::warn!(attempt, %message, "completion failed, retrying");
                    std::thread::sleep(self.retry.backoff(attempt - 1));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Minimal HTTP/1.1 server answering each connection with the next
    /// canned (status, body) pair and recording request bodies.
    fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen_thread = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen_thread.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn backend(base: String) -> HttpBackend {
        HttpBackend::new(HttpConfig {
            base_url: base,
            api_key: Some("k".into()),
            retry: RetryPolicy { max_retries: 3, initial_backoff: Duration::ZERO, timeout: Duration::from_secs(5) },
        })
        .unwrap()
    }

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Thought: ok\nFinal Answer: canned"}}],
        "usage":{"prompt_tokens":17,"completion_tokens":5,"total_tokens":22}}"#;

    #[test]
    fn returns_server_text_and_usage() {
        let (base, seen) = stub(vec![(200, OK_BODY.into())]);
        let out = backend(base).complete(&CompletionRequest::new("hello", "gpt-4-32k")).unwrap();
        assert_eq!(out.text, "Thought: ok\nFinal Answer: canned");
        assert_eq!(out.usage, Usage::new(17, 5));
        let sent: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "gpt-4-32k");
        assert_eq!(sent["stop"][0], "Observation:");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["messages"][0]["content"], "hello");
    }

    #[test]
    fn retries_server_errors_and_rate_limits() {
        let (base, seen) = stub(vec![(500, "{}".into()), (429, "{}".into()), (200, OK_BODY.into())]);
        let out = backend(base).complete(&CompletionRequest::new("p", "m")).unwrap();
        assert_eq!(out.usage.total(), 22);
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (base, seen) = stub(vec![(400, r#"{"error":"bad"}"#.into()), (200, OK_BODY.into())]);
        let err = backend(base).complete(&CompletionRequest::new("p", "m")).unwrap_err();
        assert!(matches!(err, BackendError::Fatal { attempts: 1, .. }), "{err:?}");
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn exhausted_retries_are_fatal() {
        let (base, seen) = stub((0..4).map(|_| (503, "{}".to_string())).collect());
        let err = backend(base).complete(&CompletionRequest::new("p", "m")).unwrap_err();
        assert!(matches!(err, BackendError::Fatal { attempts: 4, .. }), "{err:?}");
        assert_eq!(seen.lock().unwrap().len(), 4);
    }

    #[test]
    fn single_attempt_classifies_retryable() {
        let (base, _) = stub(vec![(502, "{}".into())]);
        let err = backend(base).attempt(&CompletionRequest::new("p", "m"), 1).unwrap_err();
        assert!(err.is_retryable());
    }

    #[test]
    fn backoff_doubles() {
        let policy = RetryPolicy::default();
        assert_eq!(
            (0..3).map(|r| policy.backoff(r).as_secs()).collect::<Vec<_>>(),
            [1, 2, 4]
        );
    }
}
