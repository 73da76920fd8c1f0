//! Live chat-completions client with retry, timeout, and a concurrency gate.
//!
//! Requests are POSTed to `{base_url}/chat/completions` as
//! `{model, messages: [{role: "system"|"user", content}], temperature}` and
//! the reply text is read from `choices[0].message.content`. Credentials are
//! read from an environment variable, never from config-file plaintext.

use serde::Deserialize;
use serde_json::json;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{
    AttemptLog, Backend, BackendError, CompletionRequest, CompletionResponse, ResponseSource,
    TokenUsage,
};

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First backoff delay; doubles on every subsequent retry.
    pub backoff_base: Duration,
    /// Maximum number of in-flight requests across all threads.
    pub concurrency: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "XAGENTS_API_KEY".into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            concurrency: 4,
        }
    }
}

/// Counting semaphore bounding parallel in-flight requests.
struct ConcurrencyGate {
    max: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

impl ConcurrencyGate {
    fn new(max: usize) -> Self {
        ConcurrencyGate {
            max: max.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.max {
            count = self.released.wait(count).unwrap();
        }
        *count += 1;
    }

    fn release(&self) {
        let mut count = self.in_flight.lock().unwrap();
        *count -= 1;
        self.released.notify_one();
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    config: HttpBackendConfig,
    api_key: String,
    gate: ConcurrencyGate,
}

impl HttpBackend {
    /// Builds the client, reading the credential from the configured
    /// environment variable.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            BackendError::Configuration(format!(
                "credential environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let agent = ureq::AgentBuilder::new()
            .timeout(config.timeout)
            .build();
        Ok(HttpBackend {
            agent,
            gate: ConcurrencyGate::new(config.concurrency),
            config,
            api_key,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &CompletionRequest) -> AttemptOutcome {
        let body = json!({
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
        });
        let started = Instant::now();
        let result = self
            .agent
            .post(&self.endpoint())
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(&body.to_string());
        let latency_ms = started.elapsed().as_millis() as u64;
        match result {
            Ok(response) => match response.into_string() {
                Ok(text) => AttemptOutcome::Success { text, latency_ms },
                Err(e) => AttemptOutcome::Retryable(format!("body read failed: {e}")),
            },
            // 429 and 5xx are transient; other statuses are hard failures.
            Err(ureq::Error::Status(status, response)) => {
                let body = response.into_string().unwrap_or_default();
                if status == 429 || status >= 500 {
                    AttemptOutcome::Retryable(format!("status {status}"))
                } else {
                    AttemptOutcome::Fatal(BackendError::Api { status, body })
                }
            }
            Err(ureq::Error::Transport(t)) => AttemptOutcome::Retryable(format!("transport: {t}")),
        }
    }

    fn parse_reply(raw: &str, latency_ms: u64) -> Result<CompletionResponse, BackendError> {
        #[derive(Deserialize)]
        struct Reply {
            choices: Vec<Choice>,
            #[serde(default)]
            usage: Option<Usage>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: Message,
        }
        #[derive(Deserialize)]
        struct Message {
            content: String,
        }
        #[derive(Deserialize, Default)]
        struct Usage {
            #[serde(default)]
            prompt_tokens: u64,
            #[serde(default)]
            completion_tokens: u64,
        }

        let reply: Reply = serde_json::from_str(raw)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("reply has no choices".into()))?;
        let usage = reply.usage.unwrap_or_default();
        Ok(CompletionResponse {
            text: choice.message.content,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            latency_ms,
            source: ResponseSource::Live,
        })
    }
}

enum AttemptOutcome {
    Success { text: String, latency_ms: u64 },
    Retryable(String),
    Fatal(BackendError),
}

impl Backend for HttpBackend {
    /// Completes the request, retrying transient failures (HTTP 429/5xx and
    /// transport errors) up to `max_retries` times with exponential backoff.
    /// Total attempts are bounded by `1 + max_retries`.
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        self.gate.acquire();
        let result = self.complete_gated(request);
        self.gate.release();
        result
    }
}

impl HttpBackend {
    fn complete_gated(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, BackendError> {
        let mut attempts: Vec<AttemptLog> = Vec::new();
        let total = 1 + self.config.max_retries;
        for attempt in 1..=total {
            match self.attempt(request) {
                AttemptOutcome::Success { text, latency_ms } => {
                    return Self::parse_reply(&text, latency_ms);
                }
                AttemptOutcome::Fatal(err) => return Err(err),
                AttemptOutcome::Retryable(outcome) => {
                    let backoff = if attempt < total {
                        self.config.backoff_base * 2u32.saturating_pow(attempt - 1)
                    } else {
                        Duration::ZERO
                    };
                    attempts.push(AttemptLog {
                        attempt,
                        outcome,
                        backoff_ms: backoff.as_millis() as u64,
                    });
                    if attempt < total {
                        std::thread::sleep(backoff);
                    }
                }
            }
        }
        let message = attempts
            .last()
            .map(|a| a.outcome.clone())
            .unwrap_or_else(|| "no attempts made".into());
        Err(BackendError::Transport { attempts, message })
    }
}
