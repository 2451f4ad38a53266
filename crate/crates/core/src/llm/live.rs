use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{LlmError, LlmGateway, LlmRequest};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Retries after the first attempt for transport errors, 429 and 5xx.
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            api_key: None,
            retries: 3,
            backoff: Duration::from_secs(2),
            timeout: Duration::from_secs(300),
        }
    }
}

impl LiveConfig {
    /// Reads the credential from the named environment variable, if set.
    pub fn with_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }
}

/// Client for any endpoint speaking the OpenAI chat-completions schema.
pub struct ChatCompletionsClient {
    config: LiveConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl ChatCompletionsClient {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn payload(req: &LlmRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !req.system_message.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_message}));
        }
        messages.push(json!({"role": "user", "content": req.user_message}));
        json!({
            "model": req.model_name,
            "messages": messages,
            "temperature": req.temperature,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {}", truncate(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!("HTTP {status}: {}", truncate(&text))));
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(format!("malformed completion: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("completion has no message content".to_string()))
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(512) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl LlmGateway for ChatCompletionsClient {
    fn query(&mut self, req: &LlmRequest) -> Result<String, LlmError> {
        if req.user_message.is_empty() {
            return Err(LlmError::EmptyRequest);
        }
        let body = Self::payload(req);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(e)) => return Err(LlmError::Unavailable { attempts, last_error: e }),
                Err(Attempt::Retry(e)) => {
                    if attempts > self.config.retries {
                        return Err(LlmError::Unavailable { attempts, last_error: e });
                    }
                    tracing::warn!(attempt = attempts, error = %e, "transient LLM failure, retrying");
                    thread::sleep(self.config.backoff * 2u32.saturating_pow(attempts - 1));
                }
            }
        }
    }
}
