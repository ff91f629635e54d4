use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_TOKEN_ENV: &str = "MOMENT_LLM_TOKEN";

/// A text-completion backend. Implementations must be safe to call from
/// several threads at once.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

pub(crate) fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Canned replies keyed by the SHA-256 hex digest of the prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockClient {
    replies: BTreeMap<String, String>,
}

impl MockClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_hashed(replies: BTreeMap<String, String>) -> Self {
        MockClient { replies }
    }

    pub fn register(&mut self, prompt: &str, reply: impl Into<String>) {
        self.replies.insert(prompt_hash(prompt), reply.into());
    }

    /// Reply for prompts without a registered answer: a one-exchange
    /// dialogue tagged with the first 16 hex digits of the prompt hash.
    pub fn fallback_reply(prompt: &str) -> String {
        let tag = &prompt_hash(prompt)[..16];
        format!("User: mock question {tag}\nAssistant: mock answer {tag}")
    }
}

impl LlmClient for MockClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.is_empty() {
            return Err(Error::Input("prompt is empty".into()));
        }
        Ok(self
            .replies
            .get(&prompt_hash(prompt))
            .cloned()
            .unwrap_or_else(|| Self::fallback_reply(prompt)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpClientConfig {
    /// Chat-completions URL accepting `{model, messages}` JSON.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding a bearer token; unset means no auth.
    pub token_env: String,
    pub retries: u32,
    pub timeout_secs: f64,
    pub backoff_ms: u64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "vicuna-7b".into(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            retries: 3,
            timeout_secs: 60.0,
            backoff_ms: 500,
        }
    }
}

/// Remote chat endpoint over HTTP. Failed attempts are retried `retries`
/// times with doubling backoff.
pub struct HttpClient {
    config: HttpClientConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Result<Self> {
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(Error::Input(format!(
                "timeout must be positive, got {}",
                config.timeout_secs
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&config.token_env)
            .ok()
            .filter(|t| !t.is_empty());
        Ok(HttpClient {
            config,
            agent,
            token,
        })
    }

    pub fn config(&self) -> &HttpClientConfig {
        &self.config
    }

    fn attempt(&self, prompt: &str) -> std::result::Result<String, String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request.send_json(&body).map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let mut text = String::new();
        response
            .body_mut()
            .as_reader()
            .read_to_string(&mut text)
            .map_err(|e| e.to_string())?;
        if !(200..300).contains(&status) {
            return Err(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ));
        }
        Ok(extract_content(&text))
    }
}

/// `choices[0].message.content` when the body is a chat response, otherwise
/// the body itself.
fn extract_content(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/choices/0/message/content")
                .and_then(|c| c.as_str())
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.to_string())
}

impl LlmClient for HttpClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.is_empty() {
            return Err(Error::Input("prompt is empty".into()));
        }
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                log::warn!("LLM request failed ({last}); retry {attempt} in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(prompt) {
                Ok(reply) => return Ok(reply),
                Err(e) => last = e,
            }
        }
        Err(Error::Client {
            attempts: self.config.retries + 1,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registered_reply_is_verbatim() {
        let mut mock = MockClient::new();
        mock.register("hello", "  exact reply\n");
        assert_eq!(mock.complete("hello").unwrap(), "  exact reply\n");
    }

    #[test]
    fn fallback_embeds_the_hash() {
        let mock = MockClient::new();
        let reply = mock.complete("anything").unwrap();
        let tag = &prompt_hash("anything")[..16];
        assert_eq!(
            reply,
            format!("User: mock question {tag}\nAssistant: mock answer {tag}")
        );
        assert_eq!(mock.complete("anything").unwrap(), reply);
        assert!(mock.complete("").is_err());
    }

    #[test]
    fn chat_body_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(extract_content(body), "hi");
        assert_eq!(extract_content("plain text"), "plain text");
        assert_eq!(extract_content(r#"{"other":1}"#), r#"{"other":1}"#);
    }
}
