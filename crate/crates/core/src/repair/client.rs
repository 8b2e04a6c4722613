//! Model clients: a scripted fixture-backed mock and an OpenAI-compatible
//! chat-completions client.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::{ApproxByteCounter, TokenCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Completion,
    Repair,
    Explanation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;
    fn add(self, o: Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens + o.prompt_tokens,
            completion_tokens: self.completion_tokens + o.completion_tokens,
        }
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, o: Usage) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest<'a> {
    pub task_id: &'a str,
    pub stage: Stage,
    pub round: usize,
    pub sample: usize,
    pub prompt: &'a str,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("no scripted completion for task {task_id} ({stage:?}, round {round}, sample {sample})")]
    NoScript {
        task_id: String,
        stage: Stage,
        round: usize,
        sample: usize,
    },
    #[error("model request failed: {0}")]
    Transport(String),
    #[error("malformed model response: {0}")]
    Protocol(String),
    #[error("client config error: {0}")]
    Config(String),
}

pub trait ModelClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ClientError>;
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedStep {
    pub stage: Stage,
    /// Applies only if the prompt contains this text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
    #[serde(flatten)]
    pub reply: ScriptedReply,
}

impl ScriptedStep {
    fn applies(&self, req: &CompletionRequest<'_>) -> bool {
        self.stage == req.stage
            && self.round.map_or(true, |r| r == req.round)
            && self.sample.map_or(true, |s| s == req.sample)
            && self
                .when_prompt_contains
                .as_deref()
                .map_or(true, |needle| req.prompt.contains(needle))
    }
}

/// Mock client fixture. Lookup order: exact prompt hash, then the first
/// applicable step scripted for the task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFixture {
    #[serde(default)]
    pub by_prompt_sha256: BTreeMap<String, ScriptedReply>,
    #[serde(default)]
    pub by_task: BTreeMap<String, Vec<ScriptedStep>>,
}

pub struct ScriptedClient {
    fixture: ScriptedFixture,
}

impl ScriptedClient {
    pub fn new(fixture: ScriptedFixture) -> Self {
        ScriptedClient { fixture }
    }

    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        let fixture = serde_json::from_str(&text)
            .map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(fixture))
    }
}

impl ModelClient for ScriptedClient {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, ClientError> {
        let reply = self
            .fixture
            .by_prompt_sha256
            .get(&prompt_sha256(req.prompt))
            .or_else(|| {
                self.fixture
                    .by_task
                    .get(req.task_id)?
                    .iter()
                    .find(|s| s.applies(req))
                    .map(|s| &s.reply)
            })
            .ok_or_else(|| ClientError::NoScript {
                task_id: req.task_id.to_string(),
                stage: req.stage,
                round: req.round,
                sample: req.sample,
            })?;
        let usage = reply.usage.unwrap_or_else(|| Usage {
            prompt_tokens: ApproxByteCounter.count(req.prompt) as u64,
            completion_tokens: ApproxByteCounter.count(&reply.text) as u64,
        });
        Ok(Completion {
            text: reply.text.clone(),
            usage,
        })
    }
}

/// Spaces requests evenly to stay under a per-minute limit.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        RateLimiter {
            interval: Duration::from_secs(60) / requests.max(1),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// The `model.*` configuration block for the HTTP client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub requests_per_minute: u32,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            requests_per_minute: 500,
            max_retries: 3,
            timeout_secs: 120,
        }
    }
}

pub struct HttpChatClient {
    cfg: ChatConfig,
    api_key: String,
    seed: u64,
    limiter: RateLimiter,
    agent: ureq::Agent,
}

impl HttpChatClient {
    /// Reads the API key from the configured environment variable.
    pub fn new(cfg: ChatConfig, seed: u64) -> Result<Self, ClientError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| ClientError::Config(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build();
        Ok(HttpChatClient {
            limiter: RateLimiter::per_minute(cfg.requests_per_minute),
            cfg,
            api_key,
            seed,
            agent,
        })
    }

    fn call(&self, req: &CompletionRequest<'_>) -> Result<Completion, (bool, ClientError)> {
        self.limiter.acquire();
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": self.cfg.temperature,
            "seed": self.seed.wrapping_add(req.sample as u64),
        });
        let resp = self
            .agent
            .post(&self.cfg.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let retry = code == 429 || code >= 500;
                let text = r.into_string().unwrap_or_default();
                return Err((retry, ClientError::Transport(format!("HTTP {code}: {text}"))));
            }
            Err(e) => return Err((true, ClientError::Transport(e.to_string()))),
        };
        let v: serde_json::Value = resp
            .into_json()
            .map_err(|e| (false, ClientError::Protocol(e.to_string())))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| (false, ClientError::Protocol("missing choices[0].message.content".into())))?;
        Ok(Completion {
            text: text.to_string(),
            usage: Usage {
                prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            },
        })
    }
}

impl ModelClient for HttpChatClient {
    fn name(&self) -> &str {
        &self.cfg.model
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Completion, ClientError> {
        let mut attempt = 0;
        loop {
            match self.call(req) {
                Ok(c) => return Ok(c),
                Err((true, e)) if attempt < self.cfg.max_retries => {
                    log::warn!("{}: retrying after {e}", req.task_id);
                    thread::sleep(Duration::from_millis(500 << attempt.min(6)));
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(stage: Stage, prompt: &'a str) -> CompletionRequest<'a> {
        CompletionRequest {
            task_id: "t",
            stage,
            round: 0,
            sample: 0,
            prompt,
            max_tokens: 1024,
        }
    }

    fn step(stage: Stage, when: Option<&str>, text: &str) -> ScriptedStep {
        ScriptedStep {
            stage,
            when_prompt_contains: when.map(Into::into),
            round: None,
            sample: None,
            reply: ScriptedReply { text: text.into(), usage: None },
        }
    }

    #[test]
    fn hash_lookup_wins() {
        let mut f = ScriptedFixture::default();
        f.by_prompt_sha256.insert(
            prompt_sha256("hello"),
            ScriptedReply { text: "{ a; }".into(), usage: Some(Usage { prompt_tokens: 3, completion_tokens: 4 }) },
        );
        f.by_task.insert("t".into(), vec![step(Stage::Completion, None, "{ b; }")]);
        let c = ScriptedClient::new(f);
        let r = c.complete(&req(Stage::Completion, "hello")).unwrap();
        assert_eq!(r.text, "{ a; }");
        assert_eq!(r.usage.total(), 7);
        assert_eq!(c.complete(&req(Stage::Completion, "other")).unwrap().text, "{ b; }");
    }

    #[test]
    fn conditional_steps() {
        let mut f = ScriptedFixture::default();
        f.by_task.insert(
            "t".into(),
            vec![
                step(Stage::Repair, Some("interface IVault"), "{ fixed; }"),
                step(Stage::Repair, None, "{ still_wrong; }"),
            ],
        );
        let c = ScriptedClient::new(f);
        assert_eq!(c.complete(&req(Stage::Repair, "see interface IVault {")).unwrap().text, "{ fixed; }");
        assert_eq!(c.complete(&req(Stage::Repair, "nothing")).unwrap().text, "{ still_wrong; }");
        assert!(matches!(c.complete(&req(Stage::Completion, "x")), Err(ClientError::NoScript { .. })));
    }

    #[test]
    fn default_usage_is_approximate_count() {
        let mut f = ScriptedFixture::default();
        f.by_task.insert("t".into(), vec![step(Stage::Completion, None, "12345")]);
        let u = ScriptedClient::new(f).complete(&req(Stage::Completion, "abcdefgh")).unwrap().usage;
        assert_eq!(u, Usage { prompt_tokens: 2, completion_tokens: 2 });
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::per_minute(1200); // 50 ms apart
        let t = Instant::now();
        for _ in 0..3 {
            l.acquire();
        }
        assert!(t.elapsed() >= Duration::from_millis(95));
    }

    #[test]
    fn missing_api_key_is_config_error() {
        let cfg = ChatConfig {
            api_key_env: "SOLCOMPLETE_TEST_UNSET_KEY_VAR".into(),
            ..ChatConfig::default()
        };
        assert!(matches!(HttpChatClient::new(cfg, 0), Err(ClientError::Config(_))));
    }
}
