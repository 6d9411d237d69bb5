//! Generic HTTP core: a chat-completions-shaped endpoint behind the uniform
//! generation interface. No vendor SDKs; any endpoint speaking the common
//! `messages in, choices out` JSON shape works. Wall-time only, so it is not
//! schedulable by the model-time kernel and stays out of the benchmark paths.

use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{KernelError, Result};
use crate::sdk::Message;

use super::{FinishReason, GenOverrides, Generation, TextGenerator};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct HttpCoreConfig {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

pub struct HttpCore {
    cfg: HttpCoreConfig,
    client: reqwest::blocking::Client,
}

impl HttpCore {
    pub fn new(cfg: HttpCoreConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| KernelError::Http(e.to_string()))?;
        Ok(HttpCore { cfg, client })
    }

    pub fn config(&self) -> &HttpCoreConfig {
        &self.cfg
    }

    pub fn build_request_body(model: &str, prompt: &[Message], ov: &GenOverrides) -> Value {
        let messages: Vec<Value> = prompt
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect();
        let mut body = json!({"model": model, "messages": messages});
        if let Some(max) = ov.max_new_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn parse_response_body(v: &Value) -> Result<Generation> {
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                KernelError::Http("response has no choices[0].message.content".into())
            })?;
        let finish = match v
            .pointer("/choices/0/finish_reason")
            .and_then(Value::as_str)
        {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(Generation {
            text: content.to_string(),
            token_count: content.split_whitespace().count() as u64,
            finish_reason: finish,
            tool_calls: None,
        })
    }
}

impl TextGenerator for HttpCore {
    fn generate(&self, prompt: &[Message], overrides: &GenOverrides) -> Result<Generation> {
        let body = Self::build_request_body(&self.cfg.model, prompt, overrides);
        let mut req = self.client.post(&self.cfg.url).json(&body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| KernelError::Http(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(KernelError::Http(format!(
                "endpoint returned {}",
                resp.status()
            )));
        }
        let v: Value = resp.json().map_err(|e| KernelError::Http(e.to_string()))?;
        Self::parse_response_body(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_shape() {
        let prompt = vec![Message::new("user", "hello there")];
        let ov = GenOverrides {
            max_new_tokens: Some(32),
            ..Default::default()
        };
        let body = HttpCore::build_request_body("test-model", &prompt, &ov);
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["max_tokens"], 32);
    }

    #[test]
    fn response_body_parse() {
        let v = serde_json::json!({
            "choices": [{"message": {"content": "two words"}, "finish_reason": "stop"}]
        });
        let gen = HttpCore::parse_response_body(&v).unwrap();
        assert_eq!(gen.text, "two words");
        assert_eq!(gen.token_count, 2);
        assert_eq!(gen.finish_reason, FinishReason::Stop);
        assert!(HttpCore::parse_response_body(&serde_json::json!({})).is_err());
    }
}
