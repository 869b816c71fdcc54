//! OpenAI-compatible chat endpoint for relation labeling.

use std::time::Duration;

use serde_json::{json, Value};
use spanwise_core::relations::TextEndpoint;
use spanwise_core::{Error, Result};

/// Environment variable holding the bearer token, if the endpoint needs one.
pub const KEY_VAR: &str = "SPANWISE_LABELER_KEY";

pub struct HttpLabeler {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    key: Option<String>,
}

impl HttpLabeler {
    /// `url` is the full chat-completions address.
    pub fn new(url: &str, model: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Labeling(e.to_string()))?;
        Ok(HttpLabeler {
            client,
            url: url.to_string(),
            model: model.to_string(),
            key: std::env::var(KEY_VAR).ok().filter(|k| !k.is_empty()),
        })
    }
}

/// Message text of the first choice in a chat-completions response.
pub fn message_text(body: &Value) -> Result<String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Labeling("response has no choices[0].message.content".into()))
}

impl TextEndpoint for HttpLabeler {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let mut request = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Labeling(e.to_string()))?;
        let value: Value = response.json().map_err(|e| Error::Labeling(e.to_string()))?;
        message_text(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_first_choice() {
        let body = json!({ "choices": [{ "message": { "role": "assistant", "content": "1. AGREE" } }] });
        assert_eq!(message_text(&body).unwrap(), "1. AGREE");
        assert!(message_text(&json!({ "choices": [] })).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_a_labeling_error() {
        let l = HttpLabeler::new("http://127.0.0.1:9/v1/chat/completions", "m").unwrap();
        assert!(matches!(l.complete("x"), Err(Error::Labeling(_))));
    }
}
