//! Blocking HTTP backend with a pluggable wire format.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ClientConfig, ClientError, CompletionBackend, CompletionRequest};

/// Request/response shape spoken to the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// `{"prompt", "max_tokens", "temperature", "stop"}` in, `{"text"}` out.
    #[default]
    Minimal,
    /// OpenAI-style legacy completions: adds `model`, reads `choices[0].text`.
    OpenaiCompletions,
}

impl FromStr for WireFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "minimal" => Ok(WireFormat::Minimal),
            "openai_completions" | "openai" => Ok(WireFormat::OpenaiCompletions),
            other => Err(format!("unknown wire format `{other}`")),
        }
    }
}

impl WireFormat {
    pub fn encode(self, req: &CompletionRequest, model: Option<&str>) -> Value {
        let mut body = json!({
            "prompt": req.prompt,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "stop": req.stop,
        });
        if self == WireFormat::OpenaiCompletions {
            body["model"] = json!(model.unwrap_or_default());
        }
        body
    }

    pub fn decode(self, body: &str) -> Result<String, BackendError> {
        let v: Value = serde_json::from_str(body)
            .map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))?;
        let text = match self {
            WireFormat::Minimal => v.get("text"),
            WireFormat::OpenaiCompletions => v.pointer("/choices/0/text"),
        };
        text.and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no completion text".into()))
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: Option<String>,
    wire: WireFormat,
}

impl HttpBackend {
    pub fn new(config: &ClientConfig) -> Result<Self, ClientError> {
        let endpoint = config.endpoint.clone().ok_or_else(|| {
            ClientError::InvalidRequest("no completion endpoint configured".into())
        })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            api_key: config.api_key.clone(),
            model: config.model.clone(),
            wire: config.wire,
        })
    }
}

fn classify(status: u16, body: &str) -> BackendError {
    let msg = format!(
        "HTTP {status}: {}",
        body.chars().take(200).collect::<String>()
    );
    match status {
        401 | 403 => BackendError::Auth(msg),
        408 => BackendError::Timeout(msg),
        429 | 500..=599 => BackendError::Transient(msg),
        _ => BackendError::Fatal(msg),
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = self.wire.encode(request, self.model.as_deref()).to_string();
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
            ureq::Error::BadUri(u) => BackendError::Fatal(format!("bad endpoint {u}")),
            other => BackendError::Transient(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
            other => BackendError::Transient(other.to_string()),
        })?;
        if !(200..300).contains(&status) {
            return Err(classify(status, &text));
        }
        self.wire.decode(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_both_wires() {
        let req = CompletionRequest {
            prompt: "p".into(),
            max_tokens: 4,
            temperature: 0.0,
            stop: vec!["\n".into()],
        };
        let v = WireFormat::Minimal.encode(&req, Some("m"));
        assert!(v.get("model").is_none());
        let v = WireFormat::OpenaiCompletions.encode(&req, Some("m"));
        assert_eq!(v["model"], "m");
        assert_eq!(v["stop"][0], "\n");
    }

    #[test]
    fn decodes_both_wires() {
        assert_eq!(
            WireFormat::Minimal.decode(r#"{"text":"hi"}"#).unwrap(),
            "hi"
        );
        assert_eq!(
            WireFormat::OpenaiCompletions
                .decode(r#"{"choices":[{"text":"yo"}]}"#)
                .unwrap(),
            "yo"
        );
        assert!(WireFormat::Minimal.decode("{}").is_err());
    }

    #[test]
    fn status_classes() {
        assert!(matches!(classify(401, ""), BackendError::Auth(_)));
        assert!(matches!(classify(503, ""), BackendError::Transient(_)));
        assert!(matches!(classify(429, ""), BackendError::Transient(_)));
        assert!(matches!(classify(400, ""), BackendError::Fatal(_)));
    }
}
