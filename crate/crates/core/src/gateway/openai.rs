//! OpenAI-compatible chat-completions and embeddings client.

use std::fmt;
use std::io::Read;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::value::RawValue;
use serde_json::Value;
use tracing::{debug, warn};

use super::{
    ChatMessage, ChatRequest, EmbeddingVector, GatewayError, LlmGateway, TokenBucket, ToolCall,
    ToolChoice,
};

static OUTBOUND_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests attempted by [`UreqTransport`] in this process.
pub fn outbound_request_count() -> u64 {
    OUTBOUND_REQUESTS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: Vec<u8>,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: Vec<u8>,
    ) -> Result<HttpResponse, TransportError> {
        OUTBOUND_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send(&body[..]) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let mut text = String::new();
                resp.body_mut()
                    .as_reader()
                    .read_to_string(&mut text)
                    .map_err(|e| TransportError {
                        message: format!("reading response body: {e}"),
                        retryable: true,
                    })?;
                Ok(HttpResponse { status, body: text })
            }
            Err(e) => {
                let retryable = !matches!(e, ureq::Error::BadUri(_) | ureq::Error::Http(_));
                Err(TransportError {
                    message: e.to_string(),
                    retryable,
                })
            }
        }
    }
}

#[derive(Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            chat_model: "gpt-4o-2024-08-06".into(),
            embedding_model: "text-embedding-ada-002".into(),
            embedding_dimension: 1536,
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }
}

impl fmt::Debug for OpenAiConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("chat_model", &self.chat_model)
            .field("embedding_model", &self.embedding_model)
            .field("embedding_dimension", &self.embedding_dimension)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

#[derive(Clone)]
pub struct OpenAiGateway {
    config: OpenAiConfig,
    transport: Arc<dyn HttpTransport>,
    limiter: Option<TokenBucket>,
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    tools: Vec<&'a RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tool_choice: Option<Value>,
    temperature: f64,
}

#[derive(Serialize)]
struct WireEmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

impl OpenAiGateway {
    pub fn new(config: OpenAiConfig) -> Self {
        let transport = Arc::new(UreqTransport::new(config.timeout));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: OpenAiConfig, transport: Arc<dyn HttpTransport>) -> Self {
        Self {
            config,
            transport,
            limiter: None,
        }
    }

    pub fn with_rate_limit(mut self, limiter: TokenBucket) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// Serialized chat request body. Tool definitions are embedded byte for byte.
    pub fn chat_body(&self, request: &ChatRequest) -> Vec<u8> {
        let tool_choice = request.tool_choice.as_ref().map(|c| match c {
            ToolChoice::Auto => Value::from("auto"),
            ToolChoice::Required => Value::from("required"),
            ToolChoice::Function(name) => {
                serde_json::json!({"type": "function", "function": {"name": name}})
            }
        });
        let wire = WireChatRequest {
            model: &self.config.chat_model,
            messages: &request.messages,
            tools: request.tools.iter().map(|t| t.raw()).collect(),
            tool_choice,
            temperature: request.temperature,
        };
        serde_json::to_vec(&wire).expect("request serializes")
    }

    fn post(&self, path: &str, body: Vec<u8>) -> Result<String, GatewayError> {
        let url = self.endpoint(path);
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base * 2u32.pow(attempt - 1);
                warn!(%url, attempt, ?delay, error = %last_error, "retrying request");
                std::thread::sleep(delay);
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            debug!(%url, authorization = "Bearer <redacted>", body = %String::from_utf8_lossy(&body), "request");
            match self
                .transport
                .post_json(&url, self.config.api_key.as_deref(), body.clone())
            {
                Ok(resp) => {
                    debug!(%url, status = resp.status, body = %resp.body, "response");
                    match resp.status {
                        200..=299 => return Ok(resp.body),
                        401 | 403 => return Err(GatewayError::Authentication(resp.body)),
                        429 | 500..=599 => {
                            last_error = format!("status {}: {}", resp.status, resp.body);
                        }
                        status => {
                            return Err(GatewayError::Rejected {
                                status,
                                body: resp.body,
                            })
                        }
                    }
                }
                Err(e) if e.retryable => last_error = e.message,
                Err(e) => return Err(GatewayError::Transport(e.message)),
            }
        }
        Err(GatewayError::Transport(format!(
            "{last_error} (after {attempts} attempts)"
        )))
    }
}

fn parse_tool_calls(body: &str) -> Result<Vec<ToolCall>, GatewayError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
    let message = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message".into()))?;
    let Some(calls) = message.get("tool_calls").and_then(Value::as_array) else {
        return Ok(Vec::new());
    };
    calls
        .iter()
        .map(|call| {
            let function = call
                .get("function")
                .ok_or_else(|| GatewayError::InvalidResponse("tool call without function".into()))?;
            let name = function
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| GatewayError::InvalidResponse("tool call without name".into()))?;
            // Arguments arrive as a JSON-encoded string; anything else is kept as text.
            let arguments = match function.get("arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            Ok(ToolCall {
                tool_name: name.to_string(),
                arguments,
            })
        })
        .collect()
}

impl LlmGateway for OpenAiGateway {
    fn chat_with_tools(&self, request: &ChatRequest) -> Result<Vec<ToolCall>, GatewayError> {
        request.validate()?;
        let body = self.chat_body(request);
        let text = self.post("chat/completions", body)?;
        let calls = parse_tool_calls(&text)?;
        if let Some(ToolChoice::Function(name)) = &request.tool_choice {
            if calls.is_empty() {
                return Err(GatewayError::MissingToolCall(name.clone()));
            }
        }
        Ok(calls)
    }

    fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let body = serde_json::to_vec(&WireEmbeddingRequest {
            model: model_id,
            input: text,
        })
        .expect("request serializes");
        let resp = self.post("embeddings", body)?;
        let v: Value =
            serde_json::from_str(&resp).map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
        let values: Vec<f64> = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::InvalidResponse("missing data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| GatewayError::InvalidResponse("non-numeric embedding".into()))
            })
            .collect::<Result<_, _>>()?;
        if model_id == self.config.embedding_model && values.len() != self.config.embedding_dimension
        {
            return Err(GatewayError::Dimension {
                model: model_id.to_string(),
                expected: self.config.embedding_dimension,
                actual: values.len(),
            });
        }
        EmbeddingVector::new(values, model_id)
    }

    fn embedding_model(&self) -> &str {
        &self.config.embedding_model
    }

    fn embedding_dimension(&self) -> usize {
        self.config.embedding_dimension
    }
}
