//! Chat-completion (with tool calling) and embedding backends.
//!
//! Two implementations share the [`LlmGateway`] trait: [`OpenAiGateway`]
//! speaks the OpenAI-compatible HTTP protocol, [`MockGateway`] answers
//! deterministically from a rule table and a hashed bag-of-words embedder.

mod mock;
mod openai;
mod ratelimit;

pub use mock::{content_tokens, hashed_embedding, tokenize, MockGateway, MockScript, ScriptedExtraction, SchemaCompliance};
pub use openai::{
    outbound_request_count, HttpResponse, HttpTransport, OpenAiConfig, OpenAiGateway,
    TransportError, UreqTransport,
};
pub use ratelimit::TokenBucket;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::ToolDefinition;

pub const DEFAULT_MOCK_EMBEDDING_MODEL: &str = "mock-hashed-bow";
pub const DEFAULT_MOCK_DIMENSION: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Authentication(String),
    #[error("endpoint rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("response has no tool call although `{0}` was forced")]
    MissingToolCall(String),
    #[error("malformed response: {0}")]
    InvalidResponse(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding for {model} has {actual} dimensions, expected {expected}")]
    Dimension {
        model: String,
        expected: usize,
        actual: usize,
    },
    #[error("request has no tools")]
    NoTools,
    #[error("gateway configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolChoice {
    Auto,
    /// The model must call one of the tools.
    Required,
    /// The model must call this tool.
    Function(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<ToolDefinition>,
    pub tool_choice: Option<ToolChoice>,
    pub temperature: f64,
    /// Caller-side correlation key (conversation id). Used for logging and
    /// by the mock backend; never sent over the wire.
    pub correlation_id: Option<String>,
}

impl ChatRequest {
    /// A request at temperature 0, as used for extraction and maintenance.
    pub fn deterministic(messages: Vec<ChatMessage>, tools: Vec<ToolDefinition>) -> Self {
        Self {
            messages,
            tools,
            tool_choice: None,
            temperature: 0.0,
            correlation_id: None,
        }
    }

    pub fn with_tool_choice(mut self, choice: ToolChoice) -> Self {
        self.tool_choice = Some(choice);
        self
    }

    pub fn with_correlation_id(mut self, id: impl Into<String>) -> Self {
        self.correlation_id = Some(id.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub(crate) fn validate(&self) -> Result<(), GatewayError> {
        if self.tools.is_empty() {
            return Err(GatewayError::NoTools);
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A tool call as returned by the model. `arguments` is kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, GatewayError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::InvalidResponse(
                "embedding contains non-finite values".into(),
            ));
        }
        Ok(Self {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            model_id: self.model_id.clone(),
        }
    }
}

pub trait LlmGateway: Send + Sync {
    fn chat_with_tools(&self, request: &ChatRequest) -> Result<Vec<ToolCall>, GatewayError>;

    fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError>;

    /// Model used when callers do not name one.
    fn embedding_model(&self) -> &str;

    fn embedding_dimension(&self) -> usize;

    fn embed_default(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        self.embed(text, self.embedding_model())
    }
}
