//! Service configuration: a TOML file for settings, the environment for
//! secrets. Everything is validated before any gateway is built.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use prefmem_core::dataset::{fixture, fixture_labels, mock_script};
use prefmem_core::gateway::{LlmGateway, MockGateway, OpenAiConfig, OpenAiGateway, TokenBucket};
use prefmem_core::taxonomy::CategoryTaxonomy;

pub const API_KEY_ENV: &str = "PREFMEM_API_KEY";
pub const BEARER_TOKEN_ENV: &str = "PREFMEM_BEARER_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub mock: bool,
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub requests_per_second: f64,
    pub burst: u32,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        let live = OpenAiConfig::default();
        Self {
            mock: false,
            base_url: live.base_url,
            chat_model: live.chat_model,
            embedding_model: live.embedding_model,
            embedding_dimension: live.embedding_dimension,
            max_retries: live.max_retries,
            timeout_secs: live.timeout.as_secs(),
            requests_per_second: 5.0,
            burst: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub k: usize,
    pub score_floor: Option<f64>,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            k: prefmem_core::retrieval::DEFAULT_TOP_K,
            score_floor: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub storage_root: PathBuf,
    /// Bundled taxonomy when absent.
    pub taxonomy: Option<PathBuf>,
    pub idempotency_ttl_secs: u64,
    pub gateway: GatewaySettings,
    pub retrieval: RetrievalSettings,
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(skip)]
    pub bearer_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            storage_root: PathBuf::from("prefmem-data"),
            taxonomy: None,
            idempotency_ttl_secs: 24 * 60 * 60,
            gateway: GatewaySettings::default(),
            retrieval: RetrievalSettings::default(),
            api_key: None,
            bearer_token: None,
        }
    }
}

fn non_empty_env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })
    }

    /// Reads `path` (defaults when `None`) and the secrets from the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml_str(&text, p)?
            }
            None => Self::default(),
        };
        config.api_key = non_empty_env(API_KEY_ENV);
        config.bearer_token = non_empty_env(BEARER_TOKEN_ENV);
        Ok(config)
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.listen
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("listen address {:?}: {e}", self.listen)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen_addr()?;
        let g = &self.gateway;
        if !g.mock {
            if self.api_key.is_none() {
                return Err(ConfigError::Invalid(format!(
                    "live gateway needs {API_KEY_ENV}; set it or enable the mock"
                )));
            }
            if g.embedding_dimension == 0 {
                return Err(ConfigError::Invalid("embedding_dimension must be positive".into()));
            }
            if !(g.requests_per_second > 0.0) || g.burst == 0 {
                return Err(ConfigError::Invalid("rate limit must be positive".into()));
            }
            if !g.base_url.starts_with("http://") && !g.base_url.starts_with("https://") {
                return Err(ConfigError::Invalid(format!("base_url {:?} is not an http(s) URL", g.base_url)));
            }
        }
        if self.retrieval.k == 0 {
            return Err(ConfigError::Invalid("retrieval k must be at least 1".into()));
        }
        if let Some(f) = self.retrieval.score_floor {
            if !(-1.0..=1.0).contains(&f) {
                return Err(ConfigError::Invalid(format!("score_floor {f} outside [-1, 1]")));
            }
        }
        if self.idempotency_ttl_secs == 0 {
            return Err(ConfigError::Invalid("idempotency_ttl_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn load_taxonomy(&self) -> Result<CategoryTaxonomy, ConfigError> {
        match &self.taxonomy {
            Some(p) => CategoryTaxonomy::load(p).map_err(|e| ConfigError::Invalid(format!("taxonomy {}: {e}", p.display()))),
            None => Ok(CategoryTaxonomy::bundled()),
        }
    }

    /// The mock is scripted with the fixture, so fixture transcripts extract
    /// their labels; anything else goes through its keyword fallback.
    pub fn build_gateway(&self, taxonomy: &CategoryTaxonomy) -> Result<Arc<dyn LlmGateway>, ConfigError> {
        self.validate()?;
        let g = &self.gateway;
        if g.mock {
            let points = fixture(taxonomy);
            return Ok(Arc::new(MockGateway::new(mock_script(&points, &fixture_labels()))));
        }
        let live = OpenAiConfig {
            base_url: g.base_url.clone(),
            api_key: self.api_key.clone(),
            chat_model: g.chat_model.clone(),
            embedding_model: g.embedding_model.clone(),
            embedding_dimension: g.embedding_dimension,
            max_retries: g.max_retries,
            timeout: Duration::from_secs(g.timeout_secs),
            ..OpenAiConfig::default()
        };
        Ok(Arc::new(
            OpenAiGateway::new(live).with_rate_limit(TokenBucket::new(g.burst, g.requests_per_second)),
        ))
    }
}
