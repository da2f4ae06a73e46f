pub mod config;
pub mod engine;
pub mod http;

use std::sync::Arc;
use std::time::Duration;

use prefmem_core::prefstore::PreferenceStore;

use config::{ConfigError, ServiceConfig};
use engine::Engine;

/// Store, gateway and defaults from a validated configuration.
pub fn build_engine(config: &ServiceConfig) -> Result<Engine, ConfigError> {
    let taxonomy = Arc::new(config.load_taxonomy()?);
    let gateway = config.build_gateway(&taxonomy)?;
    let store = PreferenceStore::open(&config.storage_root, taxonomy, gateway.embedding_dimension())
        .map_err(|e| ConfigError::Invalid(format!("opening store at {}: {e}", config.storage_root.display())))?;
    let mut engine = Engine::new(store, gateway);
    engine.default_k = config.retrieval.k;
    engine.score_floor = config.retrieval.score_floor;
    Ok(engine)
}

pub fn build_state(config: &ServiceConfig) -> Result<Arc<http::AppState>, ConfigError> {
    Ok(Arc::new(http::AppState::new(
        build_engine(config)?,
        config.bearer_token.clone(),
        Duration::from_secs(config.idempotency_ttl_secs),
    )))
}
