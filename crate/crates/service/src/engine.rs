//! The memory lifecycle over one store and one gateway, shared by the
//! HTTP handlers and the CLI.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use prefmem_core::extraction::{extract, CandidatePreference, ConversationTranscript, ExtractionError};
use prefmem_core::gateway::LlmGateway;
use prefmem_core::maintenance::{ingest, MaintenanceConfig, MaintenanceDecision, MaintenanceError};
use prefmem_core::prefstore::{Preference, PreferenceId, PreferenceStore, StoreError};
use prefmem_core::retrieval::{retrieve, RetrievalError, RetrievalQuery, TopK};
use prefmem_core::taxonomy::CategoryPath;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{0}")]
    BadRequest(String),
    #[error("gateway failure: {0}")]
    Gateway(String),
    #[error("conflicting concurrent write: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("store failure: {0}")]
    Store(String),
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownSubCategory(_) | StoreError::InvalidPath(_) => EngineError::BadRequest(e.to_string()),
            StoreError::Conflict(_) => EngineError::Conflict(e.to_string()),
            other => EngineError::Store(other.to_string()),
        }
    }
}

impl From<RetrievalError> for EngineError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Gateway(g) => EngineError::Gateway(g.to_string()),
            RetrievalError::EmptyUtterance | RetrievalError::ZeroK => EngineError::BadRequest(e.to_string()),
            other => EngineError::Store(other.to_string()),
        }
    }
}

/// A stored preference without its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceView {
    pub id: PreferenceId,
    pub path: CategoryPath,
    pub value: String,
    pub source_sentence: String,
    /// RFC 3339.
    pub created_at: String,
    pub updated_at: String,
    pub origin_conversation_id: String,
}

impl From<&Preference> for PreferenceView {
    fn from(p: &Preference) -> Self {
        Self {
            id: p.id,
            path: p.path.clone(),
            value: p.value.clone(),
            source_sentence: p.source_sentence.clone(),
            created_at: p.created_at.to_rfc3339(),
            updated_at: p.updated_at.to_rfc3339(),
            origin_conversation_id: p.origin_conversation_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPreference {
    #[serde(flatten)]
    pub preference: PreferenceView,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub path: CategoryPath,
    pub value: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<MaintenanceDecision>,
    pub inserted: Vec<PreferenceId>,
    pub deleted: Vec<PreferenceId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationSummary {
    pub conversation_id: String,
    /// Whether the model's output matched the schema.
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
    pub candidates: Vec<CandidatePreference>,
    /// Candidates dropped because the user opted out of their sub-category.
    pub rejected_opted_out: usize,
    pub results: Vec<CandidateResult>,
}

impl ConversationSummary {
    pub fn mutations(&self) -> usize {
        self.results.iter().filter(|r| !r.inserted.is_empty() || !r.deleted.is_empty()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptOutSummary {
    pub purged: usize,
    pub opted_out: Vec<String>,
}

pub struct Engine {
    pub store: PreferenceStore,
    pub gateway: Arc<dyn LlmGateway>,
    pub maintenance: MaintenanceConfig,
    pub default_k: usize,
    pub score_floor: Option<f64>,
}

impl Engine {
    pub fn new(store: PreferenceStore, gateway: Arc<dyn LlmGateway>) -> Self {
        Self {
            store,
            gateway,
            maintenance: MaintenanceConfig::default(),
            default_k: prefmem_core::retrieval::DEFAULT_TOP_K,
            score_floor: None,
        }
    }

    /// Extraction against the user's own taxonomy, then maintenance.
    pub fn ingest_conversation(&self, user_id: &str, transcript: &ConversationTranscript) -> Result<ConversationSummary, EngineError> {
        let taxonomy = self.store.user_taxonomy(user_id);
        let schema = taxonomy.compile_schema();
        let mut outcome = extract(self.gateway.as_ref(), transcript, &schema).map_err(|e| match e {
            ExtractionError::InvalidTranscript(m) => EngineError::BadRequest(m),
            ExtractionError::Gateway(g) => EngineError::Gateway(g.to_string()),
        })?;
        let rejected = outcome.retain_within(&taxonomy);
        let entries = ingest(
            self.gateway.as_ref(),
            &self.store,
            user_id,
            &outcome.candidates,
            &self.maintenance,
        )?;
        let mut results = Vec::with_capacity(entries.len());
        let mut fatal = None;
        for entry in entries {
            let (decision, inserted, deleted, error) = match entry.result {
                Ok(m) => (Some(m.decision), m.inserted, m.deleted, None),
                Err(e) => {
                    if fatal.is_none() {
                        fatal = match &e {
                            MaintenanceError::Gateway(g) => Some(EngineError::Gateway(g.to_string())),
                            e if e.is_conflict() => Some(EngineError::Conflict(e.to_string())),
                            _ => None,
                        };
                    }
                    (None, Vec::new(), Vec::new(), Some(e.to_string()))
                }
            };
            results.push(CandidateResult {
                path: entry.candidate.path,
                value: entry.candidate.value,
                decision,
                inserted,
                deleted,
                error,
            });
        }
        if let Some(e) = fatal {
            return Err(e);
        }
        Ok(ConversationSummary {
            conversation_id: outcome.conversation_id,
            valid: outcome.structurally_valid,
            invalid_reason: outcome.invalid_reason,
            candidates: outcome.candidates,
            rejected_opted_out: rejected,
            results,
        })
    }

    pub fn retrieve(&self, user_id: &str, utterance: &str, k: Option<TopK>) -> Result<Vec<ScoredPreference>, EngineError> {
        let query = RetrievalQuery {
            user_id: user_id.to_string(),
            utterance: utterance.to_string(),
            k: k.unwrap_or(TopK::Fixed(self.default_k)),
        };
        let snapshot = self.store.snapshot(user_id);
        Ok(retrieve(self.gateway.as_ref(), &query, &snapshot, self.score_floor)?
            .iter()
            .map(|r| ScoredPreference {
                preference: PreferenceView::from(&r.preference),
                score: r.score,
            })
            .collect())
    }

    pub fn preferences(&self, user_id: &str) -> Vec<PreferenceView> {
        self.store.snapshot(user_id).preferences.iter().map(PreferenceView::from).collect()
    }

    pub fn delete(&self, user_id: &str, id: PreferenceId) -> Result<(), EngineError> {
        if self.store.delete(user_id, id)? {
            Ok(())
        } else {
            Err(EngineError::NotFound(format!("preference {id}")))
        }
    }

    pub fn opt_out(&self, user_id: &str, sub_categories: &[String]) -> Result<OptOutSummary, EngineError> {
        let purged = self.store.opt_out(user_id, sub_categories)?;
        Ok(OptOutSummary {
            purged,
            opted_out: self.store.opted_out(user_id),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefmem_core::dataset::{fixture, fixture_labels, mock_script};
    use prefmem_core::extraction::Turn;
    use prefmem_core::gateway::MockGateway;
    use prefmem_core::maintenance::MaintenanceAction;
    use prefmem_core::taxonomy::CategoryTaxonomy;

    fn engine() -> (Engine, Vec<prefmem_core::dataset::DataPoint>) {
        let t = Arc::new(CategoryTaxonomy::bundled());
        let points = fixture(&t);
        let gw = Arc::new(MockGateway::new(mock_script(&points, &fixture_labels())));
        let store = PreferenceStore::in_memory(t, 256);
        (Engine::new(store, gw), points)
    }

    #[test]
    fn fixture_conversation_appends_once() {
        let (e, points) = engine();
        let s = e.ingest_conversation("u", &points[0].transcript()).unwrap();
        assert_eq!(s.results.len(), 1);
        assert_eq!(s.results[0].decision.as_ref().unwrap().action, MaintenanceAction::Append);
        assert_eq!(s.mutations(), 1);
        let again = e.ingest_conversation("u", &points[0].transcript()).unwrap();
        assert_eq!(again.results[0].decision.as_ref().unwrap().action, MaintenanceAction::Pass);
        assert_eq!(e.preferences("u").len(), 1);
    }

    #[test]
    fn opted_out_categories_are_not_extracted() {
        let (e, points) = engine();
        let cuisine = points.iter().find(|p| p.ground_truth.sub == "restaurant").unwrap();
        e.opt_out("u", &["restaurant".into()]).unwrap();
        let s = e.ingest_conversation("u", &cuisine.transcript()).unwrap();
        assert!(s.candidates.iter().all(|c| c.path.sub != "restaurant"));
        assert!(e.preferences("u").is_empty());
    }

    #[test]
    fn invalid_transcript_is_a_bad_request() {
        let (e, _) = engine();
        let t = ConversationTranscript::new("c", vec![Turn::user("  ")]);
        assert!(matches!(e.ingest_conversation("u", &t), Err(EngineError::BadRequest(_))));
    }

    #[test]
    fn delete_twice() {
        let (e, points) = engine();
        e.ingest_conversation("u", &points[0].transcript()).unwrap();
        let id = e.preferences("u")[0].id;
        e.delete("u", id).unwrap();
        assert!(matches!(e.delete("u", id), Err(EngineError::NotFound(_))));
    }

    #[test]
    fn retrieval_errors_map_to_bad_requests() {
        let (e, _) = engine();
        assert!(matches!(e.retrieve("u", " ", None), Err(EngineError::BadRequest(_))));
        assert!(matches!(e.retrieve("u", "x", Some(TopK::Fixed(0))), Err(EngineError::BadRequest(_))));
        assert!(e.retrieve("nobody", "music", None).unwrap().is_empty());
    }
}
