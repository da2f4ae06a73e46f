//! Pass / update / append decisions for incoming candidates.
//!
//! The model only sees stored preferences of the candidate's own detail
//! category. For a single-preference category that already holds a
//! value, the append tool is not offered at all.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::extraction::CandidatePreference;
use crate::gateway::{ChatMessage, ChatRequest, EmbeddingVector, GatewayError, LlmGateway, ToolChoice};
use crate::prefstore::{Preference, PreferenceId, PreferenceStore, StoreError, UserWriter};
use crate::retrieval::{embedding_text, EmbeddingMode};
use crate::taxonomy::{CategoryPath, CategoryTaxonomy, DetailKind, ToolDefinition};

pub const PASS_TOOL: &str = "pass";
pub const UPDATE_TOOL: &str = "update";
pub const APPEND_TOOL: &str = "append";
pub const EXISTING_ID_FIELD: &str = "existing_preference_id";

const MAINTENANCE_SYSTEM_PROMPT: &str = "You keep a user's stored preferences consistent. You \
receive one incoming preference and the preferences already stored in the same category. Call \
exactly one tool: pass if the incoming preference is already stored, update if it contradicts \
or replaces a stored one, append if it is a new additional preference.";

#[derive(Debug, Error)]
pub enum MaintenanceError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("path {0} is not in the taxonomy")]
    UnknownPath(CategoryPath),
    #[error("context preference {0} is not in the candidate's detail category")]
    ContextMismatch(PreferenceId),
    #[error("sub-category {0:?} is opted out for this user")]
    OptedOut(String),
    #[error("decision is stale: {0}")]
    Conflict(String),
}

impl MaintenanceError {
    pub fn is_conflict(&self) -> bool {
        matches!(
            self,
            MaintenanceError::Conflict(_) | MaintenanceError::Store(StoreError::Conflict(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaintenanceAction {
    Pass,
    Update,
    Append,
}

impl MaintenanceAction {
    pub const ALL: [MaintenanceAction; 3] = [
        MaintenanceAction::Pass,
        MaintenanceAction::Update,
        MaintenanceAction::Append,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaintenanceAction::Pass => PASS_TOOL,
            MaintenanceAction::Update => UPDATE_TOOL,
            MaintenanceAction::Append => APPEND_TOOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceDecision {
    pub action: MaintenanceAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing_id: Option<PreferenceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// Decided without asking the model.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
    /// Set when the model's answer was unusable and the fallback applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_violation: Option<String>,
}

impl MaintenanceDecision {
    fn new(action: MaintenanceAction, existing_id: Option<PreferenceId>) -> Self {
        Self {
            action,
            existing_id,
            rationale: None,
            forced: false,
            protocol_violation: None,
        }
    }
}

/// The tool-call prompt body for one decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenancePrompt {
    pub detail_category: String,
    pub detail_type: DetailKind,
    pub incoming: IncomingPreference,
    pub existing: Vec<ExistingPreference>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncomingPreference {
    pub value: String,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistingPreference {
    pub id: String,
    pub value: String,
    pub sentence: String,
}

pub fn append_enabled(kind: DetailKind, existing_len: usize) -> bool {
    kind == DetailKind::Multiple || existing_len == 0
}

#[derive(Debug, Clone)]
pub struct MaintenanceToolset {
    pub tools: Vec<ToolDefinition>,
}

impl MaintenanceToolset {
    pub fn build(kind: DetailKind, existing: &[Preference]) -> Self {
        let ids: Vec<String> = existing.iter().map(|p| p.id.to_string()).collect();
        let reference = |desc: &str| {
            json!({
                "type": "object",
                "properties": {
                    EXISTING_ID_FIELD: {
                        "type": "string",
                        "enum": ids,
                        "description": "Id of the stored preference concerned."
                    },
                    "reason": {"type": "string", "description": desc}
                },
                "required": [EXISTING_ID_FIELD]
            })
        };
        let mut tools = Vec::with_capacity(3);
        if !existing.is_empty() {
            tools.push(ToolDefinition::function(
                PASS_TOOL,
                "The incoming preference is already stored. Nothing changes.",
                reference("Why the stored preference already covers the incoming one."),
            ));
            tools.push(ToolDefinition::function(
                UPDATE_TOOL,
                "The incoming preference replaces the referenced stored preference.",
                reference("Why the stored preference is outdated."),
            ));
        }
        if append_enabled(kind, existing.len()) {
            tools.push(ToolDefinition::function(
                APPEND_TOOL,
                "Store the incoming preference in addition to the existing ones.",
                json!({"type": "object", "properties": {}}),
            ));
        }
        Self { tools }
    }

    pub fn offers(&self, name: &str) -> bool {
        self.tools.iter().any(|t| t.name() == name)
    }
}

/// Crisp decision rule used by the mock backend and as ground truth in
/// tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleChoice {
    Pass(usize),
    Update(usize),
    Append,
}

fn fold(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn equal_values(a: &str, b: &str) -> bool {
    fold(a) == fold(b)
}

const NEGATIONS: [&str; 6] = ["not ", "no longer ", "never ", "don't like ", "dislikes ", "no "];

/// `"not Italian"` → `Some("italian")`.
pub fn strip_negation(value: &str) -> Option<String> {
    let v = fold(value);
    NEGATIONS
        .iter()
        .find_map(|n| v.strip_prefix(n))
        .map(|rest| rest.trim().to_string())
        .filter(|rest| !rest.is_empty())
}

fn negates(a: &str, b: &str) -> bool {
    strip_negation(a).is_some_and(|x| x == fold(b)) || strip_negation(b).is_some_and(|x| x == fold(a))
}

pub fn oracle_choice(incoming: &str, existing: &[&str], append_enabled: bool) -> OracleChoice {
    if let Some(i) = existing.iter().position(|e| equal_values(incoming, e)) {
        return OracleChoice::Pass(i);
    }
    if let Some(i) = existing.iter().position(|e| negates(incoming, e)) {
        return OracleChoice::Update(i);
    }
    if append_enabled || existing.is_empty() {
        OracleChoice::Append
    } else {
        OracleChoice::Update(0)
    }
}

/// The three kinds of follow-up utterance in maintenance evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtteranceKind {
    Equal,
    Negate,
    Different,
}

impl UtteranceKind {
    pub const ALL: [UtteranceKind; 3] = [UtteranceKind::Equal, UtteranceKind::Negate, UtteranceKind::Different];

    pub fn as_str(self) -> &'static str {
        match self {
            UtteranceKind::Equal => "equal",
            UtteranceKind::Negate => "negate",
            UtteranceKind::Different => "different",
        }
    }
}

/// The action a correct maintainer takes for each utterance kind.
pub fn expected_action(kind: UtteranceKind, detail: DetailKind) -> MaintenanceAction {
    match (kind, detail) {
        (UtteranceKind::Equal, _) => MaintenanceAction::Pass,
        (UtteranceKind::Negate, _) => MaintenanceAction::Update,
        (UtteranceKind::Different, DetailKind::Multiple) => MaintenanceAction::Append,
        (UtteranceKind::Different, DetailKind::Single) => MaintenanceAction::Update,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaintenanceConfig {
    /// Append without asking the model when the category is empty.
    pub forced_append_on_empty: bool,
    pub conflict_retries: usize,
    pub embedding_mode: EmbeddingMode,
}

impl Default for MaintenanceConfig {
    fn default() -> Self {
        Self {
            forced_append_on_empty: true,
            conflict_retries: 3,
            embedding_mode: EmbeddingMode::Enriched,
        }
    }
}

pub fn build_request(
    candidate: &CandidatePreference,
    existing: &[Preference],
    kind: DetailKind,
    display_name: &str,
) -> ChatRequest {
    let prompt = MaintenancePrompt {
        detail_category: display_name.to_string(),
        detail_type: kind,
        incoming: IncomingPreference {
            value: candidate.value.clone(),
            sentence: candidate.source_sentence.clone(),
        },
        existing: existing
            .iter()
            .map(|p| ExistingPreference {
                id: p.id.to_string(),
                value: p.value.clone(),
                sentence: p.source_sentence.clone(),
            })
            .collect(),
    };
    let body = serde_json::to_string_pretty(&prompt).expect("prompt serializes");
    ChatRequest::deterministic(
        vec![ChatMessage::system(MAINTENANCE_SYSTEM_PROMPT), ChatMessage::user(body)],
        MaintenanceToolset::build(kind, existing).tools,
    )
    .with_tool_choice(ToolChoice::Required)
}

fn fallback(kind: DetailKind, existing: &[Preference], reason: String) -> MaintenanceDecision {
    let mut d = if append_enabled(kind, existing.len()) {
        MaintenanceDecision::new(MaintenanceAction::Append, None)
    } else {
        MaintenanceDecision::new(MaintenanceAction::Update, Some(existing[0].id))
    };
    tracing::warn!(reason = %reason, "maintenance protocol violation");
    d.protocol_violation = Some(reason);
    d
}

fn referenced_id(arguments: &str) -> Result<(PreferenceId, Option<String>), String> {
    let v: Value = serde_json::from_str(arguments).map_err(|e| format!("unparseable arguments: {e}"))?;
    let id = match v.get(EXISTING_ID_FIELD) {
        Some(Value::String(s)) => s.parse().map_err(|_| format!("bad id {s:?}"))?,
        Some(Value::Number(n)) => PreferenceId(n.as_u64().ok_or_else(|| format!("bad id {n}"))?),
        _ => return Err(format!("missing {EXISTING_ID_FIELD}")),
    };
    let reason = v.get("reason").and_then(Value::as_str).map(String::from);
    Ok((id, reason))
}

/// Chooses pass, update or append for `candidate` given the stored
/// preferences of its detail category.
pub fn decide(
    gateway: &dyn LlmGateway,
    taxonomy: &CategoryTaxonomy,
    candidate: &CandidatePreference,
    existing: &[Preference],
    config: &MaintenanceConfig,
) -> Result<MaintenanceDecision, MaintenanceError> {
    let detail = taxonomy
        .detail(&candidate.path)
        .ok_or_else(|| MaintenanceError::UnknownPath(candidate.path.clone()))?;
    if let Some(p) = existing.iter().find(|p| p.path != candidate.path) {
        return Err(MaintenanceError::ContextMismatch(p.id));
    }
    if existing.is_empty() && config.forced_append_on_empty {
        let mut d = MaintenanceDecision::new(MaintenanceAction::Append, None);
        d.forced = true;
        return Ok(d);
    }

    let request = build_request(candidate, existing, detail.kind, &detail.display_name);
    let calls = gateway.chat_with_tools(&request)?;
    let offered = |name: &str| request.tools.iter().any(|t| t.name() == name);
    let Some(call) = calls
        .iter()
        .find(|c| [PASS_TOOL, UPDATE_TOOL, APPEND_TOOL].contains(&c.tool_name.as_str()))
    else {
        let names: Vec<&str> = calls.iter().map(|c| c.tool_name.as_str()).collect();
        return Ok(fallback(detail.kind, existing, format!("no maintenance tool called: {names:?}")));
    };
    if !offered(&call.tool_name) {
        return Ok(fallback(detail.kind, existing, format!("disabled tool {:?} selected", call.tool_name)));
    }
    let action = match call.tool_name.as_str() {
        PASS_TOOL => MaintenanceAction::Pass,
        UPDATE_TOOL => MaintenanceAction::Update,
        _ => return Ok(MaintenanceDecision::new(MaintenanceAction::Append, None)),
    };
    match referenced_id(&call.arguments) {
        Ok((id, reason)) if existing.iter().any(|p| p.id == id) => {
            let mut d = MaintenanceDecision::new(action, Some(id));
            d.rationale = reason;
            Ok(d)
        }
        Ok((id, _)) => Ok(fallback(detail.kind, existing, format!("unknown preference id {id}"))),
        Err(e) => Ok(fallback(detail.kind, existing, e)),
    }
}

/// What one applied decision changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub path: CategoryPath,
    pub value: String,
    pub decision: MaintenanceDecision,
    pub inserted: Vec<PreferenceId>,
    pub deleted: Vec<PreferenceId>,
}

pub fn candidate_embedding(
    gateway: &dyn LlmGateway,
    taxonomy: &CategoryTaxonomy,
    candidate: &CandidatePreference,
    mode: EmbeddingMode,
) -> Result<EmbeddingVector, MaintenanceError> {
    let detail = taxonomy
        .detail(&candidate.path)
        .ok_or_else(|| MaintenanceError::UnknownPath(candidate.path.clone()))?;
    let text = embedding_text(mode, &detail.display_name, &candidate.value, &candidate.source_sentence);
    Ok(gateway.embed_default(&text)?)
}

/// Applies a decision under the user's writer. `embedding` is required
/// for update and append.
pub fn apply(
    decision: &MaintenanceDecision,
    candidate: &CandidatePreference,
    writer: &mut UserWriter<'_>,
    embedding: Option<EmbeddingVector>,
) -> Result<MutationRecord, MaintenanceError> {
    let mut record = MutationRecord {
        path: candidate.path.clone(),
        value: candidate.value.clone(),
        decision: decision.clone(),
        inserted: Vec::new(),
        deleted: Vec::new(),
    };
    let existing_in_category = |w: &UserWriter<'_>, id: PreferenceId| -> Result<(), MaintenanceError> {
        match w.get(id) {
            Some(p) if p.path == candidate.path => Ok(()),
            Some(p) => Err(MaintenanceError::ContextMismatch(p.id)),
            None => Err(MaintenanceError::Conflict(format!("preference {id} vanished"))),
        }
    };
    let need_embedding = || {
        embedding
            .clone()
            .ok_or_else(|| MaintenanceError::Conflict("no embedding supplied".into()))
    };
    match decision.action {
        MaintenanceAction::Pass | MaintenanceAction::Update => {
            let id = decision
                .existing_id
                .ok_or_else(|| MaintenanceError::Conflict("decision lacks a preference id".into()))?;
            existing_in_category(writer, id)?;
            if decision.action == MaintenanceAction::Update {
                let p = writer.replace(id, candidate, need_embedding()?)?;
                record.deleted.push(id);
                record.inserted.push(p.id);
            }
        }
        MaintenanceAction::Append => {
            let kind = writer
                .taxonomy()
                .detail(&candidate.path)
                .map(|d| d.kind)
                .ok_or_else(|| MaintenanceError::UnknownPath(candidate.path.clone()))?;
            let held = writer.by_detail_category(&candidate.path).len();
            if !append_enabled(kind, held) {
                return Err(MaintenanceError::Conflict(format!(
                    "single-preference category {} is no longer empty",
                    candidate.path
                )));
            }
            let p = writer.insert(candidate, need_embedding()?)?;
            record.inserted.push(p.id);
        }
    }
    Ok(record)
}

#[derive(Debug)]
pub struct IngestEntry {
    pub candidate: CandidatePreference,
    pub result: Result<MutationRecord, MaintenanceError>,
}

fn ingest_one(
    gateway: &dyn LlmGateway,
    writer: &mut UserWriter<'_>,
    candidate: &CandidatePreference,
    config: &MaintenanceConfig,
) -> Result<MutationRecord, MaintenanceError> {
    if writer.is_opted_out(&candidate.path.sub) {
        return Err(MaintenanceError::OptedOut(candidate.path.sub.clone()));
    }
    let taxonomy = writer.taxonomy().clone();
    let mut attempt = 0;
    loop {
        let existing = writer.by_detail_category(&candidate.path);
        let decision = decide(gateway, &taxonomy, candidate, &existing, config)?;
        let embedding = match decision.action {
            MaintenanceAction::Pass => None,
            _ => Some(candidate_embedding(gateway, &taxonomy, candidate, config.embedding_mode)?),
        };
        match apply(&decision, candidate, writer, embedding) {
            Err(e) if e.is_conflict() && attempt < config.conflict_retries => attempt += 1,
            other => return other,
        }
    }
}

/// Decides and applies each candidate in order; each sees the store as
/// left by its predecessors. Errors are collected per candidate.
pub fn ingest(
    gateway: &dyn LlmGateway,
    store: &PreferenceStore,
    user_id: &str,
    candidates: &[CandidatePreference],
    config: &MaintenanceConfig,
) -> Result<Vec<IngestEntry>, StoreError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut writer = store.writer(user_id)?;
    Ok(candidates
        .iter()
        .map(|c| IngestEntry {
            candidate: c.clone(),
            result: ingest_one(gateway, &mut writer, c, config),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{MockGateway, ToolCall};
    use proptest::prelude::*;

    const GENRES: (&str, &str, &str) = ("entertainment_and_media", "music", "favorite_genres");
    const PRICE: (&str, &str, &str) = ("points_of_interest", "restaurant", "desired_price_range");

    fn cand(p: (&str, &str, &str), value: &str) -> CandidatePreference {
        CandidatePreference {
            path: CategoryPath::new(p.0, p.1, p.2),
            value: value.into(),
            source_sentence: format!("I'd say {value}."),
            conversation_id: "c".into(),
            sentence_fallback: false,
        }
    }

    fn store() -> PreferenceStore {
        PreferenceStore::in_memory(Arc::new(CategoryTaxonomy::bundled()), 256)
    }

    fn values(s: &PreferenceStore, p: (&str, &str, &str)) -> Vec<String> {
        s.by_detail_category("u", &CategoryPath::new(p.0, p.1, p.2))
            .into_iter()
            .map(|p| p.value)
            .collect()
    }

    fn run(s: &PreferenceStore, gw: &MockGateway, cs: &[CandidatePreference]) -> Vec<MutationRecord> {
        ingest(gw, s, "u", cs, &MaintenanceConfig::default())
            .unwrap()
            .into_iter()
            .map(|e| e.result.unwrap())
            .collect()
    }

    #[test]
    fn oracle_rule() {
        assert_eq!(oracle_choice("Jazz", &["rock", "JAZZ"], true), OracleChoice::Pass(1));
        assert_eq!(oracle_choice("not Jazz", &["rock", "Jazz"], true), OracleChoice::Update(1));
        assert_eq!(oracle_choice("Jazz", &["no longer jazz"], true), OracleChoice::Update(0));
        assert_eq!(oracle_choice("Blues", &["Jazz"], true), OracleChoice::Append);
        assert_eq!(oracle_choice("Blues", &["Jazz"], false), OracleChoice::Update(0));
        assert_eq!(oracle_choice("Blues", &[], false), OracleChoice::Append);
        assert_eq!(strip_negation("No (cheapest preferred)").as_deref(), Some("(cheapest preferred)"));
        assert_eq!(strip_negation("Jazz"), None);
    }

    #[test]
    fn table_of_expected_actions() {
        use MaintenanceAction::*;
        let got: Vec<_> = UtteranceKind::ALL
            .iter()
            .flat_map(|k| [expected_action(*k, DetailKind::Multiple), expected_action(*k, DetailKind::Single)])
            .collect();
        assert_eq!(got, [Pass, Pass, Update, Update, Append, Update]);
    }

    #[test]
    fn toolset_hides_append_for_filled_single() {
        let s = store();
        let gw = MockGateway::default();
        run(&s, &gw, &[cand(PRICE, "cheap"), cand(GENRES, "Jazz")]);
        let price = s.by_detail_category("u", &cand(PRICE, "x").path);
        let genres = s.by_detail_category("u", &cand(GENRES, "x").path);
        let names = |t: MaintenanceToolset| t.tools.iter().map(|d| d.name().to_string()).collect::<Vec<_>>();
        assert_eq!(names(MaintenanceToolset::build(DetailKind::Single, &price)), ["pass", "update"]);
        assert_eq!(names(MaintenanceToolset::build(DetailKind::Multiple, &genres)), ["pass", "update", "append"]);
        assert_eq!(names(MaintenanceToolset::build(DetailKind::Single, &[])), ["append"]);
        let append = MaintenanceToolset::build(DetailKind::Multiple, &[]).tools.remove(0);
        assert_eq!(append.parameters()["properties"], json!({}));
    }

    #[test]
    fn empty_context_appends_without_a_call() {
        let gw = MockGateway::default();
        let t = CategoryTaxonomy::bundled();
        let d = decide(&gw, &t, &cand(GENRES, "Jazz"), &[], &MaintenanceConfig::default()).unwrap();
        assert_eq!((d.action, d.forced), (MaintenanceAction::Append, true));
        assert_eq!(gw.chat_calls(), 0);

        let cfg = MaintenanceConfig { forced_append_on_empty: false, ..Default::default() };
        let d = decide(&gw, &t, &cand(GENRES, "Jazz"), &[], &cfg).unwrap();
        assert_eq!((d.action, d.forced), (MaintenanceAction::Append, false));
        assert_eq!(gw.chat_calls(), 1);
    }

    #[test]
    fn identical_candidates_collapse() {
        let s = store();
        let gw = MockGateway::default();
        let recs = run(&s, &gw, &[cand(GENRES, "Jazz"), cand(GENRES, "jazz")]);
        assert_eq!(recs[0].decision.action, MaintenanceAction::Append);
        assert_eq!(recs[1].decision.action, MaintenanceAction::Pass);
        assert!(recs[1].inserted.is_empty() && recs[1].deleted.is_empty());
        assert_eq!(values(&s, GENRES), ["Jazz"]);
    }

    #[test]
    fn single_category_takes_the_new_value() {
        let s = store();
        let gw = MockGateway::default();
        run(&s, &gw, &[cand(PRICE, "cheap")]);
        let recs = run(&s, &gw, &[cand(PRICE, "expensive")]);
        assert_eq!(recs[0].decision.action, MaintenanceAction::Update);
        assert_eq!(values(&s, PRICE), ["expensive"]);
    }

    #[test]
    fn update_in_multiple_category_removes_only_the_referenced_one() {
        let s = store();
        let gw = MockGateway::default();
        run(&s, &gw, &[cand(GENRES, "Jazz"), cand(GENRES, "Rock")]);
        assert_eq!(values(&s, GENRES), ["Jazz", "Rock"]);
        let recs = run(&s, &gw, &[cand(GENRES, "not Jazz")]);
        assert_eq!(recs[0].decision.action, MaintenanceAction::Update);
        assert_eq!(values(&s, GENRES), ["Rock", "not Jazz"]);
        let recs = run(&s, &gw, &[cand(GENRES, "Blues")]);
        assert_eq!(recs[0].decision.action, MaintenanceAction::Append);
        assert_eq!(s.snapshot("u").len(), 3);
    }

    #[test]
    fn empty_batch_is_empty() {
        assert!(ingest(&MockGateway::default(), &store(), "u", &[], &MaintenanceConfig::default())
            .unwrap()
            .is_empty());
    }

    struct Fixed(Vec<ToolCall>);

    impl LlmGateway for Fixed {
        fn chat_with_tools(&self, _: &ChatRequest) -> Result<Vec<ToolCall>, GatewayError> {
            Ok(self.0.clone())
        }
        fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError> {
            MockGateway::default().embed(text, model_id)
        }
        fn embedding_model(&self) -> &str {
            crate::gateway::DEFAULT_MOCK_EMBEDDING_MODEL
        }
        fn embedding_dimension(&self) -> usize {
            crate::gateway::DEFAULT_MOCK_DIMENSION
        }
    }

    #[test]
    fn disabled_tool_triggers_fallback() {
        let s = store();
        run(&s, &MockGateway::default(), &[cand(PRICE, "cheap")]);
        let existing = s.by_detail_category("u", &cand(PRICE, "x").path);
        let t = CategoryTaxonomy::bundled();
        let rogue = Fixed(vec![ToolCall { tool_name: APPEND_TOOL.into(), arguments: "{}".into() }]);
        let d = decide(&rogue, &t, &cand(PRICE, "mid"), &existing, &MaintenanceConfig::default()).unwrap();
        assert_eq!(d.action, MaintenanceAction::Update);
        assert_eq!(d.existing_id, Some(existing[0].id));
        assert!(d.protocol_violation.is_some());

        let bogus = Fixed(vec![ToolCall {
            tool_name: PASS_TOOL.into(),
            arguments: r#"{"existing_preference_id":"999"}"#.into(),
        }]);
        let d = decide(&bogus, &t, &cand(PRICE, "mid"), &existing, &MaintenanceConfig::default()).unwrap();
        assert!(d.protocol_violation.unwrap().contains("999"));

        let genres = Fixed(vec![]);
        run(&s, &MockGateway::default(), &[cand(GENRES, "Jazz")]);
        let existing = s.by_detail_category("u", &cand(GENRES, "x").path);
        let d = decide(&genres, &t, &cand(GENRES, "Rock"), &existing, &MaintenanceConfig::default()).unwrap();
        assert_eq!(d.action, MaintenanceAction::Append);
        assert!(d.protocol_violation.is_some());
    }

    #[test]
    fn numeric_ids_and_rationale_are_accepted() {
        let s = store();
        run(&s, &MockGateway::default(), &[cand(GENRES, "Jazz")]);
        let existing = s.by_detail_category("u", &cand(GENRES, "x").path);
        let id = existing[0].id.0;
        let gw = Fixed(vec![ToolCall {
            tool_name: UPDATE_TOOL.into(),
            arguments: format!(r#"{{"existing_preference_id":{id},"reason":"changed taste"}}"#),
        }]);
        let t = CategoryTaxonomy::bundled();
        let d = decide(&gw, &t, &cand(GENRES, "Rock"), &existing, &MaintenanceConfig::default()).unwrap();
        assert_eq!(d.existing_id, Some(PreferenceId(id)));
        assert_eq!(d.rationale.as_deref(), Some("changed taste"));
    }

    #[test]
    fn stale_decisions_conflict() {
        let s = store();
        let gw = MockGateway::default();
        run(&s, &gw, &[cand(GENRES, "Jazz")]);
        let existing = s.by_detail_category("u", &cand(GENRES, "x").path);
        let d = MaintenanceDecision::new(MaintenanceAction::Update, Some(existing[0].id));
        s.delete("u", existing[0].id).unwrap();
        let mut w = s.writer("u").unwrap();
        let e = gw.embed_default("rock").unwrap();
        let err = apply(&d, &cand(GENRES, "Rock"), &mut w, Some(e)).unwrap_err();
        assert!(err.is_conflict());
    }

    #[test]
    fn opted_out_candidates_are_refused() {
        let s = store();
        s.opt_out("u", &["music".into()]).unwrap();
        let out = ingest(&MockGateway::default(), &s, "u", &[cand(GENRES, "Jazz")], &MaintenanceConfig::default())
            .unwrap();
        assert!(matches!(out[0].result, Err(MaintenanceError::OptedOut(_))));
        assert!(s.snapshot("u").is_empty());
    }

    fn single_leaves() -> Vec<CategoryPath> {
        CategoryTaxonomy::bundled()
            .details()
            .filter(|(_, d)| d.kind == DetailKind::Single)
            .map(|(p, _)| p)
            .take(4)
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn single_categories_never_exceed_one(seq in prop::collection::vec((0usize..4, 0usize..5, any::<bool>()), 1..12)) {
            let leaves = single_leaves();
            let s = store();
            let gw = MockGateway::default();
            let cands: Vec<CandidatePreference> = seq
                .iter()
                .map(|&(leaf, v, neg)| {
                    let value = if neg { format!("not v{v}") } else { format!("v{v}") };
                    let p = &leaves[leaf];
                    cand((&p.main, &p.sub, &p.detail), &value)
                })
                .collect();
            for e in ingest(&gw, &s, "u", &cands, &MaintenanceConfig::default()).unwrap() {
                prop_assert!(e.result.is_ok());
            }
            for p in &leaves {
                prop_assert!(s.by_detail_category("u", p).len() <= 1);
            }
        }

        #[test]
        fn repeating_a_candidate_never_grows_by_two(values in prop::collection::vec("[a-c]{1,2}", 0..6), repeat in "[a-c]{1,2}") {
            let s = store();
            let gw = MockGateway::default();
            let mut cs: Vec<CandidatePreference> = values.iter().map(|v| cand(GENRES, v)).collect();
            run(&s, &gw, &cs);
            let before = values_len(&s);
            cs = vec![cand(GENRES, &repeat), cand(GENRES, &repeat)];
            run(&s, &gw, &cs);
            prop_assert!(values_len(&s) <= before + 1);
        }
    }

    fn values_len(s: &PreferenceStore) -> usize {
        values(s, GENRES).len()
    }
}
