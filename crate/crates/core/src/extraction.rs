//! Category-bound preference extraction from conversation transcripts.
//!
//! The model fills the compiled parameter schema through a forced tool
//! call. The returned document is validated against the schema; anything
//! naming a parameter the schema does not have makes the whole output
//! structurally invalid and yields no candidates, so an opted-out
//! category can never leak into the store.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, GatewayError, LlmGateway, ToolChoice};
use crate::taxonomy::{
    CategoryPath, CategoryTaxonomy, CompiledSchema, DetailKind, FIELD_PREFERENCE, FIELD_SENTENCE,
    SENTINEL,
};

/// Prefix of user lines in the rendered transcript sent to the model.
pub const USER_LINE_PREFIX: &str = "user: ";
pub const ASSISTANT_LINE_PREFIX: &str = "assistant: ";

const EXTRACTION_SYSTEM_PROMPT: &str = "You analyse a conversation between a user and an in-car \
voice assistant. Call the function exactly once. Fill a category only when the user revealed a \
lasting personal preference that belongs to it, and copy the user's sentence that revealed it. \
One-off wishes, assistant statements and topics without a matching category must not be \
recorded. If nothing qualifies, call the function with an empty object.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTranscript {
    pub conversation_id: String,
    pub turns: Vec<Turn>,
}

impl ConversationTranscript {
    pub fn new(conversation_id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Self {
            conversation_id: conversation_id.into(),
            turns,
        }
    }

    /// A one-turn transcript, as used for single utterances.
    pub fn single_utterance(conversation_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(conversation_id, vec![Turn::user(text)])
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        if self.turns.is_empty() {
            return Err(ExtractionError::InvalidTranscript(format!(
                "conversation {:?} has no turns",
                self.conversation_id
            )));
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(ExtractionError::InvalidTranscript(format!(
                "conversation {:?} turn {i} is empty",
                self.conversation_id
            )));
        }
        Ok(())
    }

    pub fn last_user_turn(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.speaker == Speaker::User)
            .map(|t| t.text.as_str())
    }

    /// One line per turn, `user: ...` / `assistant: ...`.
    pub fn render(&self) -> String {
        self.turns
            .iter()
            .map(|t| {
                let prefix = match t.speaker {
                    Speaker::User => USER_LINE_PREFIX,
                    Speaker::Assistant => ASSISTANT_LINE_PREFIX,
                };
                format!("{prefix}{}", normalize_text(&t.text))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// An extracted preference before maintenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePreference {
    pub path: CategoryPath,
    pub value: String,
    pub source_sentence: String,
    pub conversation_id: String,
    /// Set when the model gave no revealing sentence and the last user
    /// turn was used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sentence_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub conversation_id: String,
    pub candidates: Vec<CandidatePreference>,
    pub structurally_valid: bool,
    pub discarded_sentinel_count: usize,
    /// Tool-call arguments exactly as returned.
    pub raw_document: String,
    /// SP leaves for which the model returned more than one record; only
    /// the first was kept.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub single_overflow: Vec<CategoryPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
}

impl ExtractionOutcome {
    fn invalid(conversation_id: &str, raw: String, reason: String) -> Self {
        Self {
            conversation_id: conversation_id.to_string(),
            candidates: Vec::new(),
            structurally_valid: false,
            discarded_sentinel_count: 0,
            raw_document: raw,
            single_overflow: Vec::new(),
            invalid_reason: Some(reason),
        }
    }

    /// Drops candidates whose path is not in `taxonomy`, returning how many
    /// were removed.
    pub fn retain_within(&mut self, taxonomy: &CategoryTaxonomy) -> usize {
        let before = self.candidates.len();
        self.candidates.retain(|c| taxonomy.validate_path(&c.path));
        before - self.candidates.len()
    }
}

/// Trims and collapses internal whitespace. Case is preserved.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn build_request(transcript: &ConversationTranscript, schema: &CompiledSchema) -> ChatRequest {
    ChatRequest::deterministic(
        vec![
            ChatMessage::system(EXTRACTION_SYSTEM_PROMPT),
            ChatMessage::user(format!("Conversation:\n{}", transcript.render())),
        ],
        vec![schema.tool_definition()],
    )
    .with_tool_choice(ToolChoice::Function(schema.function_name.clone()))
    .with_correlation_id(&transcript.conversation_id)
}

/// Runs the extraction tool call on a transcript.
pub fn extract(
    gateway: &dyn LlmGateway,
    transcript: &ConversationTranscript,
    schema: &CompiledSchema,
) -> Result<ExtractionOutcome, ExtractionError> {
    transcript.validate()?;
    let request = build_request(transcript, schema);
    let calls = gateway.chat_with_tools(&request)?;
    let ours: Vec<&str> = calls
        .iter()
        .filter(|c| c.tool_name == schema.function_name)
        .map(|c| c.arguments.as_str())
        .collect();
    match ours.as_slice() {
        [] => {
            let raw = calls
                .iter()
                .map(|c| format!("{}: {}", c.tool_name, c.arguments))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(ExtractionOutcome::invalid(
                &transcript.conversation_id,
                raw,
                "no call to the extraction function".into(),
            ))
        }
        [single] => Ok(parse_arguments(single, schema, transcript)),
        many => {
            // Several calls: valid only if every one is; candidates concatenated.
            let mut merged = parse_arguments(many[0], schema, transcript);
            for doc in &many[1..] {
                let next = parse_arguments(doc, schema, transcript);
                merged.raw_document.push('\n');
                merged.raw_document.push_str(&next.raw_document);
                if !next.structurally_valid {
                    merged.structurally_valid = false;
                    merged.invalid_reason = next.invalid_reason;
                }
                merged.candidates.extend(next.candidates);
                merged.discarded_sentinel_count += next.discarded_sentinel_count;
                merged.single_overflow.extend(next.single_overflow);
            }
            if !merged.structurally_valid {
                merged.candidates.clear();
            }
            Ok(merged)
        }
    }
}

fn sentinel_size(v: &Value) -> usize {
    match v {
        Value::Null => 0,
        Value::Array(a) => a.len(),
        _ => 1,
    }
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<Option<&'a Map<String, Value>>, String> {
    match v {
        Value::Null => Ok(None),
        Value::Object(m) => Ok(Some(m)),
        _ => Err(format!("{at}: expected an object")),
    }
}

struct Record {
    value: Option<String>,
    sentence: Option<String>,
}

fn parse_record(v: &Value, at: &str) -> Result<Option<Record>, String> {
    let Some(obj) = as_object(v, at)? else {
        return Ok(None);
    };
    let field = |name: &str| -> Result<Option<String>, String> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => {
                let s = normalize_text(s);
                Ok((!s.is_empty()).then_some(s))
            }
            Some(_) => Err(format!("{at}.{name}: expected a string")),
        }
    };
    let value = field(FIELD_PREFERENCE)?;
    let sentence = field(FIELD_SENTENCE)?;
    if let Some(k) = obj
        .keys()
        .find(|k| k.as_str() != FIELD_PREFERENCE && k.as_str() != FIELD_SENTENCE)
    {
        return Err(format!("{at}: unknown field {k:?}"));
    }
    Ok(Some(Record { value, sentence }))
}

/// Validates a tool-call arguments document against `schema` and turns
/// it into candidates. Pure.
pub fn parse_arguments(
    document: &str,
    schema: &CompiledSchema,
    transcript: &ConversationTranscript,
) -> ExtractionOutcome {
    let conv = &transcript.conversation_id;
    let root: Value = match serde_json::from_str(document) {
        Ok(v) => v,
        Err(e) => return ExtractionOutcome::invalid(conv, document.into(), format!("unparseable: {e}")),
    };
    match walk(&root, schema, transcript) {
        Ok((candidates, discarded, single_overflow)) => ExtractionOutcome {
            conversation_id: conv.clone(),
            candidates,
            structurally_valid: true,
            discarded_sentinel_count: discarded,
            raw_document: document.to_string(),
            single_overflow,
            invalid_reason: None,
        },
        Err(reason) => ExtractionOutcome::invalid(conv, document.into(), reason),
    }
}

type Walked = (Vec<CandidatePreference>, usize, Vec<CategoryPath>);

fn walk(
    root: &Value,
    schema: &CompiledSchema,
    transcript: &ConversationTranscript,
) -> Result<Walked, String> {
    let root = match root {
        Value::Object(m) => m,
        _ => return Err("arguments must be an object".into()),
    };
    let mut candidates = Vec::new();
    let mut discarded = 0;
    let mut overflow = Vec::new();
    let fallback_sentence = transcript.last_user_turn().map(normalize_text);

    for (main_name, main_val) in root {
        let main = schema
            .main(main_name)
            .ok_or_else(|| format!("unknown parameter {main_name:?}"))?;
        let Some(main_obj) = as_object(main_val, main_name)? else {
            continue;
        };
        for (sub_name, sub_val) in main_obj {
            if sub_name == SENTINEL {
                discarded += sentinel_size(sub_val);
                continue;
            }
            let sub = main
                .subs
                .iter()
                .find(|s| &s.name == sub_name)
                .ok_or_else(|| format!("unknown parameter {main_name}.{sub_name}"))?;
            let Some(sub_obj) = as_object(sub_val, sub_name)? else {
                continue;
            };
            for (leaf_name, leaf_val) in sub_obj {
                if leaf_name == SENTINEL {
                    discarded += sentinel_size(leaf_val);
                    continue;
                }
                let at = format!("{main_name}.{sub_name}.{leaf_name}");
                let leaf = sub
                    .leaves
                    .iter()
                    .find(|l| &l.name == leaf_name)
                    .ok_or_else(|| format!("unknown parameter {at}"))?;
                let items: Vec<&Value> = match leaf_val {
                    Value::Null => Vec::new(),
                    Value::Array(a) => a.iter().collect(),
                    Value::Object(_) => vec![leaf_val],
                    _ => return Err(format!("{at}: expected a list of records")),
                };
                let path = CategoryPath::new(main_name, sub_name, leaf_name);
                let mut kept = 0;
                for item in items {
                    let Some(record) = parse_record(item, &at)? else {
                        continue;
                    };
                    let Some(value) = record.value else {
                        continue;
                    };
                    if leaf.kind == DetailKind::Single && kept == 1 {
                        if !overflow.contains(&path) {
                            overflow.push(path.clone());
                        }
                        continue;
                    }
                    let (source_sentence, sentence_fallback) = match record.sentence {
                        Some(s) => (s, false),
                        None => (fallback_sentence.clone().unwrap_or_else(|| value.clone()), true),
                    };
                    candidates.push(CandidatePreference {
                        path: path.clone(),
                        value,
                        source_sentence,
                        conversation_id: transcript.conversation_id.clone(),
                        sentence_fallback,
                    });
                    kept += 1;
                }
            }
        }
    }
    Ok((candidates, discarded, overflow))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountBucket {
    NoExtraction,
    OnePreference,
    MultiPreference,
}

impl CountBucket {
    pub const ALL: [CountBucket; 3] = [
        CountBucket::NoExtraction,
        CountBucket::OnePreference,
        CountBucket::MultiPreference,
    ];

    pub fn of(count: usize) -> Self {
        match count {
            0 => CountBucket::NoExtraction,
            1 => CountBucket::OnePreference,
            _ => CountBucket::MultiPreference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentMode {
    /// Ground-truth category present in the schema; it should be extracted.
    InSchema,
    /// Ground-truth sub-category removed; it must not be extracted.
    OutOfSchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeClass {
    pub bucket: CountBucket,
    pub correct: bool,
    /// More candidates than the mode expects (1 in-schema, 0 out-of-schema).
    pub over_extraction: bool,
    /// Out-of-schema only: correct, but something else was extracted.
    pub spillover: bool,
}

pub fn classify_outcome(
    outcome: &ExtractionOutcome,
    ground_truth: Option<&CategoryPath>,
    mode: ExperimentMode,
) -> OutcomeClass {
    let n = outcome.candidates.len();
    let hit = ground_truth.is_some_and(|gt| outcome.candidates.iter().any(|c| &c.path == gt));
    match mode {
        ExperimentMode::InSchema => OutcomeClass {
            bucket: CountBucket::of(n),
            correct: if ground_truth.is_some() { hit } else { n == 0 },
            over_extraction: n > usize::from(ground_truth.is_some()),
            spillover: false,
        },
        ExperimentMode::OutOfSchema => OutcomeClass {
            bucket: CountBucket::of(n),
            correct: !hit,
            over_extraction: n > 0,
            spillover: !hit && n > 0,
        },
    }
}

/// Splits extra candidates into (spurious, duplicate).
///
/// The first candidate at the ground-truth path is the expected one. A
/// candidate repeating an earlier (path, value) pair, or a further one at
/// the ground-truth path, is a duplicate; anything else is spurious.
pub fn over_extraction_breakdown(
    outcome: &ExtractionOutcome,
    ground_truth: Option<&CategoryPath>,
) -> (usize, usize) {
    let mut seen = HashSet::new();
    let mut matched = false;
    let (mut spurious, mut duplicate) = (0, 0);
    for c in &outcome.candidates {
        let key = (c.path.clone(), c.value.to_lowercase());
        let at_truth = ground_truth == Some(&c.path);
        if !seen.insert(key) || (at_truth && matched) {
            duplicate += 1;
        } else if at_truth {
            matched = true;
        } else {
            spurious += 1;
        }
    }
    (spurious, duplicate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockGateway, MockScript, ScriptedExtraction, SchemaCompliance};

    fn cuisine() -> CategoryPath {
        CategoryPath::new("points_of_interest", "restaurant", "favourite_cuisine")
    }

    fn transcript() -> ConversationTranscript {
        ConversationTranscript::new(
            "conv-1",
            vec![
                Turn::user("Find me somewhere to eat on the way."),
                Turn::assistant("Sure, any cuisine you like?"),
                Turn::user("Italian it is."),
            ],
        )
    }

    fn italian_script() -> MockScript {
        let mut s = MockScript::new();
        s.insert(
            "conv-1",
            vec![ScriptedExtraction {
                path: cuisine(),
                value: "Italian".into(),
                sentence: Some("Italian it is.".into()),
            }],
        );
        s
    }

    #[test]
    fn extracts_scripted_preference() {
        let gw = MockGateway::new(italian_script());
        let schema = CategoryTaxonomy::bundled().compile_schema();
        let out = extract(&gw, &transcript(), &schema).unwrap();
        assert!(out.structurally_valid);
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].path, cuisine());
        assert_eq!(out.candidates[0].value, "Italian");
        assert_eq!(out.candidates[0].source_sentence, "Italian it is.");
    }

    #[test]
    fn opted_out_category_yields_nothing() {
        let t = CategoryTaxonomy::bundled().opt_out(&["restaurant"]).unwrap();
        let schema = t.compile_schema();
        let out = extract(&MockGateway::new(italian_script()), &transcript(), &schema).unwrap();
        assert!(out.structurally_valid);
        assert!(out.candidates.is_empty());
        assert_eq!(out.discarded_sentinel_count, 1);

        let rogue = MockGateway::new(italian_script()).with_compliance(SchemaCompliance::Ignore);
        let out = extract(&rogue, &transcript(), &schema).unwrap();
        assert!(!out.structurally_valid);
        assert!(out.candidates.is_empty());
    }

    #[test]
    fn unknown_parameter_is_invalid() {
        let schema = CategoryTaxonomy::bundled().compile_schema();
        let doc = r#"{"entertainment_and_media":{"music":{"favourite_movie":[{"user_preference":"Alien"}]}}}"#;
        let out = parse_arguments(doc, &schema, &transcript());
        assert!(!out.structurally_valid);
        assert!(out.candidates.is_empty());
        assert_eq!(out.raw_document, doc);
    }

    #[test]
    fn malformed_documents_are_invalid() {
        let schema = CategoryTaxonomy::bundled().compile_schema();
        for doc in [
            "",
            "{",
            "[]",
            r#"{"points_of_interest": 3}"#,
            r#"{"points_of_interest":{"restaurant":{"favourite_cuisine":"Italian"}}}"#,
            r#"{"points_of_interest":{"restaurant":{"favourite_cuisine":[{"user_preference":1}]}}}"#,
            r#"{"points_of_interest":{"restaurant":{"favourite_cuisine":[{"colour":"red"}]}}}"#,
            r#"{"points_of_interest":{"music":{}}}"#,
        ] {
            let out = parse_arguments(doc, &schema, &transcript());
            assert!(!out.structurally_valid, "{doc}");
            assert!(out.candidates.is_empty());
        }
        let out = parse_arguments("{}", &schema, &transcript());
        assert!(out.structurally_valid);
        assert!(out.candidates.is_empty());
    }

    #[test]
    fn sentinels_are_counted_then_discarded() {
        let schema = CategoryTaxonomy::bundled().compile_schema();
        let doc = r#"{"points_of_interest":{"no_or_other_preference":[{"user_preference":"movies"}],
            "restaurant":{"no_or_other_preference":[{"user_preference":"a"},{"user_preference":"b"}],
            "favourite_cuisine":[{"user_preference":"  Italian   food ","user_sentence_preference_revealed":"I like Italian"}]}}}"#;
        let out = parse_arguments(doc, &schema, &transcript());
        assert!(out.structurally_valid);
        assert_eq!(out.discarded_sentinel_count, 3);
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].value, "Italian food");
    }

    #[test]
    fn single_leaf_keeps_first_record() {
        let schema = CategoryTaxonomy::bundled().compile_schema();
        let doc = r#"{"points_of_interest":{"restaurant":{"desired_price_range":[
            {"user_preference":"cheap","user_sentence_preference_revealed":"cheap please"},
            {"user_preference":"expensive","user_sentence_preference_revealed":"or fancy"}]}}}"#;
        let out = parse_arguments(doc, &schema, &transcript());
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].value, "cheap");
        assert_eq!(out.single_overflow.len(), 1);
    }

    #[test]
    fn missing_sentence_falls_back_to_last_user_turn() {
        let schema = CategoryTaxonomy::bundled().compile_schema();
        let doc = r#"{"points_of_interest":{"restaurant":{"favourite_cuisine":{"user_preference":"AC"}}}}"#;
        let out = parse_arguments(doc, &schema, &transcript());
        let c = &out.candidates[0];
        assert!(c.sentence_fallback);
        assert_eq!(c.source_sentence, "Italian it is.");
        // values are case-significant
        assert_eq!(c.value, "AC");
    }

    #[test]
    fn candidates_follow_document_order() {
        let schema = CategoryTaxonomy::bundled().compile_schema();
        let doc = r#"{"entertainment_and_media":{"music":{"favorite_genres":[{"user_preference":"Jazz"}]}},
            "points_of_interest":{"restaurant":{"favourite_cuisine":[{"user_preference":"Indian"}]}}}"#;
        let out = parse_arguments(doc, &schema, &transcript());
        let values: Vec<&str> = out.candidates.iter().map(|c| c.value.as_str()).collect();
        assert_eq!(values, ["Jazz", "Indian"]);
    }

    #[test]
    fn transcript_validation() {
        let gw = MockGateway::default();
        let schema = CategoryTaxonomy::bundled().compile_schema();
        let empty = ConversationTranscript::new("x", vec![]);
        assert!(matches!(extract(&gw, &empty, &schema), Err(ExtractionError::InvalidTranscript(_))));
        let blank = ConversationTranscript::new("x", vec![Turn::user("  ")]);
        assert!(matches!(extract(&gw, &blank, &schema), Err(ExtractionError::InvalidTranscript(_))));
        assert_eq!(gw.chat_calls(), 0);
    }

    fn outcome_with(paths: &[(&CategoryPath, &str)]) -> ExtractionOutcome {
        ExtractionOutcome {
            conversation_id: "c".into(),
            candidates: paths
                .iter()
                .map(|(p, v)| CandidatePreference {
                    path: (*p).clone(),
                    value: v.to_string(),
                    source_sentence: "s".into(),
                    conversation_id: "c".into(),
                    sentence_fallback: false,
                })
                .collect(),
            structurally_valid: true,
            discarded_sentinel_count: 0,
            raw_document: String::new(),
            single_overflow: vec![],
            invalid_reason: None,
        }
    }

    #[test]
    fn classification_buckets() {
        let gt = cuisine();
        let other = CategoryPath::new("points_of_interest", "restaurant", "dietary_preferences");

        let one = outcome_with(&[(&gt, "Italian")]);
        let c = classify_outcome(&one, Some(&gt), ExperimentMode::InSchema);
        assert_eq!((c.bucket, c.correct, c.over_extraction), (CountBucket::OnePreference, true, false));

        let none = outcome_with(&[]);
        let c = classify_outcome(&none, Some(&gt), ExperimentMode::OutOfSchema);
        assert_eq!((c.bucket, c.correct, c.spillover), (CountBucket::NoExtraction, true, false));
        let c = classify_outcome(&none, Some(&gt), ExperimentMode::InSchema);
        assert!(!c.correct);

        let two = outcome_with(&[(&other, "Vegan"), (&gt, "Italian")]);
        let c = classify_outcome(&two, Some(&gt), ExperimentMode::InSchema);
        assert_eq!((c.bucket, c.correct, c.over_extraction), (CountBucket::MultiPreference, true, true));
        assert_eq!(over_extraction_breakdown(&two, Some(&gt)), (1, 0));

        let sibling = outcome_with(&[(&other, "Vegan")]);
        let c = classify_outcome(&sibling, Some(&gt), ExperimentMode::OutOfSchema);
        assert_eq!((c.correct, c.spillover, c.over_extraction), (true, true, true));

        let dup = outcome_with(&[(&gt, "Italian"), (&gt, "italian"), (&gt, "Indian")]);
        assert_eq!(over_extraction_breakdown(&dup, Some(&gt)), (0, 2));
    }
}
