//! Deterministic offline backend.
//!
//! Extraction requests are answered from a [`MockScript`] keyed by the
//! request's correlation id; unknown conversations fall back to matching
//! distinctive attribute phrases in user lines. Maintenance requests are
//! answered with the oracle decision rule. Embeddings are L2-normalized
//! bags of FNV-hashed lowercase tokens.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::{json, Map, Value};

use super::{
    ChatRequest, EmbeddingVector, GatewayError, LlmGateway, Role, ToolCall,
    DEFAULT_MOCK_DIMENSION, DEFAULT_MOCK_EMBEDDING_MODEL,
};
use crate::extraction::USER_LINE_PREFIX;
use crate::maintenance::{self, MaintenancePrompt, OracleChoice, APPEND_TOOL, PASS_TOOL, UPDATE_TOOL};
use crate::taxonomy::{
    CategoryPath, DetailKind, EXTRACTION_FUNCTION_NAME, FIELD_PREFERENCE, FIELD_SENTENCE, SENTINEL,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedExtraction {
    pub path: CategoryPath,
    pub value: String,
    pub sentence: Option<String>,
}

/// Canned extraction results per conversation id.
#[derive(Debug, Clone, Default)]
pub struct MockScript {
    entries: HashMap<String, Vec<ScriptedExtraction>>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, conversation_id: impl Into<String>, extractions: Vec<ScriptedExtraction>) {
        self.entries.insert(conversation_id.into(), extractions);
    }

    pub fn get(&self, conversation_id: &str) -> Option<&[ScriptedExtraction]> {
        self.entries.get(conversation_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whether the mock respects the tool schema it was given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaCompliance {
    /// Scripted preferences whose leaf is absent land in the enclosing
    /// main category's sentinel, or are dropped.
    Honor,
    /// Scripted preferences are emitted at their path regardless of the schema.
    Ignore,
}

pub struct MockGateway {
    script: MockScript,
    compliance: SchemaCompliance,
    dimension: usize,
    model_id: String,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
}

impl Default for MockGateway {
    fn default() -> Self {
        Self::new(MockScript::new())
    }
}

impl MockGateway {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            compliance: SchemaCompliance::Honor,
            dimension: DEFAULT_MOCK_DIMENSION,
            model_id: DEFAULT_MOCK_EMBEDDING_MODEL.to_string(),
            chat_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_compliance(mut self, compliance: SchemaCompliance) -> Self {
        self.compliance = compliance;
        self
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        assert!(dimension > 0);
        self.dimension = dimension;
        self
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn answer_extraction(&self, request: &ChatRequest, parameters: &Value) -> ToolCall {
        let leaves = schema_leaves(parameters);
        let scripted: Vec<ScriptedExtraction> = match request
            .correlation_id
            .as_deref()
            .and_then(|id| self.script.get(id))
        {
            Some(entries) => entries.to_vec(),
            None => keyword_matches(request, &leaves),
        };

        let present: HashSet<&CategoryPath> = leaves.iter().map(|(p, _, _)| p).collect();
        let mains: HashSet<&str> = leaves.iter().map(|(p, _, _)| p.main.as_str()).collect();
        let mut args = Map::new();
        for e in scripted {
            let record = json!({
                FIELD_SENTENCE: e.sentence,
                FIELD_PREFERENCE: e.value,
            });
            if present.contains(&e.path) || self.compliance == SchemaCompliance::Ignore {
                push_record(&mut args, &[&e.path.main, &e.path.sub, &e.path.detail], record);
            } else if mains.contains(e.path.main.as_str()) {
                push_record(&mut args, &[&e.path.main, SENTINEL], record);
            }
        }
        ToolCall {
            tool_name: EXTRACTION_FUNCTION_NAME.to_string(),
            arguments: Value::Object(args).to_string(),
        }
    }

    fn answer_maintenance(&self, request: &ChatRequest) -> Vec<ToolCall> {
        let offered: HashSet<&str> = request.tools.iter().map(|t| t.name()).collect();
        let Some(prompt) = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .and_then(|m| serde_json::from_str::<MaintenancePrompt>(&m.content).ok())
        else {
            return Vec::new();
        };
        let existing: Vec<&str> = prompt.existing.iter().map(|e| e.value.as_str()).collect();
        let choice = maintenance::oracle_choice(
            &prompt.incoming.value,
            &existing,
            offered.contains(APPEND_TOOL),
        );
        let call = |name: &str, idx: usize| ToolCall {
            tool_name: name.to_string(),
            arguments: json!({ "existing_preference_id": prompt.existing[idx].id }).to_string(),
        };
        vec![match choice {
            OracleChoice::Pass(i) => call(PASS_TOOL, i),
            OracleChoice::Update(i) => call(UPDATE_TOOL, i),
            OracleChoice::Append => ToolCall {
                tool_name: APPEND_TOOL.to_string(),
                arguments: "{}".to_string(),
            },
        }]
    }
}

fn push_record(args: &mut Map<String, Value>, keys: &[&str], record: Value) {
    let (last, parents) = keys.split_last().expect("non-empty key path");
    let mut node = args;
    for k in parents {
        node = node
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("object node");
    }
    let slot = node
        .entry(last.to_string())
        .or_insert_with(|| Value::Array(Vec::new()));
    slot.as_array_mut().expect("array slot").push(record);
}

/// Leaves of an extraction parameter schema: (path, kind, examples).
fn schema_leaves(parameters: &Value) -> Vec<(CategoryPath, DetailKind, Vec<String>)> {
    let mut out = Vec::new();
    let props = |v: &Value| v.get("properties").and_then(Value::as_object).cloned();
    for (main, mv) in props(parameters).unwrap_or_default() {
        for (sub, sv) in props(&mv).unwrap_or_default() {
            if sub == SENTINEL {
                continue;
            }
            for (detail, dv) in props(&sv).unwrap_or_default() {
                if detail == SENTINEL {
                    continue;
                }
                let kind = if dv.get("maxItems").is_some() {
                    DetailKind::Single
                } else {
                    DetailKind::Multiple
                };
                let examples = dv
                    .get("examples")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_str).map(String::from).collect())
                    .unwrap_or_default();
                out.push((CategoryPath::new(&main, &sub, &detail), kind, examples));
            }
        }
    }
    out
}

fn match_key(attribute: &str) -> Vec<String> {
    let head = attribute.split(" (").next().unwrap_or(attribute);
    tokenize(head)
}

fn contains_phrase(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Attribute phrases that identify exactly one leaf, matched in user lines.
fn keyword_matches(
    request: &ChatRequest,
    leaves: &[(CategoryPath, DetailKind, Vec<String>)],
) -> Vec<ScriptedExtraction> {
    let mut owners: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
    for (i, (_, _, examples)) in leaves.iter().enumerate() {
        for a in examples {
            let key = match_key(a);
            let ambiguous = key.len() == 1 && (key[0].len() < 3 || key[0] == "yes");
            if !key.is_empty() && !ambiguous {
                let entry = owners.entry(key).or_default();
                if !entry.contains(&i) {
                    entry.push(i);
                }
            }
        }
    }

    let mut found = Vec::new();
    let mut seen = HashSet::new();
    let user_lines = request
        .messages
        .iter()
        .filter(|m| m.role == Role::User)
        .flat_map(|m| m.content.lines())
        .filter_map(|l| l.strip_prefix(USER_LINE_PREFIX));
    for line in user_lines {
        let tokens = tokenize(line);
        for (i, (path, _, examples)) in leaves.iter().enumerate() {
            for a in examples {
                let key = match_key(a);
                let unique = owners.get(&key).is_some_and(|o| o.len() == 1 && o[0] == i);
                if unique && contains_phrase(&tokens, &key) && seen.insert((i, a.clone())) {
                    found.push(ScriptedExtraction {
                        path: path.clone(),
                        value: a.clone(),
                        sentence: Some(line.trim().to_string()),
                    });
                }
            }
        }
    }
    found
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "always", "am", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "could", "do", "does", "for", "from", "get", "go", "had", "has", "have", "he", "her", "his", "how", "i", "if",
    "in", "into", "is", "it", "its", "just", "let", "me", "my", "near", "no", "not", "of", "on", "or", "our",
    "please", "s", "she", "should", "so", "some", "that", "the", "their", "them", "there", "these", "they", "this",
    "to", "up", "us", "was", "way", "we", "were", "what", "when", "where", "which", "who", "will", "with",
    "would", "you", "your",
];

/// Tokens without function words; all tokens if nothing else is left.
pub fn content_tokens(text: &str) -> Vec<String> {
    let all = tokenize(text);
    let content: Vec<String> = all.iter().filter(|t| !STOPWORDS.contains(&t.as_str())).cloned().collect();
    if content.is_empty() {
        all
    } else {
        content
    }
}

/// Bag of hashed content tokens, L2-normalized. `None` when the text has
/// no tokens.
pub fn hashed_embedding(text: &str, dimension: usize) -> Option<Vec<f64>> {
    let mut counts = vec![0.0f64; dimension];
    let mut any = false;
    for token in content_tokens(text) {
        counts[(fnv1a(token.as_bytes()) % dimension as u64) as usize] += 1.0;
        any = true;
    }
    if !any {
        return None;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    Some(counts.into_iter().map(|c| c / norm).collect())
}

impl LlmGateway for MockGateway {
    fn chat_with_tools(&self, request: &ChatRequest) -> Result<Vec<ToolCall>, GatewayError> {
        request.validate()?;
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(def) = request
            .tools
            .iter()
            .find(|t| t.name() == EXTRACTION_FUNCTION_NAME)
        {
            return Ok(vec![self.answer_extraction(request, &def.parameters())]);
        }
        if request
            .tools
            .iter()
            .any(|t| [PASS_TOOL, UPDATE_TOOL, APPEND_TOOL].contains(&t.name()))
        {
            return Ok(self.answer_maintenance(request));
        }
        Ok(Vec::new())
    }

    fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let values = hashed_embedding(text, self.dimension).ok_or(GatewayError::EmptyText)?;
        EmbeddingVector::new(values, model_id)
    }

    fn embedding_model(&self) -> &str {
        &self.model_id
    }

    fn embedding_dimension(&self) -> usize {
        self.dimension
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;
    use crate::retrieval::cosine;
    use crate::taxonomy::CategoryTaxonomy;
    use proptest::prelude::*;

    fn extraction_request(conv: Option<&str>, text: &str, taxonomy: &CategoryTaxonomy) -> ChatRequest {
        let mut r = ChatRequest::deterministic(
            vec![ChatMessage::user(text)],
            vec![taxonomy.compile_schema().tool_definition()],
        );
        r.correlation_id = conv.map(String::from);
        r
    }

    fn cuisine() -> CategoryPath {
        CategoryPath::new("points_of_interest", "restaurant", "favourite_cuisine")
    }

    #[test]
    fn scripted_conversation() {
        let mut script = MockScript::new();
        script.insert(
            "c1",
            vec![ScriptedExtraction {
                path: cuisine(),
                value: "Italian".into(),
                sentence: Some("Italian it is.".into()),
            }],
        );
        let gw = MockGateway::new(script);
        let t = CategoryTaxonomy::bundled();
        let calls = gw.chat_with_tools(&extraction_request(Some("c1"), "user: x", &t)).unwrap();
        let v: Value = serde_json::from_str(&calls[0].arguments).unwrap();
        assert_eq!(
            v["points_of_interest"]["restaurant"]["favourite_cuisine"][0][FIELD_PREFERENCE],
            "Italian"
        );

        // opted out: lands in the main category's sentinel
        let o = t.opt_out(&["restaurant"]).unwrap();
        let calls = gw.chat_with_tools(&extraction_request(Some("c1"), "user: x", &o)).unwrap();
        let v: Value = serde_json::from_str(&calls[0].arguments).unwrap();
        assert!(v["points_of_interest"].get("restaurant").is_none());
        assert_eq!(v["points_of_interest"][SENTINEL][0][FIELD_PREFERENCE], "Italian");

        let rogue = MockGateway::new(gw.script.clone()).with_compliance(SchemaCompliance::Ignore);
        let calls = rogue.chat_with_tools(&extraction_request(Some("c1"), "user: x", &o)).unwrap();
        assert!(calls[0].arguments.contains("favourite_cuisine"));
    }

    #[test]
    fn nothing_to_extract_gives_empty_object() {
        let gw = MockGateway::default();
        let t = CategoryTaxonomy::bundled();
        let calls = gw
            .chat_with_tools(&extraction_request(None, "user: what a lovely day\nassistant: indeed", &t))
            .unwrap();
        assert_eq!(calls[0].arguments, "{}");
    }

    #[test]
    fn keyword_fallback_uses_distinctive_attributes() {
        let gw = MockGateway::default();
        let t = CategoryTaxonomy::bundled();
        let calls = gw
            .chat_with_tools(&extraction_request(
                None,
                "user: Find me a place to eat.\nassistant: Any cuisine?\nuser: I love Italian food, always have.",
                &t,
            ))
            .unwrap();
        let v: Value = serde_json::from_str(&calls[0].arguments).unwrap();
        let rec = &v["points_of_interest"]["restaurant"]["favourite_cuisine"][0];
        assert_eq!(rec[FIELD_PREFERENCE], "Italian");
        assert_eq!(rec[FIELD_SENTENCE], "I love Italian food, always have.");
        // ambiguous words such as "high" or "yes" never trigger
        let calls = gw
            .chat_with_tools(&extraction_request(None, "user: yes, set it high", &t))
            .unwrap();
        assert_eq!(calls[0].arguments, "{}");
    }

    #[test]
    fn embeddings_are_deterministic_and_normalized() {
        let gw = MockGateway::default();
        let a = gw.embed_default("a").unwrap();
        assert_eq!(a, gw.embed_default("a").unwrap());
        assert_eq!(a.dimension(), DEFAULT_MOCK_DIMENSION);
        assert_eq!(gw.embed_default(""), Err(GatewayError::EmptyText));
        assert_eq!(gw.embed_default(" ?! "), Err(GatewayError::EmptyText));
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let gw = MockGateway::default();
        let stored = gw
            .embed_default("traffic information source preferences: NavFlow. I always find NavFlow to be reliable.")
            .unwrap();
        let topical = gw.embed_default("traffic").unwrap();
        let unrelated = gw.embed_default("favorite cuisine Italian").unwrap();
        let s1 = cosine(&stored, &topical).unwrap();
        let s2 = cosine(&stored, &unrelated).unwrap();
        assert!(s1 > s2, "{s1} vs {s2}");
        // "traffic" occurs once among 11 tokens; NavFlow twice
        assert!(s1 > 0.0);
    }

    proptest! {
        #[test]
        fn self_similarity_is_one(text in "[a-z]{1,8}( [a-z]{1,8}){0,12}") {
            let v = hashed_embedding(&text, 256).unwrap();
            let e = EmbeddingVector::new(v, "m").unwrap();
            prop_assert!((cosine(&e, &e).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn bucket_disjoint_texts_are_orthogonal(a in "[a-m]{2,6}( [a-m]{2,6}){0,5}", b in "[n-z]{2,6}( [n-z]{2,6}){0,5}") {
            let buckets = |t: &str| -> HashSet<u64> {
                content_tokens(t).iter().map(|w| fnv1a(w.as_bytes()) % 256).collect()
            };
            prop_assume!(buckets(&a).is_disjoint(&buckets(&b)));
            let ea = EmbeddingVector::new(hashed_embedding(&a, 256).unwrap(), "m").unwrap();
            let eb = EmbeddingVector::new(hashed_embedding(&b, 256).unwrap(), "m").unwrap();
            prop_assert_eq!(cosine(&ea, &eb).unwrap(), 0.0);
        }
    }
}
