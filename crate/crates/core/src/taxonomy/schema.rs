//! Compilation of a taxonomy into the extraction tool definition.
//!
//! The parameter tree mirrors the taxonomy: one optional object per main
//! category, one optional object per sub-category, one optional list of
//! output records per detail category. Main and sub objects each carry a
//! `no_or_other_preference` slot whose content is always discarded.

use serde_json::value::RawValue;
use serde_json::{json, Map, Value};

use super::{CategoryPath, CategoryTaxonomy, DetailKind};

pub const EXTRACTION_FUNCTION_NAME: &str = "extract_user_preference";
pub const SENTINEL: &str = "no_or_other_preference";
pub const FIELD_SENTENCE: &str = "user_sentence_preference_revealed";
pub const FIELD_PREFERENCE: &str = "user_preference";

const FUNCTION_DESCRIPTION: &str = "Records lasting personal preferences that the user revealed \
in the conversation, each placed under the one category it belongs to. Leave a category empty \
unless the user clearly stated a preference for it. Statements that are not preferences, or \
preferences without a fitting category, go into `no_or_other_preference`.";

const SENTINEL_DESCRIPTION: &str = "Anything that is not a lasting preference or that does not \
fit one of the other parameters at this level.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafParam {
    pub name: String,
    pub display_name: String,
    pub kind: DetailKind,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubParam {
    pub name: String,
    pub display_name: String,
    pub leaves: Vec<LeafParam>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainParam {
    pub name: String,
    pub display_name: String,
    pub subs: Vec<SubParam>,
}

/// A serialized tool definition in the chat-completions wire format.
///
/// The bytes are fixed at construction and forwarded verbatim.
#[derive(Debug, Clone)]
pub struct ToolDefinition {
    name: String,
    raw: Box<RawValue>,
}

impl ToolDefinition {
    pub fn new(name: impl Into<String>, definition: &Value) -> Self {
        let raw = RawValue::from_string(definition.to_string()).expect("serialized JSON is valid");
        Self {
            name: name.into(),
            raw,
        }
    }

    /// A `{"type":"function","function":{...}}` definition.
    pub fn function(name: &str, description: &str, parameters: Value) -> Self {
        Self::new(
            name,
            &json!({
                "type": "function",
                "function": {
                    "name": name,
                    "description": description,
                    "parameters": parameters,
                }
            }),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn as_str(&self) -> &str {
        self.raw.get()
    }

    pub fn raw(&self) -> &RawValue {
        &self.raw
    }

    pub fn parameters(&self) -> Value {
        let v: Value = serde_json::from_str(self.as_str()).expect("valid JSON");
        v["function"]["parameters"].clone()
    }
}

impl PartialEq for ToolDefinition {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.as_str() == other.as_str()
    }
}

/// The extraction function compiled from a taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledSchema {
    pub function_name: String,
    pub function_description: String,
    pub mains: Vec<MainParam>,
    pub taxonomy_version: String,
}

fn output_record_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            FIELD_SENTENCE: {
                "type": ["string", "null"],
                "description": "The user sentence in which the preference was revealed."
            },
            FIELD_PREFERENCE: {
                "type": ["string", "null"],
                "description": "The preferred value, e.g. one of the listed examples."
            }
        },
        "additionalProperties": false
    })
}

fn sentinel_schema() -> Value {
    json!({
        "type": ["array", "null"],
        "description": SENTINEL_DESCRIPTION,
        "items": output_record_schema()
    })
}

impl CompiledSchema {
    pub fn compile(taxonomy: &CategoryTaxonomy) -> Self {
        let mains = taxonomy
            .mains
            .iter()
            .map(|m| MainParam {
                name: m.id.clone(),
                display_name: m.display_name.clone(),
                subs: m
                    .subs
                    .iter()
                    .map(|s| SubParam {
                        name: s.id.clone(),
                        display_name: s.display_name.clone(),
                        leaves: s
                            .details
                            .iter()
                            .map(|d| LeafParam {
                                name: d.id.clone(),
                                display_name: d.display_name.clone(),
                                kind: d.kind,
                                examples: d
                                    .examples
                                    .clone()
                                    .unwrap_or_else(|| d.attributes.clone()),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            function_name: EXTRACTION_FUNCTION_NAME.to_string(),
            function_description: FUNCTION_DESCRIPTION.to_string(),
            mains,
            taxonomy_version: taxonomy.version.clone(),
        }
    }

    pub fn main(&self, name: &str) -> Option<&MainParam> {
        self.mains.iter().find(|m| m.name == name)
    }

    pub fn sub(&self, main: &str, sub: &str) -> Option<&SubParam> {
        self.main(main)?.subs.iter().find(|s| s.name == sub)
    }

    pub fn leaf(&self, path: &CategoryPath) -> Option<&LeafParam> {
        self.sub(&path.main, &path.sub)?
            .leaves
            .iter()
            .find(|l| l.name == path.detail)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (CategoryPath, &LeafParam)> {
        self.mains.iter().flat_map(|m| {
            m.subs.iter().flat_map(move |s| {
                s.leaves
                    .iter()
                    .map(move |l| (CategoryPath::new(&m.name, &s.name, &l.name), l))
            })
        })
    }

    pub fn main_param_count(&self) -> usize {
        self.mains.len()
    }

    pub fn sub_param_count(&self) -> usize {
        self.mains.iter().map(|m| m.subs.len()).sum()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    /// Fully qualified parameter name of a leaf (`main.sub.detail`).
    pub fn parameter_name(&self, path: &CategoryPath) -> Option<String> {
        self.leaf(path)
            .map(|_| format!("{}.{}.{}", path.main, path.sub, path.detail))
    }

    pub fn resolve_parameter(&self, name: &str) -> Option<CategoryPath> {
        let mut parts = name.split('.');
        let path = CategoryPath::new(parts.next()?, parts.next()?, parts.next()?);
        if parts.next().is_some() {
            return None;
        }
        self.leaf(&path).map(|_| path)
    }

    /// JSON schema of the function parameters.
    pub fn parameters_json(&self) -> Value {
        let mut root = Map::new();
        for m in &self.mains {
            let mut main_props = Map::new();
            main_props.insert(SENTINEL.into(), sentinel_schema());
            for s in &m.subs {
                let mut sub_props = Map::new();
                sub_props.insert(SENTINEL.into(), sentinel_schema());
                for l in &s.leaves {
                    sub_props.insert(l.name.clone(), leaf_schema(l));
                }
                main_props.insert(
                    s.name.clone(),
                    json!({
                        "type": ["object", "null"],
                        "description": format!("The user's preferences in the category '{}'.", s.display_name),
                        "properties": Value::Object(sub_props),
                        "additionalProperties": false
                    }),
                );
            }
            root.insert(
                m.name.clone(),
                json!({
                    "type": ["object", "null"],
                    "description": format!("The user's preferences in the category '{}'.", m.display_name),
                    "properties": Value::Object(main_props),
                    "additionalProperties": false
                }),
            );
        }
        json!({
            "type": "object",
            "properties": Value::Object(root),
            "additionalProperties": false
        })
    }

    pub fn tool_definition(&self) -> ToolDefinition {
        ToolDefinition::function(
            &self.function_name,
            &self.function_description,
            self.parameters_json(),
        )
    }
}

fn leaf_schema(leaf: &LeafParam) -> Value {
    let cardinality = match leaf.kind {
        DetailKind::Single => "single preference only",
        DetailKind::Multiple => "multiple preferences possible",
    };
    let mut schema = json!({
        "type": ["array", "null"],
        "description": format!("The user's preference for '{}' ({cardinality}).", leaf.display_name),
        "examples": leaf.examples,
        "items": output_record_schema()
    });
    if leaf.kind == DetailKind::Single {
        schema["maxItems"] = json!(1);
    }
    schema
}

/// Counts `required` entries anywhere in a JSON schema.
pub(crate) fn count_required(schema: &Value) -> usize {
    match schema {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| {
                let own = if k == "required" {
                    v.as_array().map_or(1, |a| a.len())
                } else {
                    0
                };
                own + count_required(v)
            })
            .sum(),
        Value::Array(items) => items.iter().map(count_required).sum(),
        _ => 0,
    }
}

/// Counts sentinel properties by walking the JSON schema.
pub(crate) fn count_sentinels(schema: &Value) -> usize {
    match schema {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| {
                let own = usize::from(k == "properties" && v.get(SENTINEL).is_some());
                own + count_sentinels(v)
            })
            .sum(),
        Value::Array(items) => items.iter().map(count_sentinels).sum(),
        _ => 0,
    }
}
