//! Hierarchical preference categories.
//!
//! A taxonomy has three levels (main, sub, detail). Detail categories are
//! the leaves a preference is stored under; each is tagged as holding a
//! single preference (`SP`) or multiple preferences (`MP`). The bundled
//! default lives in `data/taxonomy.toml`.

pub(crate) mod schema;

pub use schema::{
    CompiledSchema, LeafParam, MainParam, SubParam, ToolDefinition, EXTRACTION_FUNCTION_NAME,
    FIELD_PREFERENCE, FIELD_SENTENCE, SENTINEL,
};

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_TAXONOMY: &str = include_str!("../../data/taxonomy.toml");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy parse error: {0}")]
    Parse(String),
    #[error("taxonomy I/O error: {0}")]
    Io(String),
    #[error("malformed identifier {0:?}: expected lowercase snake_case")]
    InvalidIdentifier(String),
    #[error("duplicate {level} identifier {id:?}")]
    DuplicateIdentifier { level: Level, id: String },
    #[error("detail category {0:?} has no SP/MP type tag")]
    MissingDetailType(String),
    #[error("detail category {0:?} has no attributes")]
    EmptyAttributes(String),
    #[error("detail category {detail:?} lists attribute {attribute:?} twice")]
    DuplicateAttribute { detail: String, attribute: String },
    #[error("unknown sub-category {0:?}")]
    UnknownSubCategory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Main,
    Sub,
    Detail,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Main, Level::Sub, Level::Detail];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Main => "main",
            Level::Sub => "sub",
            Level::Detail => "detail",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a detail category holds one preference or many.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetailKind {
    #[serde(rename = "SP")]
    Single,
    #[serde(rename = "MP")]
    Multiple,
}

impl DetailKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetailKind::Single => "SP",
            DetailKind::Multiple => "MP",
        }
    }
}

impl fmt::Display for DetailKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DetailCategory {
    pub id: String,
    pub display_name: String,
    pub kind: DetailKind,
    /// Example values handed to the model. Extraction may return values
    /// outside this list.
    pub attributes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub examples: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubCategory {
    pub id: String,
    pub display_name: String,
    pub details: Vec<DetailCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MainCategory {
    pub id: String,
    pub display_name: String,
    pub subs: Vec<SubCategory>,
}

/// Three-level address of a detail category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryPath {
    pub main: String,
    pub sub: String,
    pub detail: String,
}

impl CategoryPath {
    pub fn new(main: impl Into<String>, sub: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            main: main.into(),
            sub: sub.into(),
            detail: detail.into(),
        }
    }

    /// The label of this path truncated to `level`, e.g. `main/sub` for [`Level::Sub`].
    pub fn label(&self, level: Level) -> String {
        match level {
            Level::Main => self.main.clone(),
            Level::Sub => format!("{}/{}", self.main, self.sub),
            Level::Detail => format!("{}/{}/{}", self.main, self.sub, self.detail),
        }
    }

    pub fn same_at(&self, other: &CategoryPath, level: Level) -> bool {
        match level {
            Level::Main => self.main == other.main,
            Level::Sub => self.main == other.main && self.sub == other.sub,
            Level::Detail => self == other,
        }
    }
}

impl fmt::Display for CategoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.main, self.sub, self.detail)
    }
}

/// The validated category hierarchy. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryTaxonomy {
    pub version: String,
    pub mains: Vec<MainCategory>,
}

// Wire shape of the taxonomy file; everything optional so validation can
// name the offending entry instead of failing inside serde.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaxonomy {
    version: String,
    #[serde(default)]
    main: Vec<RawMain>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMain {
    id: String,
    name: String,
    #[serde(default)]
    sub: Vec<RawSub>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSub {
    id: String,
    name: String,
    #[serde(default)]
    detail: Vec<RawDetail>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetail {
    id: String,
    name: String,
    #[serde(rename = "type")]
    kind: Option<DetailKind>,
    #[serde(default)]
    attributes: Vec<String>,
    examples: Option<Vec<String>>,
}

fn check_identifier(id: &str) -> Result<(), TaxonomyError> {
    let mut chars = id.chars();
    let well_formed = matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
        && id != SENTINEL;
    if well_formed {
        Ok(())
    } else {
        Err(TaxonomyError::InvalidIdentifier(id.to_string()))
    }
}

fn claim(seen: &mut HashSet<String>, level: Level, id: &str) -> Result<(), TaxonomyError> {
    check_identifier(id)?;
    if !seen.insert(id.to_string()) {
        return Err(TaxonomyError::DuplicateIdentifier {
            level,
            id: id.to_string(),
        });
    }
    Ok(())
}

impl CategoryTaxonomy {
    /// The default in-car taxonomy shipped with the crate (4 main, 11 sub,
    /// 41 detail categories).
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn bundled_source() -> &'static str {
        BUNDLED_TAXONOMY
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(source: &str) -> Result<Self, TaxonomyError> {
        let raw: RawTaxonomy =
            toml::from_str(source).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        if raw.main.is_empty() {
            return Err(TaxonomyError::Parse("taxonomy defines no main categories".into()));
        }

        let mut main_ids = HashSet::new();
        let mut sub_ids = HashSet::new();
        let mut detail_ids = HashSet::new();
        let mut mains = Vec::with_capacity(raw.main.len());
        for m in raw.main {
            claim(&mut main_ids, Level::Main, &m.id)?;
            let mut subs = Vec::with_capacity(m.sub.len());
            for s in m.sub {
                claim(&mut sub_ids, Level::Sub, &s.id)?;
                let mut details = Vec::with_capacity(s.detail.len());
                for d in s.detail {
                    claim(&mut detail_ids, Level::Detail, &d.id)?;
                    let kind = d
                        .kind
                        .ok_or_else(|| TaxonomyError::MissingDetailType(d.id.clone()))?;
                    if d.attributes.is_empty() {
                        return Err(TaxonomyError::EmptyAttributes(d.id));
                    }
                    let mut seen_attr = HashSet::new();
                    for a in &d.attributes {
                        if !seen_attr.insert(a.to_lowercase()) {
                            return Err(TaxonomyError::DuplicateAttribute {
                                detail: d.id.clone(),
                                attribute: a.clone(),
                            });
                        }
                    }
                    details.push(DetailCategory {
                        id: d.id,
                        display_name: d.name,
                        kind,
                        attributes: d.attributes,
                        examples: d.examples,
                    });
                }
                subs.push(SubCategory {
                    id: s.id,
                    display_name: s.name,
                    details,
                });
            }
            mains.push(MainCategory {
                id: m.id,
                display_name: m.name,
                subs,
            });
        }
        Ok(Self {
            version: raw.version,
            mains,
        })
    }

    pub fn main_count(&self) -> usize {
        self.mains.len()
    }

    pub fn sub_count(&self) -> usize {
        self.mains.iter().map(|m| m.subs.len()).sum()
    }

    pub fn detail_count(&self) -> usize {
        self.subs().map(|(_, s)| s.details.len()).sum()
    }

    pub fn subs(&self) -> impl Iterator<Item = (&MainCategory, &SubCategory)> {
        self.mains
            .iter()
            .flat_map(|m| m.subs.iter().map(move |s| (m, s)))
    }

    /// Every detail category with its full path, in file order.
    pub fn details(&self) -> impl Iterator<Item = (CategoryPath, &DetailCategory)> {
        self.subs().flat_map(|(m, s)| {
            s.details
                .iter()
                .map(move |d| (CategoryPath::new(&m.id, &s.id, &d.id), d))
        })
    }

    pub fn sub(&self, sub_id: &str) -> Option<(&MainCategory, &SubCategory)> {
        self.subs().find(|(_, s)| s.id == sub_id)
    }

    pub fn detail(&self, path: &CategoryPath) -> Option<&DetailCategory> {
        self.mains
            .iter()
            .find(|m| m.id == path.main)?
            .subs
            .iter()
            .find(|s| s.id == path.sub)?
            .details
            .iter()
            .find(|d| d.id == path.detail)
    }

    /// Path of the detail category with this identifier.
    pub fn path_of_detail(&self, detail_id: &str) -> Option<CategoryPath> {
        self.details()
            .find(|(_, d)| d.id == detail_id)
            .map(|(p, _)| p)
    }

    pub fn validate_path(&self, path: &CategoryPath) -> bool {
        self.detail(path).is_some()
    }

    /// Removes the given sub-categories (and their detail categories).
    ///
    /// A main category left without any sub-category is dropped as well.
    /// The receiver is untouched.
    pub fn opt_out<S: AsRef<str>>(&self, excluded: &[S]) -> Result<Self, TaxonomyError> {
        for x in excluded {
            if self.sub(x.as_ref()).is_none() {
                return Err(TaxonomyError::UnknownSubCategory(x.as_ref().to_string()));
            }
        }
        let excluded: HashSet<&str> = excluded.iter().map(|s| s.as_ref()).collect();
        let mains = self
            .mains
            .iter()
            .filter_map(|m| {
                let subs: Vec<SubCategory> = m
                    .subs
                    .iter()
                    .filter(|s| !excluded.contains(s.id.as_str()))
                    .cloned()
                    .collect();
                (!subs.is_empty()).then(|| MainCategory {
                    id: m.id.clone(),
                    display_name: m.display_name.clone(),
                    subs,
                })
            })
            .collect();
        Ok(Self {
            version: self.version.clone(),
            mains,
        })
    }

    pub fn compile_schema(&self) -> CompiledSchema {
        CompiledSchema::compile(self)
    }
}
