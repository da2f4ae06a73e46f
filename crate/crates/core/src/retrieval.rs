//! Ranking stored preferences against an utterance.
//!
//! Stored preferences are embedded from an enriched text (detail category,
//! value, revealing sentence); the query is embedded from the raw
//! utterance.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, GatewayError, LlmGateway};
use crate::prefstore::{Preference, PreferenceId, StoreSnapshot};

/// Production default when no k is requested.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("k must be positive")]
    ZeroK,
}

/// `"<detail category>: <value>. <sentence>"`, category lowercased.
pub fn enriched_text(detail_display_name: &str, value: &str, source_sentence: &str) -> String {
    format!("{}: {value}. {source_sentence}", detail_display_name.to_lowercase())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    #[default]
    Enriched,
    SentenceOnly,
}

impl EmbeddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingMode::Enriched => "enriched",
            EmbeddingMode::SentenceOnly => "sentence_only",
        }
    }
}

pub fn embedding_text(mode: EmbeddingMode, detail_display_name: &str, value: &str, source_sentence: &str) -> String {
    match mode {
        EmbeddingMode::Enriched => enriched_text(detail_display_name, value, source_sentence),
        EmbeddingMode::SentenceOnly => source_sentence.to_string(),
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    cosine_slices(&a.values, &b.values)
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine in double-double arithmetic, used to check [`cosine`].
pub mod reference {
    #[derive(Clone, Copy)]
    struct Dd(f64, f64);

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd(s, (a - (s - bb)) + (b - bb))
    }

    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        Dd(p, a.mul_add(b, -p))
    }

    fn add(x: Dd, y: Dd) -> Dd {
        let s = two_sum(x.0, y.0);
        let lo = s.1 + x.1 + y.1;
        let hi = s.0 + lo;
        Dd(hi, lo - (hi - s.0))
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        let acc = a
            .iter()
            .zip(b)
            .fold(Dd(0.0, 0.0), |acc, (x, y)| add(acc, two_prod(*x, *y)));
        acc.0 + acc.1
    }

    /// `None` for mismatched lengths or a zero vector.
    pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
        if a.len() != b.len() {
            return None;
        }
        let (na, nb) = (dot(a, a), dot(b, b));
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        Some(dot(a, b) / (na * nb).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopK {
    Fixed(usize),
    /// k = number of the user's preferences stored in this sub-category.
    Dynamic { sub_category: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub user_id: String,
    pub utterance: String,
    pub k: TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPreference {
    pub preference: Preference,
    pub score: f64,
}

fn ranking_order(a: &RankedPreference, b: &RankedPreference) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.preference.created_at.cmp(&b.preference.created_at))
        .then(a.preference.id.cmp(&b.preference.id))
}

/// Every preference scored against `query`, best first.
pub fn rank(query: &EmbeddingVector, preferences: &[Preference]) -> Result<Vec<RankedPreference>, RetrievalError> {
    let mut ranked = preferences
        .iter()
        .map(|p| {
            Ok(RankedPreference {
                score: cosine(query, &p.embedding)?,
                preference: p.clone(),
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    ranked.sort_by(ranking_order);
    Ok(ranked)
}

pub fn resolve_k(k: &TopK, snapshot: &StoreSnapshot) -> usize {
    match k {
        TopK::Fixed(k) => *k,
        TopK::Dynamic { sub_category } => snapshot.count_by_subcategory(sub_category),
    }
}

/// Top-k preferences for the query. Scores below `floor` are dropped
/// when a floor is given.
pub fn retrieve(
    gateway: &dyn LlmGateway,
    query: &RetrievalQuery,
    snapshot: &StoreSnapshot,
    floor: Option<f64>,
) -> Result<Vec<RankedPreference>, RetrievalError> {
    if query.utterance.trim().is_empty() {
        return Err(RetrievalError::EmptyUtterance);
    }
    if query.k == TopK::Fixed(0) {
        return Err(RetrievalError::ZeroK);
    }
    if snapshot.is_empty() {
        return Ok(Vec::new());
    }
    let k = resolve_k(&query.k, snapshot);
    let q = gateway.embed_default(&query.utterance)?;
    let mut ranked = rank(&q, &snapshot.preferences)?;
    if let Some(floor) = floor {
        ranked.retain(|r| r.score >= floor);
    }
    ranked.truncate(k);
    Ok(ranked)
}

/// One evaluated query: the full ranking, the expected preference and the
/// resolved n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub ranked_ids: Vec<PreferenceId>,
    pub ground_truth: PreferenceId,
    pub n: usize,
}

impl QueryOutcome {
    pub fn rank_of_truth(&self) -> Option<usize> {
        self.ranked_ids.iter().position(|&id| id == self.ground_truth).map(|i| i + 1)
    }
}

/// Share of queries whose ground truth is within the top n + offset, per
/// offset. Empty input gives 0.
pub fn topk_accuracy(outcomes: &[QueryOutcome], offsets: &[usize]) -> Vec<f64> {
    offsets
        .iter()
        .map(|&off| {
            if outcomes.is_empty() {
                return 0.0;
            }
            let hits = outcomes
                .iter()
                .filter(|o| o.rank_of_truth().is_some_and(|r| r <= o.n + off))
                .count();
            hits as f64 / outcomes.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::extraction::CandidatePreference;
    use crate::gateway::MockGateway;
    use crate::prefstore::PreferenceStore;
    use crate::taxonomy::CategoryTaxonomy;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec(), "m").unwrap()
    }

    #[test]
    fn enriched_format() {
        assert_eq!(
            enriched_text("Traffic Information Source Preferences", "NavFlow", "I always find NavFlow to be reliable."),
            "traffic information source preferences: NavFlow. I always find NavFlow to be reliable."
        );
        assert_eq!(enriched_text("favorite cuisine", "Italian", "Italian it is."), "favorite cuisine: Italian. Italian it is.");
        assert_eq!(
            embedding_text(EmbeddingMode::SentenceOnly, "x", "NavFlow", "I always find NavFlow to be reliable."),
            "I always find NavFlow to be reliable."
        );
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&ev(&[0.3, -2.0, 5.0]), &ev(&[0.3, -2.0, 5.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[-1.0, 0.0])).unwrap(), -1.0);
        assert_eq!(
            cosine(&ev(&[1.0]), &ev(&[1.0, 2.0])),
            Err(RetrievalError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 2.0])), Err(RetrievalError::ZeroVector));
    }

    #[test]
    fn accuracy_offsets() {
        let first = QueryOutcome { ranked_ids: vec![PreferenceId(1), PreferenceId(2)], ground_truth: PreferenceId(1), n: 1 };
        assert_eq!(topk_accuracy(&[first.clone(), first], &[0, 1, 2]), [1.0, 1.0, 1.0]);
        let late: Vec<QueryOutcome> = (1..=3)
            .map(|n| QueryOutcome {
                ranked_ids: (1..=6).map(PreferenceId).collect(),
                ground_truth: PreferenceId(n as u64 + 1),
                n,
            })
            .collect();
        assert_eq!(topk_accuracy(&late, &[0, 1, 2]), [0.0, 1.0, 1.0]);
        assert_eq!(topk_accuracy(&[], &[0]), [0.0]);
    }

    fn filled_store() -> (PreferenceStore, MockGateway) {
        let t = Arc::new(CategoryTaxonomy::bundled());
        let gw = MockGateway::default();
        let s = PreferenceStore::in_memory(t.clone(), 256);
        let rows = [
            ("favorite_genres", "Jazz", "I mostly listen to jazz."),
            ("favorite_genres", "Rock", "Rock keeps me awake."),
            ("traffic_information_source_preferences", "NavFlow", "I always find NavFlow to be reliable."),
            ("favourite_cuisine", "Italian", "Italian it is."),
            ("preferred_temperature", "21 degrees", "Keep it at 21 degrees."),
        ];
        for (detail, value, sentence) in rows {
            let path = t.path_of_detail(detail).unwrap();
            let name = &t.detail(&path).unwrap().display_name;
            let e = gw.embed_default(&enriched_text(name, value, sentence)).unwrap();
            let c = CandidatePreference {
                path,
                value: value.into(),
                source_sentence: sentence.into(),
                conversation_id: "c".into(),
                sentence_fallback: false,
            };
            s.insert("u", &c, e).unwrap();
        }
        (s, gw)
    }

    #[test]
    fn dynamic_n_and_fixed_k() {
        let (s, gw) = filled_store();
        let snap = s.snapshot("u");
        let q = |k| RetrievalQuery { user_id: "u".into(), utterance: "Any traffic on my route?".into(), k };
        let top = retrieve(&gw, &q(TopK::Dynamic { sub_category: "traffic_and_conditions".into() }), &snap, None).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].preference.value, "NavFlow");
        let three = retrieve(&gw, &q(TopK::Fixed(3)), &snap, None).unwrap();
        assert_eq!(three.len(), 3);
        assert!(three.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(retrieve(&gw, &q(TopK::Fixed(99)), &snap, None).unwrap().len(), 5);
        let music = retrieve(&gw, &q(TopK::Dynamic { sub_category: "music".into() }), &snap, None).unwrap();
        assert_eq!(music.len(), 2);
        assert!(retrieve(&gw, &q(TopK::Fixed(3)), &s.snapshot("ghost"), None).unwrap().is_empty());
        assert_eq!(retrieve(&gw, &q(TopK::Fixed(0)), &snap, None), Err(RetrievalError::ZeroK));
        let floored = retrieve(&gw, &q(TopK::Fixed(5)), &snap, Some(0.05)).unwrap();
        assert!(floored.iter().all(|r| r.score >= 0.05));
    }

    #[test]
    fn ties_break_by_age_then_id() {
        let (s, _) = filled_store();
        let snap = s.snapshot("u");
        let q = ev(&vec![1.0; 256]);
        let mut same: Vec<Preference> = snap.preferences.to_vec();
        for p in &mut same {
            p.embedding = ev(&vec![1.0; 256]);
        }
        same.reverse();
        let ranked = rank(&q, &same).unwrap();
        let ids: Vec<u64> = ranked.iter().map(|r| r.preference.id.0).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    proptest! {
        #[test]
        fn matches_double_double(a in prop::collection::vec(-1e3f64..1e3, 1..64), seed in prop::collection::vec(-1e3f64..1e3, 64)) {
            let b = &seed[..a.len()];
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let fast = cosine_slices(&a, b).unwrap();
            let slow = reference::cosine(&a, b).unwrap();
            prop_assert!((fast - slow).abs() <= 1e-9, "{} vs {}", fast, slow);
        }

        #[test]
        fn positive_scaling_keeps_order(scales in prop::collection::vec(0.01f64..100.0, 5)) {
            let (s, gw) = filled_store();
            let snap = s.snapshot("u");
            let q = gw.embed_default("jazz on the radio in traffic").unwrap();
            let base: Vec<PreferenceId> = rank(&q, &snap.preferences).unwrap().iter().map(|r| r.preference.id).collect();
            let scaled: Vec<Preference> = snap
                .preferences
                .iter()
                .zip(&scales)
                .map(|(p, f)| Preference { embedding: p.embedding.scaled(*f), ..p.clone() })
                .collect();
            let again: Vec<PreferenceId> = rank(&q, &scaled).unwrap().iter().map(|r| r.preference.id).collect();
            prop_assert_eq!(base, again);
        }
    }
}
