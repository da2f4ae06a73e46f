//! Benchmark corpus: records, validation, statistics, splits.
//!
//! A corpus directory holds `datapoints.jsonl`, one record per line:
//!
//! ```json
//! {"id":"u7-03","user_id":"user_7",
//!  "ground_truth":{"main":"points_of_interest","sub":"restaurant","detail":"favourite_cuisine",
//!                  "value":"Italian","sentence":"Italian it is."},
//!  "extraction_conversation":[{"speaker":"user","text":"..."},{"speaker":"assistant","text":"..."}],
//!  "retrieval_utterance":"...",
//!  "maintenance_utterances":{"equal":"...","negate":"...","different":"..."}}
//! ```
//!
//! and optionally `mock_labels.jsonl`, canned extraction results for the
//! offline backend keyed by conversation id (`<id>#<kind>` for
//! maintenance utterances).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{CandidatePreference, ConversationTranscript, Turn};
use crate::gateway::{MockScript, ScriptedExtraction};
use crate::maintenance::UtteranceKind;
use crate::taxonomy::{CategoryPath, CategoryTaxonomy};

pub const DATAPOINTS_FILE: &str = "datapoints.jsonl";
pub const MOCK_LABELS_FILE: &str = "mock_labels.jsonl";

const FIXTURE_DATAPOINTS: &str = include_str!("../data/fixture/datapoints.jsonl");
const FIXTURE_LABELS: &str = include_str!("../data/fixture/mock_labels.jsonl");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("corpus is empty")]
    Empty,
    #[error("fractions must be within [0, 1] and sum to 1, got {0} and {1}")]
    BadFractions(f64, f64),
    #[error("need at least {needed} tokens, got {got}")]
    InsufficientTokens { needed: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub main: String,
    pub sub: String,
    pub detail: String,
    pub value: String,
    pub sentence: String,
}

impl GroundTruth {
    pub fn path(&self) -> CategoryPath {
        CategoryPath::new(&self.main, &self.sub, &self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaintenanceUtterances {
    pub equal: String,
    pub negate: String,
    pub different: String,
}

impl MaintenanceUtterances {
    pub fn get(&self, kind: UtteranceKind) -> &str {
        match kind {
            UtteranceKind::Equal => &self.equal,
            UtteranceKind::Negate => &self.negate,
            UtteranceKind::Different => &self.different,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPoint {
    pub id: String,
    pub user_id: String,
    pub ground_truth: GroundTruth,
    pub extraction_conversation: Vec<Turn>,
    pub retrieval_utterance: String,
    pub maintenance_utterances: MaintenanceUtterances,
}

impl DataPoint {
    pub fn transcript(&self) -> ConversationTranscript {
        ConversationTranscript::new(&self.id, self.extraction_conversation.clone())
    }

    pub fn maintenance_conversation_id(&self, kind: UtteranceKind) -> String {
        format!("{}#{}", self.id, kind.as_str())
    }

    pub fn maintenance_transcript(&self, kind: UtteranceKind) -> ConversationTranscript {
        ConversationTranscript::single_utterance(
            self.maintenance_conversation_id(kind),
            self.maintenance_utterances.get(kind),
        )
    }

    pub fn ground_truth_candidate(&self) -> CandidatePreference {
        CandidatePreference {
            path: self.ground_truth.path(),
            value: self.ground_truth.value.clone(),
            source_sentence: self.ground_truth.sentence.clone(),
            conversation_id: self.id.clone(),
            sentence_fallback: false,
        }
    }

    /// Problems that make the point unusable.
    pub fn validate(&self, taxonomy: &CategoryTaxonomy) -> Vec<String> {
        let mut problems = Vec::new();
        if self.id.trim().is_empty() {
            problems.push("empty id".to_string());
        }
        if self.user_id.trim().is_empty() {
            problems.push("empty user_id".to_string());
        }
        let gt = &self.ground_truth;
        if !taxonomy.validate_path(&gt.path()) {
            problems.push(format!("ground truth path {} is not in the taxonomy", gt.path()));
        }
        if gt.value.trim().is_empty() || gt.sentence.trim().is_empty() {
            problems.push("ground truth value and sentence must be non-empty".to_string());
        }
        if self.extraction_conversation.is_empty() {
            problems.push("extraction conversation has no turns".to_string());
        }
        if self.extraction_conversation.iter().any(|t| t.text.trim().is_empty()) {
            problems.push("extraction conversation has an empty turn".to_string());
        }
        if self.retrieval_utterance.trim().is_empty() {
            problems.push("empty retrieval utterance".to_string());
        }
        for kind in UtteranceKind::ALL {
            if self.maintenance_utterances.get(kind).trim().is_empty() {
                problems.push(format!("empty {} maintenance utterance", kind.as_str()));
            }
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadIssue {
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub points: Vec<DataPoint>,
    pub issues: Vec<LoadIssue>,
}

/// Parses JSON lines; bad records are reported and skipped.
pub fn parse_corpus(text: &str, taxonomy: &CategoryTaxonomy) -> LoadReport {
    let mut report = LoadReport::default();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let point: DataPoint = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(String::from));
                report.issues.push(LoadIssue {
                    line: line_no,
                    id,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let mut problems = point.validate(taxonomy);
        if !ids.insert(point.id.clone()) {
            problems.push(format!("duplicate id {:?}", point.id));
        }
        if problems.is_empty() {
            report.points.push(point);
        } else {
            report.issues.push(LoadIssue {
                line: line_no,
                id: Some(point.id.clone()),
                message: problems.join("; "),
            });
        }
    }
    report
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads `datapoints.jsonl` from a corpus directory, or the file itself.
pub fn load_corpus(path: impl AsRef<Path>, taxonomy: &CategoryTaxonomy) -> Result<LoadReport, DatasetError> {
    let path = path.as_ref();
    let file: PathBuf = if path.is_dir() { path.join(DATAPOINTS_FILE) } else { path.to_path_buf() };
    Ok(parse_corpus(&read(&file)?, taxonomy))
}

pub fn serialize_corpus(points: &[DataPoint]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&serde_json::to_string(p).expect("data points serialize"));
        out.push('\n');
    }
    out
}

pub fn fixture_source() -> &'static str {
    FIXTURE_DATAPOINTS
}

pub fn fixture_labels_source() -> &'static str {
    FIXTURE_LABELS
}

/// The bundled fixture corpus. Panics if it fails validation, which a
/// unit test rules out.
pub fn fixture(taxonomy: &CategoryTaxonomy) -> Vec<DataPoint> {
    let report = parse_corpus(FIXTURE_DATAPOINTS, taxonomy);
    assert!(report.issues.is_empty(), "fixture issues: {:?}", report.issues);
    report.points
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockLabel {
    pub conversation_id: String,
    pub extractions: Vec<GroundTruth>,
}

pub fn parse_mock_labels(text: &str, source_name: &str) -> Result<Vec<MockLabel>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Malformed {
                source_name: source_name.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_mock_labels(dir: impl AsRef<Path>) -> Result<Vec<MockLabel>, DatasetError> {
    let path = dir.as_ref().join(MOCK_LABELS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    parse_mock_labels(&read(&path)?, &path.display().to_string())
}

pub fn fixture_labels() -> Vec<MockLabel> {
    parse_mock_labels(FIXTURE_LABELS, MOCK_LABELS_FILE).expect("bundled labels parse")
}

fn scripted(gt: &GroundTruth) -> ScriptedExtraction {
    ScriptedExtraction {
        path: gt.path(),
        value: gt.value.clone(),
        sentence: Some(gt.sentence.clone()),
    }
}

/// Script for the offline backend: each extraction conversation yields
/// its ground truth; labels add (or override) entries.
pub fn mock_script(points: &[DataPoint], labels: &[MockLabel]) -> MockScript {
    let mut script = MockScript::new();
    for p in points {
        script.insert(&p.id, vec![scripted(&p.ground_truth)]);
    }
    for l in labels {
        script.insert(&l.conversation_id, l.extractions.iter().map(scripted).collect());
    }
    script
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub extraction_conversations: usize,
    pub retrieval_utterances: usize,
    pub maintenance_utterances: usize,
    pub avg_turns_per_conversation: f64,
    pub avg_words_per_conversation: f64,
    pub avg_words_per_retrieval_utterance: f64,
    pub avg_words_per_maintenance_utterance: f64,
}

fn mean(total: usize, count: usize) -> f64 {
    total as f64 / count as f64
}

pub fn stats(points: &[DataPoint]) -> Result<CorpusStats, DatasetError> {
    if points.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = points.len();
    let turns: usize = points.iter().map(|p| p.extraction_conversation.len()).sum();
    let conv_words: usize = points
        .iter()
        .flat_map(|p| &p.extraction_conversation)
        .map(|t| words(&t.text).len())
        .sum();
    let retrieval_words: usize = points.iter().map(|p| words(&p.retrieval_utterance).len()).sum();
    let maintenance_words: usize = points
        .iter()
        .flat_map(|p| UtteranceKind::ALL.map(|k| words(p.maintenance_utterances.get(k)).len()))
        .sum();
    Ok(CorpusStats {
        extraction_conversations: n,
        retrieval_utterances: n,
        maintenance_utterances: 3 * n,
        avg_turns_per_conversation: mean(turns, n),
        avg_words_per_conversation: mean(conv_words, n),
        avg_words_per_retrieval_utterance: mean(retrieval_words, n),
        avg_words_per_maintenance_utterance: mean(maintenance_words, 3 * n),
    })
}

/// Seeded split into (first, second), stratified by main category. Each
/// part keeps the corpus order.
pub fn split(points: &[DataPoint], fractions: (f64, f64), seed: u64) -> Result<(Vec<DataPoint>, Vec<DataPoint>), DatasetError> {
    let (a, b) = fractions;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || ((a + b) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(a, b));
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        strata.entry(p.ground_truth.main.as_str()).or_default().push(i);
    }
    let target = (a * points.len() as f64).round() as usize;
    let quotas: Vec<f64> = strata.values().map(|v| a * v.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&x, &y| (quotas[y] - quotas[y].floor()).total_cmp(&(quotas[x] - quotas[x].floor())).then(x.cmp(&y)));
    let mut missing = target.saturating_sub(take.iter().sum());
    for &s in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        let size = strata.values().nth(s).map_or(0, Vec::len);
        if take[s] < size {
            take[s] += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = vec![false; points.len()];
    for (members, &k) in strata.values().zip(&take) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..k] {
            first[i] = true;
        }
    }
    let (x, y): (Vec<_>, Vec<_>) = points.iter().zip(&first).partition(|(_, f)| **f);
    Ok((
        x.into_iter().map(|(p, _)| p.clone()).collect(),
        y.into_iter().map(|(p, _)| p.clone()).collect(),
    ))
}

/// Unique n-grams over total n-grams of the concatenated token stream.
pub fn distinct_n<S: AsRef<str>>(texts: &[S], n: usize) -> Result<f64, DatasetError> {
    let tokens: Vec<String> = texts.iter().flat_map(|t| words(t.as_ref())).collect();
    if n == 0 || tokens.len() < n {
        return Err(DatasetError::InsufficientTokens {
            needed: n.max(1),
            got: tokens.len(),
        });
    }
    let grams: Vec<&[String]> = tokens.windows(n).collect();
    let unique: HashSet<&[String]> = grams.iter().copied().collect();
    Ok(unique.len() as f64 / grams.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::Speaker;
    use proptest::prelude::*;

    fn taxonomy() -> CategoryTaxonomy {
        CategoryTaxonomy::bundled()
    }

    #[test]
    fn fixture_loads_and_round_trips() {
        let t = taxonomy();
        let report = parse_corpus(fixture_source(), &t);
        assert!(report.issues.is_empty(), "{:?}", report.issues);
        assert_eq!(report.points.len(), 20);
        assert_eq!(serialize_corpus(&report.points), fixture_source());
        let mains: HashSet<&str> = report.points.iter().map(|p| p.ground_truth.main.as_str()).collect();
        assert_eq!(mains.len(), 4);
    }

    #[test]
    fn fixture_sentences_occur_in_user_turns() {
        for p in fixture(&taxonomy()) {
            assert!(
                p.extraction_conversation
                    .iter()
                    .any(|t| t.speaker == Speaker::User && t.text.contains(&p.ground_truth.sentence)),
                "{}",
                p.id
            );
        }
    }

    #[test]
    fn labels_cover_every_maintenance_utterance() {
        let points = fixture(&taxonomy());
        let labels = fixture_labels();
        assert_eq!(labels.len(), 60);
        let t = taxonomy();
        let script = mock_script(&points, &labels);
        for p in &points {
            for k in UtteranceKind::ALL {
                let got = script.get(&p.maintenance_conversation_id(k)).unwrap();
                assert_eq!(got.len(), 1);
                assert_eq!(got[0].path, p.ground_truth.path());
                assert!(t.validate_path(&got[0].path));
            }
        }
    }

    #[test]
    fn missing_negate_is_reported_with_location() {
        let t = taxonomy();
        let mut lines: Vec<String> = fixture_source().lines().take(3).map(String::from).collect();
        lines[1] = lines[1].replace("\"negate\":", "\"negated\":");
        let report = parse_corpus(&lines.join("\n"), &t);
        assert_eq!(report.points.len(), 2);
        assert_eq!(report.issues[0].line, 2);
        assert!(report.issues[0].message.contains("negate"));
        assert!(report.issues[0].id.is_some());
    }

    #[test]
    fn invalid_paths_and_duplicates_are_reported() {
        let t = taxonomy();
        let first = fixture_source().lines().next().unwrap();
        let bad = first.replace("\"favorite_genres\"", "\"favorite_movies\"");
        let report = parse_corpus(&format!("{first}\n{first}\n{bad}\n"), &t);
        assert_eq!(report.points.len(), 1);
        assert_eq!(report.issues.len(), 2);
        assert!(report.issues[0].message.contains("duplicate"));
    }

    #[test]
    fn missing_corpus_file_is_an_error() {
        assert!(matches!(
            load_corpus("/nonexistent/prefmem", &taxonomy()),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn stats_on_a_single_conversation() {
        let mut p = fixture(&taxonomy()).remove(0);
        p.extraction_conversation = vec![
            Turn::user("Hi there."),
            Turn::assistant("Hello!"),
            Turn::user("Play jazz, please."),
            Turn::assistant("Sure."),
        ];
        let s = stats(&[p]).unwrap();
        assert_eq!(s.avg_turns_per_conversation, 4.0);
        assert_eq!(s.avg_words_per_conversation, 7.0);
        assert!(matches!(stats(&[]), Err(DatasetError::Empty)));
    }

    #[test]
    fn tokenizer() {
        assert_eq!(words("Don't stop, NavFlow!  88.3"), ["dont", "stop", "navflow", "883"]);
    }

    #[test]
    fn distinct_hand_counts() {
        assert_eq!(distinct_n(&["a b a b"], 1).unwrap(), 0.5);
        assert_eq!(distinct_n(&["a b c"], 2).unwrap(), 1.0);
        assert_eq!(distinct_n(&["x x x x x"], 1).unwrap(), 0.2);
        assert!(distinct_n(&["a"], 2).is_err());
        assert!(distinct_n(&["a"], 0).is_err());
    }

    #[test]
    fn split_shapes() {
        let points = fixture(&taxonomy());
        let (a, b) = split(&points, (0.5, 0.5), 7).unwrap();
        assert_eq!((a.len(), b.len()), (10, 10));
        let (c, d) = split(&points, (0.5, 0.5), 7).unwrap();
        assert_eq!((a.clone(), b.clone()), (c, d));
        let (all, none) = split(&points, (1.0, 0.0), 1).unwrap();
        assert_eq!((all.len(), none.len()), (20, 0));
        assert!(split(&points, (0.6, 0.6), 1).is_err());
        // every stratum lands in both halves roughly evenly
        for main in ["points_of_interest", "navigation_and_routing", "vehicle_settings_and_comfort", "entertainment_and_media"] {
            let total = points.iter().filter(|p| p.ground_truth.main == main).count();
            let first = a.iter().filter(|p| p.ground_truth.main == main).count();
            assert!(first.abs_diff(total - first) <= 1, "{main}");
        }
    }

    fn synthetic(n: usize, mains: &[&str]) -> Vec<DataPoint> {
        let base = fixture(&taxonomy()).remove(0);
        (0..n)
            .map(|i| {
                let mut p = base.clone();
                p.id = format!("p{i}");
                p.ground_truth.main = mains[i % mains.len()].to_string();
                p
            })
            .collect()
    }

    #[test]
    fn thousand_points_split_evenly() {
        let pts = synthetic(1000, &["a", "b", "c", "d"]);
        let (a, b) = split(&pts, (0.5, 0.5), 42).unwrap();
        assert_eq!((a.len(), b.len()), (500, 500));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 0usize..60, f in 0.0f64..=1.0, seed in any::<u64>()) {
            let pts = synthetic(n, &["a", "b", "c"]);
            let (a, b) = split(&pts, (f, 1.0 - f), seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), n);
            prop_assert_eq!(a.len(), (f * n as f64).round() as usize);
            let ids: HashSet<String> = a.iter().chain(&b).map(|p| p.id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn duplication_never_raises_distinctness(texts in prop::collection::vec("[a-d]( [a-d]){0,6}", 1..5), n in 1usize..4) {
            if let Ok(once) = distinct_n(&texts, n) {
                let twice: Vec<String> = texts.iter().chain(&texts).cloned().collect();
                prop_assert!(distinct_n(&twice, n).unwrap() <= once + 1e-12);
            }
        }

        #[test]
        fn shuffling_texts_keeps_distinct_1(texts in prop::collection::vec("[a-d]( [a-d]){0,6}", 1..5), seed in any::<u64>()) {
            let mut shuffled = texts.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(distinct_n(&texts, 1).unwrap(), distinct_n(&shuffled, 1).unwrap());
        }
    }
}
