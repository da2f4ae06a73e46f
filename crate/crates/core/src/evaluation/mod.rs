//! The benchmark experiments: in-schema and out-of-schema extraction,
//! maintenance decisions and retrieval accuracy.
//!
//! Points run in parallel; results are reduced in corpus order so a
//! report depends only on its inputs.

pub mod metrics;
mod render;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::DataPoint;
use crate::extraction::{
    classify_outcome, extract, over_extraction_breakdown, CountBucket, ExperimentMode, ExtractionOutcome,
};
use crate::gateway::LlmGateway;
use crate::maintenance::{
    candidate_embedding, decide, expected_action, MaintenanceAction, MaintenanceConfig, UtteranceKind,
};
use crate::prefstore::{PreferenceId, PreferenceStore};
use crate::retrieval::{rank, topk_accuracy, EmbeddingMode, QueryOutcome};
use crate::taxonomy::{CategoryPath, CategoryTaxonomy, CompiledSchema, DetailKind, Level};

use metrics::{micro_counts, ConfusionMatrix, LevelCounts};
pub use render::{render_report, RenderError, ReportFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    InSchema,
    OutOfSchema,
    Maintenance,
    Retrieval,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::InSchema,
        Experiment::OutOfSchema,
        Experiment::Maintenance,
        Experiment::Retrieval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::InSchema => "in-schema",
            Experiment::OutOfSchema => "out-of-schema",
            Experiment::Maintenance => "maintenance",
            Experiment::Retrieval => "retrieval",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub maintenance: MaintenanceConfig,
    pub offsets: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            maintenance: MaintenanceConfig::default(),
            offsets: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PointFailure {
    pub point_id: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelMetrics {
    pub categories: usize,
    #[serde(flatten)]
    pub counts: LevelCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OverExtraction {
    pub points: usize,
    pub spurious: usize,
    pub duplicate: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractionRow {
    pub id: String,
    pub bucket: CountBucket,
    pub correct: bool,
    pub valid: bool,
    pub predicted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionSection {
    pub mode: ExperimentMode,
    pub evaluated: usize,
    pub histogram: BTreeMap<CountBucket, usize>,
    pub correct: usize,
    pub correct_rate: f64,
    pub valid_outputs: usize,
    pub validity_rate: f64,
    pub over_extraction: OverExtraction,
    pub spillover: usize,
    pub discarded_sentinels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_level: Option<BTreeMap<Level, LevelMetrics>>,
    pub confusion: BTreeMap<Level, ConfusionMatrix>,
    pub rows: Vec<ExtractionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaintenanceRow {
    pub detail_type: DetailKind,
    pub utterance: UtteranceKind,
    pub expected: MaintenanceAction,
    pub evaluated: usize,
    pub skipped: usize,
    pub counts: BTreeMap<MaintenanceAction, usize>,
    /// Row-normalized counts; absent when nothing was evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<BTreeMap<MaintenanceAction, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaintenanceSection {
    pub gated_points: usize,
    pub rows: Vec<MaintenanceRow>,
    pub decisions: usize,
    pub protocol_violations: usize,
    /// Share of decisions matching the expected tool.
    pub raw_accuracy: f64,
    /// As above, with update accepted for equal utterances (same end state).
    pub end_state_accuracy: f64,
    /// Equal utterances not stored twice (pass or update).
    pub redundancy_reduction: f64,
    /// Negated preferences replaced (update).
    pub contradiction_reduction: f64,
    /// Negate and different utterances wrongly passed, losing the new value.
    pub lost_by_pass: f64,
    /// Equal and negate utterances appended in multi-preference categories.
    pub multiple_wrong_append: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetrievalRow {
    pub id: String,
    pub user_id: String,
    pub n: usize,
    pub store_size: usize,
    pub rank: BTreeMap<EmbeddingMode, Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalSection {
    pub queries: usize,
    pub users: usize,
    pub avg_n: f64,
    pub avg_store_size: f64,
    pub accuracy: BTreeMap<EmbeddingMode, BTreeMap<String, f64>>,
    pub rows: Vec<RetrievalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub backend: String,
    pub taxonomy_version: String,
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_schema: Option<ExtractionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_of_schema: Option<ExtractionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maintenance: Option<MaintenanceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalSection>,
    pub failures: Vec<PointFailure>,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn offset_label(offset: usize) -> String {
    if offset == 0 {
        "n".to_string()
    } else {
        format!("n+{offset}")
    }
}

/// Exactly one candidate, at the ground-truth path.
pub fn is_perfect(outcome: &ExtractionOutcome, ground_truth: &CategoryPath) -> bool {
    outcome.candidates.len() == 1 && &outcome.candidates[0].path == ground_truth
}

fn labels_at(taxonomy: &CategoryTaxonomy, level: Level) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (path, _) in taxonomy.details() {
        let l = label(&path, level);
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

fn label(path: &CategoryPath, level: Level) -> String {
    match level {
        Level::Main => path.main.clone(),
        Level::Sub => path.sub.clone(),
        Level::Detail => path.detail.clone(),
    }
}

fn category_count(taxonomy: &CategoryTaxonomy, level: Level) -> usize {
    match level {
        Level::Main => taxonomy.main_count(),
        Level::Sub => taxonomy.sub_count(),
        Level::Detail => taxonomy.detail_count(),
    }
}

type Extracted = Vec<Result<ExtractionOutcome, String>>;

fn extract_all(gateway: &dyn LlmGateway, points: &[DataPoint], schema_for: impl Fn(&DataPoint) -> Arc<CompiledSchema> + Sync) -> Extracted {
    points
        .par_iter()
        .map(|p| extract(gateway, &p.transcript(), &schema_for(p)).map_err(|e| e.to_string()))
        .collect()
}

fn extraction_section(
    mode: ExperimentMode,
    taxonomy: &CategoryTaxonomy,
    points: &[DataPoint],
    outcomes: &Extracted,
    failures: &mut Vec<PointFailure>,
) -> ExtractionSection {
    let mut histogram: BTreeMap<CountBucket, usize> = CountBucket::ALL.iter().map(|b| (*b, 0)).collect();
    let mut rows = Vec::new();
    let (mut correct, mut valid, mut spillover, mut sentinels) = (0, 0, 0, 0);
    let mut over = OverExtraction::default();
    let mut scored: Vec<(CategoryPath, Vec<CategoryPath>)> = Vec::new();
    let stage = match mode {
        ExperimentMode::InSchema => "in-schema extraction",
        ExperimentMode::OutOfSchema => "out-of-schema extraction",
    };
    for (p, outcome) in points.iter().zip(outcomes) {
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                failures.push(PointFailure {
                    point_id: p.id.clone(),
                    stage: stage.into(),
                    message: e.clone(),
                });
                continue;
            }
        };
        let gt = p.ground_truth.path();
        let class = classify_outcome(outcome, Some(&gt), mode);
        *histogram.entry(class.bucket).or_default() += 1;
        correct += usize::from(class.correct);
        valid += usize::from(outcome.structurally_valid);
        spillover += usize::from(class.spillover);
        sentinels += outcome.discarded_sentinel_count;
        if class.over_extraction {
            let expected = match mode {
                ExperimentMode::InSchema => Some(&gt),
                ExperimentMode::OutOfSchema => None,
            };
            let (s, d) = over_extraction_breakdown(outcome, expected);
            over.points += 1;
            over.spurious += s;
            over.duplicate += d;
        }
        let predicted: Vec<CategoryPath> = outcome.candidates.iter().map(|c| c.path.clone()).collect();
        rows.push(ExtractionRow {
            id: p.id.clone(),
            bucket: class.bucket,
            correct: class.correct,
            valid: outcome.structurally_valid,
            predicted: predicted.iter().map(|c| c.to_string()).collect(),
        });
        scored.push((gt, predicted));
    }
    let evaluated = rows.len();

    let per_level = (mode == ExperimentMode::InSchema).then(|| {
        Level::ALL
            .iter()
            .map(|&level| {
                let counts = micro_counts(scored.iter().map(|(g, v)| (Some(g), v.as_slice())), level);
                (
                    level,
                    LevelMetrics {
                        categories: category_count(taxonomy, level),
                        counts,
                        precision: counts.precision(),
                        recall: counts.recall(),
                        f1: counts.f1(),
                    },
                )
            })
            .collect()
    });

    let confusion = Level::ALL
        .iter()
        .map(|&level| {
            let instances: Vec<(BTreeSet<String>, BTreeSet<String>)> = scored
                .iter()
                .map(|(g, v)| {
                    (
                        BTreeSet::from([label(g, level)]),
                        v.iter().map(|c| label(c, level)).collect(),
                    )
                })
                .collect();
            (level, ConfusionMatrix::build(level, &instances, &labels_at(taxonomy, level)))
        })
        .collect();

    ExtractionSection {
        mode,
        evaluated,
        histogram,
        correct,
        correct_rate: rate(correct, evaluated),
        valid_outputs: valid,
        validity_rate: rate(valid, evaluated),
        over_extraction: over,
        spillover,
        discarded_sentinels: sentinels,
        per_level,
        confusion,
        rows,
    }
}

fn store_primed(
    gateway: &dyn LlmGateway,
    taxonomy: &CategoryTaxonomy,
    gated: &[(&DataPoint, &ExtractionOutcome)],
    mode: EmbeddingMode,
    failures: &mut Vec<PointFailure>,
) -> (PreferenceStore, HashMap<String, PreferenceId>) {
    let store = PreferenceStore::in_memory(Arc::new(taxonomy.clone()), gateway.embedding_dimension());
    let embeddings: Vec<_> = gated
        .par_iter()
        .map(|(_, o)| candidate_embedding(gateway, taxonomy, &o.candidates[0], mode))
        .collect();
    let mut ids = HashMap::new();
    for ((p, o), e) in gated.iter().zip(embeddings) {
        let inserted = e
            .map_err(|e| e.to_string())
            .and_then(|e| store.insert(&p.user_id, &o.candidates[0], e).map_err(|e| e.to_string()));
        match inserted {
            Ok(pref) => {
                ids.insert(p.id.clone(), pref.id);
            }
            Err(message) => failures.push(PointFailure {
                point_id: p.id.clone(),
                stage: format!("priming store ({})", mode.as_str()),
                message,
            }),
        }
    }
    (store, ids)
}

struct Decided {
    detail_type: DetailKind,
    utterance: UtteranceKind,
    action: Option<MaintenanceAction>,
    violation: bool,
}

fn maintenance_section(
    gateway: &dyn LlmGateway,
    taxonomy: &CategoryTaxonomy,
    schema: &CompiledSchema,
    gated: &[(&DataPoint, &ExtractionOutcome)],
    config: &EvalConfig,
    failures: &mut Vec<PointFailure>,
) -> MaintenanceSection {
    let (store, ids) = store_primed(gateway, taxonomy, gated, EmbeddingMode::Enriched, failures);
    let jobs: Vec<(&DataPoint, UtteranceKind)> = gated
        .iter()
        .filter(|(p, _)| ids.contains_key(&p.id))
        .flat_map(|(p, _)| UtteranceKind::ALL.map(|k| (*p, k)))
        .collect();
    let results: Vec<Result<Decided, PointFailure>> = jobs
        .par_iter()
        .map(|&(p, kind)| {
            let gt = p.ground_truth.path();
            let detail_type = taxonomy.detail(&gt).map(|d| d.kind).unwrap_or(DetailKind::Multiple);
            let fail = |stage: &str, message: String| PointFailure {
                point_id: p.maintenance_conversation_id(kind),
                stage: stage.into(),
                message,
            };
            let outcome = extract(gateway, &p.maintenance_transcript(kind), schema)
                .map_err(|e| fail("maintenance extraction", e.to_string()))?;
            if !is_perfect(&outcome, &gt) {
                return Ok(Decided { detail_type, utterance: kind, action: None, violation: false });
            }
            let existing = store.by_detail_category(&p.user_id, &gt);
            let d = decide(gateway, taxonomy, &outcome.candidates[0], &existing, &config.maintenance)
                .map_err(|e| fail("maintenance decision", e.to_string()))?;
            Ok(Decided {
                detail_type,
                utterance: kind,
                action: Some(d.action),
                violation: d.protocol_violation.is_some(),
            })
        })
        .collect();

    let mut table: BTreeMap<(DetailKind, UtteranceKind), (usize, BTreeMap<MaintenanceAction, usize>)> = BTreeMap::new();
    let mut violations = 0;
    for r in results {
        match r {
            Err(f) => failures.push(f),
            Ok(d) => {
                let entry = table.entry((d.detail_type, d.utterance)).or_default();
                match d.action {
                    None => entry.0 += 1,
                    Some(a) => *entry.1.entry(a).or_default() += 1,
                }
                violations += usize::from(d.violation);
            }
        }
    }

    let mut rows = Vec::new();
    for detail_type in [DetailKind::Multiple, DetailKind::Single] {
        for utterance in UtteranceKind::ALL {
            let (skipped, found) = table.remove(&(detail_type, utterance)).unwrap_or_default();
            let counts: BTreeMap<MaintenanceAction, usize> = MaintenanceAction::ALL
                .iter()
                .map(|a| (*a, found.get(a).copied().unwrap_or(0)))
                .collect();
            let evaluated: usize = counts.values().sum();
            let distribution = (evaluated > 0)
                .then(|| counts.iter().map(|(a, c)| (*a, rate(*c, evaluated))).collect());
            rows.push(MaintenanceRow {
                detail_type,
                utterance,
                expected: expected_action(utterance, detail_type),
                evaluated,
                skipped,
                counts,
                distribution,
            });
        }
    }

    let sum = |f: &dyn Fn(&MaintenanceRow) -> usize| -> usize { rows.iter().map(f).sum() };
    let count = |r: &MaintenanceRow, a: MaintenanceAction| r.counts[&a];
    let of_kind = |k: UtteranceKind| move |r: &MaintenanceRow| if r.utterance == k { r.evaluated } else { 0 };
    let decisions = sum(&|r| r.evaluated);
    let raw = sum(&|r| count(r, r.expected));
    let end_state = sum(&|r| {
        count(r, r.expected)
            + if r.utterance == UtteranceKind::Equal { count(r, MaintenanceAction::Update) } else { 0 }
    });
    let equal_total = sum(&of_kind(UtteranceKind::Equal));
    let negate_total = sum(&of_kind(UtteranceKind::Negate));
    let different_total = sum(&of_kind(UtteranceKind::Different));
    let redundancy = sum(&|r| {
        if r.utterance == UtteranceKind::Equal {
            count(r, MaintenanceAction::Pass) + count(r, MaintenanceAction::Update)
        } else {
            0
        }
    });
    let contradiction = sum(&|r| if r.utterance == UtteranceKind::Negate { count(r, MaintenanceAction::Update) } else { 0 });
    let lost = sum(&|r| if r.utterance != UtteranceKind::Equal { count(r, MaintenanceAction::Pass) } else { 0 });
    let mp_rows = |r: &MaintenanceRow| r.detail_type == DetailKind::Multiple && r.utterance != UtteranceKind::Different;
    let mp_total = sum(&|r| if mp_rows(r) { r.evaluated } else { 0 });
    let mp_append = sum(&|r| if mp_rows(r) { count(r, MaintenanceAction::Append) } else { 0 });

    MaintenanceSection {
        gated_points: gated.len(),
        rows,
        decisions,
        protocol_violations: violations,
        raw_accuracy: rate(raw, decisions),
        end_state_accuracy: rate(end_state, decisions),
        redundancy_reduction: rate(redundancy, equal_total),
        contradiction_reduction: rate(contradiction, negate_total),
        lost_by_pass: rate(lost, negate_total + different_total),
        multiple_wrong_append: rate(mp_append, mp_total),
    }
}

fn retrieval_section(
    gateway: &dyn LlmGateway,
    taxonomy: &CategoryTaxonomy,
    gated: &[(&DataPoint, &ExtractionOutcome)],
    config: &EvalConfig,
    failures: &mut Vec<PointFailure>,
) -> RetrievalSection {
    let modes = [EmbeddingMode::Enriched, EmbeddingMode::SentenceOnly];
    let stores: Vec<(PreferenceStore, HashMap<String, PreferenceId>)> = modes
        .iter()
        .map(|&m| store_primed(gateway, taxonomy, gated, m, failures))
        .collect();
    let queried: Vec<&DataPoint> = gated
        .iter()
        .map(|(p, _)| *p)
        .filter(|p| stores.iter().all(|(_, ids)| ids.contains_key(&p.id)))
        .collect();
    let results: Vec<Result<(RetrievalRow, Vec<QueryOutcome>), PointFailure>> = queried
        .par_iter()
        .map(|p| {
            let fail = |message: String| PointFailure {
                point_id: p.id.clone(),
                stage: "retrieval".into(),
                message,
            };
            let q = gateway.embed_default(&p.retrieval_utterance).map_err(|e| fail(e.to_string()))?;
            let mut row = RetrievalRow {
                id: p.id.clone(),
                user_id: p.user_id.clone(),
                n: 0,
                store_size: 0,
                rank: BTreeMap::new(),
            };
            let mut outcomes = Vec::new();
            for (mode, (store, ids)) in modes.iter().zip(&stores) {
                let snapshot = store.snapshot(&p.user_id);
                let ranked = rank(&q, &snapshot.preferences).map_err(|e| fail(e.to_string()))?;
                let outcome = QueryOutcome {
                    ranked_ids: ranked.iter().map(|r| r.preference.id).collect(),
                    ground_truth: ids[&p.id],
                    n: snapshot.count_by_subcategory(&p.ground_truth.sub),
                };
                row.n = outcome.n;
                row.store_size = snapshot.len();
                row.rank.insert(*mode, outcome.rank_of_truth());
                outcomes.push(outcome);
            }
            Ok((row, outcomes))
        })
        .collect();

    let mut rows = Vec::new();
    let mut per_mode: Vec<Vec<QueryOutcome>> = vec![Vec::new(); modes.len()];
    for r in results {
        match r {
            Err(f) => failures.push(f),
            Ok((row, outcomes)) => {
                rows.push(row);
                for (bucket, o) in per_mode.iter_mut().zip(outcomes) {
                    bucket.push(o);
                }
            }
        }
    }
    let accuracy = modes
        .iter()
        .zip(&per_mode)
        .map(|(m, outcomes)| {
            let acc = topk_accuracy(outcomes, &config.offsets);
            (*m, config.offsets.iter().zip(acc).map(|(o, a)| (offset_label(*o), a)).collect())
        })
        .collect();
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        sizes.insert(&r.user_id, r.store_size);
    }
    RetrievalSection {
        queries: rows.len(),
        users: sizes.len(),
        avg_n: rate(rows.iter().map(|r| r.n).sum(), rows.len()),
        avg_store_size: rate(sizes.values().sum(), sizes.len()),
        accuracy,
        rows,
    }
}

/// File name and contents of every document for the sections present in
/// `report`: one plain table per experiment, the JSON report and, when an
/// extraction experiment ran, the confusion grids.
pub fn report_documents(report: &EvalReport) -> Result<Vec<(String, String)>, RenderError> {
    let present: Vec<Experiment> = Experiment::ALL
        .into_iter()
        .filter(|e| match e {
            Experiment::InSchema => report.in_schema.is_some(),
            Experiment::OutOfSchema => report.out_of_schema.is_some(),
            Experiment::Maintenance => report.maintenance.is_some(),
            Experiment::Retrieval => report.retrieval.is_some(),
        })
        .collect();
    let mut docs = Vec::new();
    for e in &present {
        docs.push((format!("{}.txt", e.as_str()), render_report(report, &[*e], ReportFormat::PlainTable)?));
    }
    docs.push(("report.json".to_string(), render_report(report, &present, ReportFormat::Json)?));
    let extraction: Vec<Experiment> = present
        .iter()
        .copied()
        .filter(|e| matches!(e, Experiment::InSchema | Experiment::OutOfSchema))
        .collect();
    if !extraction.is_empty() {
        docs.push(("confusion.txt".to_string(), render_report(report, &extraction, ReportFormat::ConfusionGrid)?));
    }
    Ok(docs)
}

/// Runs the selected experiments over `points`.
pub fn run_experiments(
    gateway: &dyn LlmGateway,
    taxonomy: &CategoryTaxonomy,
    points: &[DataPoint],
    experiments: &[Experiment],
    backend: &str,
    config: &EvalConfig,
) -> EvalReport {
    let wants = |e: Experiment| experiments.contains(&e);
    let mut failures = Vec::new();
    let schema = Arc::new(taxonomy.compile_schema());
    let mut report = EvalReport {
        backend: backend.to_string(),
        taxonomy_version: taxonomy.version.clone(),
        points: points.len(),
        in_schema: None,
        out_of_schema: None,
        maintenance: None,
        retrieval: None,
        failures: Vec::new(),
    };

    let needs_in_schema = wants(Experiment::InSchema) || wants(Experiment::Maintenance) || wants(Experiment::Retrieval);
    let in_schema: Extracted = if needs_in_schema {
        extract_all(gateway, points, |_| schema.clone())
    } else {
        Vec::new()
    };
    if wants(Experiment::InSchema) {
        report.in_schema = Some(extraction_section(ExperimentMode::InSchema, taxonomy, points, &in_schema, &mut failures));
    }

    if wants(Experiment::OutOfSchema) {
        let mut per_sub: HashMap<String, Arc<CompiledSchema>> = HashMap::new();
        for (_, sub) in taxonomy.subs() {
            let narrowed = taxonomy.opt_out(&[&sub.id]).expect("known sub-category");
            per_sub.insert(sub.id.clone(), Arc::new(narrowed.compile_schema()));
        }
        let outcomes = extract_all(gateway, points, |p| {
            per_sub.get(&p.ground_truth.sub).cloned().unwrap_or_else(|| schema.clone())
        });
        report.out_of_schema = Some(extraction_section(ExperimentMode::OutOfSchema, taxonomy, points, &outcomes, &mut failures));
    }

    let gated: Vec<(&DataPoint, &ExtractionOutcome)> = points
        .iter()
        .zip(&in_schema)
        .filter_map(|(p, o)| match o {
            Ok(o) if is_perfect(o, &p.ground_truth.path()) => Some((p, o)),
            _ => None,
        })
        .collect();
    if !wants(Experiment::InSchema) {
        for (p, o) in points.iter().zip(&in_schema) {
            if let Err(message) = o {
                failures.push(PointFailure {
                    point_id: p.id.clone(),
                    stage: "in-schema extraction".into(),
                    message: message.clone(),
                });
            }
        }
    }
    if wants(Experiment::Maintenance) {
        report.maintenance = Some(maintenance_section(gateway, taxonomy, &schema, &gated, config, &mut failures));
    }
    if wants(Experiment::Retrieval) {
        report.retrieval = Some(retrieval_section(gateway, taxonomy, &gated, config, &mut failures));
    }
    report.failures = failures;
    report
}
