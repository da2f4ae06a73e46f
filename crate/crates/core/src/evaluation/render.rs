use std::fmt::Write;

use thiserror::Error;

use super::{EvalReport, Experiment, ExtractionSection, MaintenanceSection, RetrievalSection};
use crate::extraction::CountBucket;
use crate::maintenance::MaintenanceAction;
use crate::taxonomy::Level;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    PlainTable,
    Json,
    /// Row-normalized confusion matrices of the extraction experiments.
    ConfusionGrid,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("the report has no {0} section")]
    MissingSection(&'static str),
    #[error("serializing report: {0}")]
    Json(#[from] serde_json::Error),
}

fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

fn bucket_name(b: CountBucket) -> &'static str {
    match b {
        CountBucket::NoExtraction => "no extraction",
        CountBucket::OnePreference => "one preference",
        CountBucket::MultiPreference => "multiple preferences",
    }
}

fn extraction_table(out: &mut String, title: &str, s: &ExtractionSection) {
    let _ = writeln!(out, "== {title} extraction ({} points) ==", s.evaluated);
    for (b, n) in &s.histogram {
        let _ = writeln!(out, "  {:<22} {:>5}  {:>7}", bucket_name(*b), n, pct(super::rate(*n, s.evaluated)));
    }
    let _ = writeln!(out, "  {:<22} {:>5}  {:>7}", "correct", s.correct, pct(s.correct_rate));
    let _ = writeln!(out, "  {:<22} {:>5}  {:>7}", "valid outputs", s.valid_outputs, pct(s.validity_rate));
    let _ = writeln!(
        out,
        "  {:<22} {:>5}  (spurious {}, duplicate {})",
        "over-extraction", s.over_extraction.points, s.over_extraction.spurious, s.over_extraction.duplicate
    );
    if s.mode == crate::extraction::ExperimentMode::OutOfSchema {
        let _ = writeln!(out, "  {:<22} {:>5}", "spillover", s.spillover);
    }
    let _ = writeln!(out, "  {:<22} {:>5}", "sentinel records", s.discarded_sentinels);
    if let Some(levels) = &s.per_level {
        let _ = writeln!(out, "  {:<8} {:>5} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9}", "level", "cats", "tp", "fp", "fn", "precision", "recall", "f1");
        for (level, m) in levels {
            let _ = writeln!(
                out,
                "  {:<8} {:>5} {:>5} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.4}",
                level.as_str(),
                m.categories,
                m.counts.tp,
                m.counts.fp,
                m.counts.fn_,
                m.precision,
                m.recall,
                m.f1
            );
        }
    }
}

fn maintenance_table(out: &mut String, s: &MaintenanceSection) {
    let _ = writeln!(out, "== maintenance ({} gated points, {} decisions) ==", s.gated_points, s.decisions);
    let _ = writeln!(out, "  {:<4} {:<10} {:<8} {:>5} {:>5} {:>8} {:>8} {:>8}", "type", "utterance", "expected", "n", "skip", "pass", "update", "append");
    for r in &s.rows {
        let cell = |a: MaintenanceAction| match &r.distribution {
            Some(d) => pct(d[&a]),
            None => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "  {:<4} {:<10} {:<8} {:>5} {:>5} {:>8} {:>8} {:>8}",
            r.detail_type.as_str(),
            r.utterance.as_str(),
            r.expected.as_str(),
            r.evaluated,
            r.skipped,
            cell(MaintenanceAction::Pass),
            cell(MaintenanceAction::Update),
            cell(MaintenanceAction::Append)
        );
    }
    let _ = writeln!(out, "  {:<28} {:>8}", "accuracy", pct(s.raw_accuracy));
    let _ = writeln!(out, "  {:<28} {:>8}", "end-state accuracy", pct(s.end_state_accuracy));
    let _ = writeln!(out, "  {:<28} {:>8}", "redundancy avoided", pct(s.redundancy_reduction));
    let _ = writeln!(out, "  {:<28} {:>8}", "contradictions resolved", pct(s.contradiction_reduction));
    let _ = writeln!(out, "  {:<28} {:>8}", "new values lost by pass", pct(s.lost_by_pass));
    let _ = writeln!(out, "  {:<28} {:>8}", "MP wrong appends", pct(s.multiple_wrong_append));
    let _ = writeln!(out, "  {:<28} {:>8}", "protocol violations", s.protocol_violations);
}

fn retrieval_table(out: &mut String, s: &RetrievalSection) {
    let _ = writeln!(
        out,
        "== retrieval ({} queries, {} users, avg n {:.2}, avg store {:.2}) ==",
        s.queries, s.users, s.avg_n, s.avg_store_size
    );
    let offsets: Vec<&String> = s.accuracy.values().next().map(|m| m.keys().collect()).unwrap_or_default();
    let _ = write!(out, "  {:<14}", "embedding");
    for o in &offsets {
        let _ = write!(out, " {:>8}", format!("top-{o}"));
    }
    out.push('\n');
    for (mode, acc) in &s.accuracy {
        let _ = write!(out, "  {:<14}", mode.as_str());
        for o in &offsets {
            let _ = write!(out, " {:>8}", pct(acc[*o]));
        }
        out.push('\n');
    }
}

/// Columns are numbered; row `i` and column `i` name the same label.
fn confusion_grid(out: &mut String, title: &str, s: &ExtractionSection) {
    for level in Level::ALL {
        let Some(cm) = s.confusion.get(&level) else { continue };
        let norm = cm.normalized();
        let _ = writeln!(out, "== {title} confusion, {} level ({} instances) ==", level.as_str(), cm.total());
        let heads: Vec<String> = (0..cm.columns.len())
            .map(|i| if i + 1 == cm.columns.len() { cm.columns[i].clone() } else { i.to_string() })
            .collect();
        let names: Vec<String> = cm
            .rows
            .iter()
            .enumerate()
            .map(|(i, l)| if i + 1 == cm.rows.len() { l.clone() } else { format!("{i:>2} {l}") })
            .collect();
        let width = names.iter().map(|l| l.len()).max().unwrap_or(3);
        let _ = write!(out, "{:<width$}", "");
        for h in &heads {
            let _ = write!(out, " {h:>4}");
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&norm) {
            let _ = write!(out, "{name:<width$}");
            for v in row {
                if *v == 0.0 {
                    let _ = write!(out, " {:>4}", ".");
                } else {
                    let _ = write!(out, " {v:>4.2}");
                }
            }
            out.push('\n');
        }
    }
}

/// Renders the selected experiments' sections. Fails if one was not run.
pub fn render_report(report: &EvalReport, sections: &[Experiment], format: ReportFormat) -> Result<String, RenderError> {
    for e in sections {
        let present = match e {
            Experiment::InSchema => report.in_schema.is_some(),
            Experiment::OutOfSchema => report.out_of_schema.is_some(),
            Experiment::Maintenance => report.maintenance.is_some(),
            Experiment::Retrieval => report.retrieval.is_some(),
        };
        if !present {
            return Err(RenderError::MissingSection(e.as_str()));
        }
    }
    let wants = |e: Experiment| sections.contains(&e);
    let mut out = String::new();
    match format {
        ReportFormat::Json => {
            let mut selected = report.clone();
            if !wants(Experiment::InSchema) {
                selected.in_schema = None;
            }
            if !wants(Experiment::OutOfSchema) {
                selected.out_of_schema = None;
            }
            if !wants(Experiment::Maintenance) {
                selected.maintenance = None;
            }
            if !wants(Experiment::Retrieval) {
                selected.retrieval = None;
            }
            out = serde_json::to_string_pretty(&selected)?;
            out.push('\n');
        }
        ReportFormat::PlainTable => {
            let _ = writeln!(
                out,
                "backend {}, taxonomy {}, {} points, {} failures",
                report.backend,
                report.taxonomy_version,
                report.points,
                report.failures.len()
            );
            for e in Experiment::ALL.into_iter().filter(|e| wants(*e)) {
                match e {
                    Experiment::InSchema => extraction_table(&mut out, "in-schema", report.in_schema.as_ref().unwrap()),
                    Experiment::OutOfSchema => {
                        extraction_table(&mut out, "out-of-schema", report.out_of_schema.as_ref().unwrap())
                    }
                    Experiment::Maintenance => maintenance_table(&mut out, report.maintenance.as_ref().unwrap()),
                    Experiment::Retrieval => retrieval_table(&mut out, report.retrieval.as_ref().unwrap()),
                }
            }
            for f in &report.failures {
                let _ = writeln!(out, "failed {} during {}: {}", f.point_id, f.stage, f.message);
            }
        }
        ReportFormat::ConfusionGrid => {
            if let Some(s) = report.in_schema.as_ref().filter(|_| wants(Experiment::InSchema)) {
                confusion_grid(&mut out, "in-schema", s);
            }
            if let Some(s) = report.out_of_schema.as_ref().filter(|_| wants(Experiment::OutOfSchema)) {
                confusion_grid(&mut out, "out-of-schema", s);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{fixture, fixture_labels, mock_script};
    use crate::evaluation::{run_experiments, EvalConfig};
    use crate::gateway::MockGateway;
    use crate::taxonomy::CategoryTaxonomy;

    fn report(experiments: &[Experiment]) -> EvalReport {
        let t = CategoryTaxonomy::bundled();
        let points = fixture(&t);
        let gw = MockGateway::new(mock_script(&points, &fixture_labels()));
        run_experiments(&gw, &t, &points, experiments, "mock", &EvalConfig::default())
    }

    #[test]
    fn missing_sections_are_an_error() {
        let r = report(&[Experiment::Retrieval]);
        assert!(matches!(
            render_report(&r, &[Experiment::Maintenance], ReportFormat::PlainTable),
            Err(RenderError::MissingSection("maintenance"))
        ));
        assert!(render_report(&r, &[Experiment::Retrieval], ReportFormat::PlainTable).is_ok());
    }

    #[test]
    fn json_round_trips_to_the_same_value() {
        let r = report(&Experiment::ALL);
        let text = render_report(&r, &Experiment::ALL, ReportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["in_schema"]["histogram"]["one_preference"], 20);
        assert_eq!(v["retrieval"]["accuracy"]["enriched"].as_object().unwrap().len(), 3);
        assert_eq!(text, render_report(&r, &Experiment::ALL, ReportFormat::Json).unwrap());
    }

    #[test]
    fn grid_rows_sum_to_one_or_zero() {
        let r = report(&[Experiment::InSchema]);
        let text = render_report(&r, &[Experiment::InSchema], ReportFormat::ConfusionGrid).unwrap();
        assert!(text.contains("detail level (20 instances)"));
        assert!(text.lines().any(|l| l.starts_with("NTL")));
    }
}
