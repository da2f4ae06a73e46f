//! Counting rules shared by the experiments.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{CategoryPath, Level};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl LevelCounts {
    pub fn add(&mut self, other: LevelCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, computed from the counts so
    /// that e.g. (3, 1, 2) gives exactly 2/3.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Counts for one extraction at one level.
///
/// Each candidate is one decision. The first candidate agreeing with the
/// ground truth at `level` is a true positive; every other candidate is a
/// false positive. An unmatched ground truth is a false negative.
pub fn point_counts(ground_truth: Option<&CategoryPath>, predicted: &[CategoryPath], level: Level) -> LevelCounts {
    let mut counts = LevelCounts::default();
    let mut matched = false;
    for p in predicted {
        if !matched && ground_truth.is_some_and(|gt| gt.same_at(p, level)) {
            matched = true;
            counts.tp += 1;
        } else {
            counts.fp += 1;
        }
    }
    if ground_truth.is_some() && !matched {
        counts.fn_ += 1;
    }
    counts
}

pub fn micro_counts<'a, I>(points: I, level: Level) -> LevelCounts
where
    I: IntoIterator<Item = (Option<&'a CategoryPath>, &'a [CategoryPath])>,
{
    let mut total = LevelCounts::default();
    for (gt, predicted) in points {
        total.add(point_counts(gt, predicted, level));
    }
    total
}

pub const NO_TRUE_LABEL: &str = "NTL";
pub const NO_PREDICTED_LABEL: &str = "NPL";

/// Multi-label confusion matrix with an extra "no true label" row and
/// "no predicted label" column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub level: Level,
    /// Row labels; the last is [`NO_TRUE_LABEL`].
    pub rows: Vec<String>,
    /// Column labels; the last is [`NO_PREDICTED_LABEL`].
    pub columns: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Builds the matrix over the labels that occur, ordered as in
    /// `label_order`.
    ///
    /// For each instance with true set T and predicted set P: labels in
    /// both count on the diagonal; each missed true label pairs with each
    /// extra predicted label, or with NPL when nothing extra was
    /// predicted; extra predictions with all true labels found pair with
    /// every true label, or with NTL when T is empty.
    pub fn build(level: Level, instances: &[(BTreeSet<String>, BTreeSet<String>)], label_order: &[String]) -> Self {
        let used: BTreeSet<&String> = instances.iter().flat_map(|(t, p)| t.iter().chain(p)).collect();
        let labels: Vec<String> = label_order.iter().filter(|l| used.contains(l)).cloned().collect();
        let index = |l: &str| labels.iter().position(|x| x == l).expect("label in order");
        let n = labels.len();
        let mut counts = vec![vec![0u64; n + 1]; n + 1];
        for (t, p) in instances {
            let missed: Vec<&String> = t.difference(p).collect();
            let extra: Vec<&String> = p.difference(t).collect();
            for hit in t.intersection(p) {
                counts[index(hit)][index(hit)] += 1;
            }
            if t.is_empty() {
                if p.is_empty() {
                    counts[n][n] += 1;
                }
                for e in &extra {
                    counts[n][index(e)] += 1;
                }
                continue;
            }
            if missed.is_empty() {
                for e in &extra {
                    for tl in t {
                        counts[index(tl)][index(e)] += 1;
                    }
                }
            } else if extra.is_empty() {
                for m in &missed {
                    counts[index(m)][n] += 1;
                }
            } else {
                for m in &missed {
                    for e in &extra {
                        counts[index(m)][index(e)] += 1;
                    }
                }
            }
        }
        let mut rows = labels.clone();
        rows.push(NO_TRUE_LABEL.into());
        let mut columns = labels;
        columns.push(NO_PREDICTED_LABEL.into());
        Self { level, rows, columns, counts }
    }

    /// Each non-empty row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter().map(|&c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 }).collect()
            })
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(main: &str, sub: &str, detail: &str) -> CategoryPath {
        CategoryPath::new(main, sub, detail)
    }

    #[test]
    fn hand_counted_example() {
        let gt = p("a", "s", "d");
        let wrong = p("a", "s", "e");
        // three hits, one extra, two misses at detail level
        let points: Vec<(Option<CategoryPath>, Vec<CategoryPath>)> = vec![
            (Some(gt.clone()), vec![gt.clone()]),
            (Some(gt.clone()), vec![gt.clone(), wrong.clone()]),
            (Some(gt.clone()), vec![gt.clone()]),
            (Some(gt.clone()), vec![]),
            (Some(gt.clone()), vec![]),
        ];
        let c = micro_counts(points.iter().map(|(g, v)| (g.as_ref(), v.as_slice())), Level::Detail);
        assert_eq!((c.tp, c.fp, c.fn_), (3, 1, 2));
        assert_eq!(c.precision(), 0.75);
        assert_eq!(c.recall(), 0.6);
        assert_eq!(c.f1(), 2.0 / 3.0);
        // at main level the extra candidate is a second match, so still a false positive
        let c = micro_counts(points.iter().map(|(g, v)| (g.as_ref(), v.as_slice())), Level::Main);
        assert_eq!((c.tp, c.fp, c.fn_), (3, 1, 2));
    }

    #[test]
    fn empty_counts_are_zero() {
        let c = LevelCounts::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    fn set(labels: &[&str]) -> BTreeSet<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn confusion_cases() {
        let order: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let m = ConfusionMatrix::build(
            Level::Sub,
            &[
                (set(&["x"]), set(&["x"])),
                (set(&["x"]), set(&["x", "y"])),
                (set(&["y"]), set(&[])),
                (set(&["y"]), set(&["z"])),
                (set(&[]), set(&["z"])),
                (set(&[]), set(&[])),
            ],
            &order,
        );
        assert_eq!(m.rows, ["x", "y", "z", "NTL"]);
        assert_eq!(m.columns, ["x", "y", "z", "NPL"]);
        assert_eq!(
            m.counts,
            vec![vec![2, 1, 0, 0], vec![0, 0, 1, 1], vec![0, 0, 0, 0], vec![0, 0, 1, 1]]
        );
        for (row, counts) in m.normalized().iter().zip(&m.counts) {
            let s: f64 = row.iter().sum();
            if counts.iter().sum::<u64>() > 0 {
                assert!((s - 1.0).abs() < 1e-9);
            } else {
                assert_eq!(s, 0.0);
            }
        }
    }

    fn arb_path() -> impl Strategy<Value = CategoryPath> {
        (0u8..2, 0u8..2, 0u8..3).prop_map(|(m, s, d)| p(&format!("m{m}"), &format!("s{m}{s}"), &format!("d{m}{s}{d}")))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // independent count: per point, at most one hit; everything else is a false alarm
        #[test]
        fn micro_matches_brute_force(points in prop::collection::vec((prop::option::of(arb_path()), prop::collection::vec(arb_path(), 0..4)), 0..30)) {
            for level in Level::ALL {
                let got = micro_counts(points.iter().map(|(g, v)| (g.as_ref(), v.as_slice())), level);
                let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                for (gt, pred) in &points {
                    let hits = pred.iter().filter(|c| gt.as_ref().is_some_and(|g| g.label(level) == c.label(level))).count() as u64;
                    tp += hits.min(1);
                    fp += pred.len() as u64 - hits.min(1);
                    fn_ += u64::from(gt.is_some() && hits == 0);
                }
                prop_assert_eq!((got.tp, got.fp, got.fn_), (tp, fp, fn_));
                let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                prop_assert!((got.precision() - p).abs() <= 1e-12);
                prop_assert!((got.recall() - r).abs() <= 1e-12);
                prop_assert!((got.f1() - f).abs() <= 1e-12);
            }
        }
    }
}
