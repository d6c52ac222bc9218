//! Word-level recognition metrics and alignment-based per-class F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grapheme::{Grapheme, GraphemeInventory, MinorMajor};

/// Column order of the one-line summary.
pub const SUMMARY_COLUMNS: [&str; 6] = ["NED", "CRR", "WRR", "F1-all", "F1-minor", "F1-major"];

/// A `(prediction, label)` pair of grapheme sequences.
pub type WordPair = (Vec<Grapheme>, Vec<Grapheme>);

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character recognition rate in percent, clamped at 0.
pub fn crr<T: PartialEq>(pred: &[T], label: &[T]) -> Result<f64> {
    if label.is_empty() {
        return Err(Error::EmptyLabel);
    }
    let n = label.len();
    let correct = n - edit_distance(pred, label).min(n);
    Ok(100.0 * correct as f64 / n as f64)
}

/// Percentage of exact sequence matches.
pub fn wrr<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let exact = pairs.iter().filter(|(p, l)| p == l).count();
    Ok(100.0 * exact as f64 / pairs.len() as f64)
}

/// Total edit distance and its ratio to total label length (capped at 1).
pub fn ned<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<(u64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let total: u64 = pairs.iter().map(|(p, l)| edit_distance(p, l) as u64).sum();
    let length: u64 = pairs.iter().map(|(_, l)| l.len() as u64).sum();
    let normalized = match (total, length) {
        (0, _) => 0.0,
        (_, 0) => 1.0,
        (t, n) => (t as f64 / n as f64).min(1.0),
    };
    Ok((total, normalized))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    /// Label symbol missing from the prediction.
    Delete,
    /// Prediction symbol with no label counterpart.
    Insert,
}

/// One minimal-cost alignment of `pred` against `label`, in sequence order.
/// Each step is `(op, label index, prediction index)`. Traceback from the end
/// prefers match, then substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(pred: &[T], label: &[T]) -> Vec<(EditOp, Option<usize>, Option<usize>)> {
    let (n, m) = (label.len(), pred.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(label[i - 1] != pred[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && label[i - 1] == pred[j - 1] && d[i][j] == d[i - 1][j - 1] {
            ops.push((EditOp::Match, Some(i - 1), Some(j - 1)));
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            ops.push((EditOp::Substitute, Some(i - 1), Some(j - 1)));
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push((EditOp::Delete, Some(i - 1), None));
            i -= 1;
        } else {
            ops.push((EditOp::Insert, None, Some(j - 1)));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    /// `(precision, recall, f1)` in percent, `0/0` read as 0.
    pub fn scores(&self) -> (f64, f64, f64) {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (100.0 * p, 100.0 * r, 100.0 * f1)
    }
}

/// TP/FP/FN per grapheme from the alignment of every pair.
pub fn class_counts(pairs: &[WordPair]) -> BTreeMap<Grapheme, ClassCounts> {
    let mut counts: BTreeMap<Grapheme, ClassCounts> = BTreeMap::new();
    for (pred, label) in pairs {
        for (op, li, pi) in align(pred, label) {
            match op {
                EditOp::Match => counts.entry(label[li.expect("label side")].clone()).or_default().tp += 1,
                EditOp::Substitute => {
                    counts.entry(label[li.expect("label side")].clone()).or_default().fn_ += 1;
                    counts.entry(pred[pi.expect("prediction side")].clone()).or_default().fp += 1;
                }
                EditOp::Delete => counts.entry(label[li.expect("label side")].clone()).or_default().fn_ += 1,
                EditOp::Insert => counts.entry(pred[pi.expect("prediction side")].clone()).or_default().fp += 1,
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub grapheme: Grapheme,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences in the evaluation labels.
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub minor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    pub all: f64,
    pub minor: f64,
    pub major: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Per-class scores and macro means over every class seen in labels or
/// predictions. Classes outside `partition.major` count as minor.
pub fn per_class_f1(pairs: &[WordPair], partition: &MinorMajor) -> (Vec<ClassScore>, MacroF1) {
    let counts = class_counts(pairs);
    let mut scores = Vec::with_capacity(counts.len());
    let (mut all, mut minor, mut major) = (Vec::new(), Vec::new(), Vec::new());
    for (g, c) in counts {
        let (precision, recall, f1) = c.scores();
        let is_minor = !partition.major.contains(&g);
        all.push(f1);
        if is_minor {
            minor.push(f1);
        } else {
            major.push(f1);
        }
        scores.push(ClassScore {
            grapheme: g,
            precision,
            recall,
            f1,
            support: c.tp + c.fn_,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            minor: is_minor,
        });
    }
    let macro_f1 = MacroF1 {
        all: mean(&all),
        minor: mean(&minor),
        major: mean(&major),
    };
    (scores, macro_f1)
}

/// Every table column for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub words: usize,
    pub ned_total: u64,
    pub ned_normalized: f64,
    /// Mean per-word CRR.
    pub crr: f64,
    pub wrr: f64,
    pub f1_all: f64,
    pub f1_minor: f64,
    pub f1_major: f64,
    /// Label graphemes unknown to the training inventory, with counts.
    pub unknown_graphemes: BTreeMap<Grapheme, u64>,
    pub per_class: Vec<ClassScore>,
}

impl EvalReport {
    /// The minor/major split comes from the supports of `training`.
    pub fn compute(pairs: &[WordPair], training: &GraphemeInventory) -> Result<Self> {
        let partition = training.split_minor_major()?;
        let (ned_total, ned_normalized) = ned(pairs)?;
        let wrr = wrr(pairs)?;
        let crr = pairs
            .iter()
            .map(|(p, l)| crr(p, l))
            .collect::<Result<Vec<_>>>()
            .map(|v| mean(&v))?;
        let (per_class, f1) = per_class_f1(pairs, &partition);
        let mut unknown_graphemes = BTreeMap::new();
        for g in pairs.iter().flat_map(|(_, l)| l) {
            if !training.contains(g) {
                *unknown_graphemes.entry(g.clone()).or_insert(0) += 1;
            }
        }
        Ok(Self {
            words: pairs.len(),
            ned_total,
            ned_normalized,
            crr,
            wrr,
            f1_all: f1.all,
            f1_minor: f1.minor,
            f1_major: f1.major,
            unknown_graphemes,
            per_class,
        })
    }

    /// Values in [`SUMMARY_COLUMNS`] order.
    pub fn summary_values(&self) -> [String; 6] {
        [
            self.ned_total.to_string(),
            format!("{:.2}", self.crr),
            format!("{:.2}", self.wrr),
            format!("{:.2}", self.f1_all),
            format!("{:.2}", self.f1_minor),
            format!("{:.2}", self.f1_major),
        ]
    }

    pub fn summary_tsv(&self) -> String {
        format!("{}\n{}\n", SUMMARY_COLUMNS.join("\t"), self.summary_values().join("\t"))
    }

    pub fn summary_markdown(&self) -> String {
        format!(
            "| {} |\n|{}\n| {} |\n",
            SUMMARY_COLUMNS.join(" | "),
            "---|".repeat(SUMMARY_COLUMNS.len()),
            self.summary_values().join(" | ")
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grapheme::extract_graphemes;
    use std::collections::BTreeSet;

    fn g(s: &str) -> Vec<Grapheme> {
        s.chars().map(|c| Grapheme::new(c.to_string()).unwrap()).collect()
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&g("abc"), &g("abc")), 0);
        assert_eq!(edit_distance(&g(""), &g("abcd")), 4);
        assert_eq!(edit_distance(&g("kitten"), &g("sitting")), 3);
    }

    #[test]
    fn crr_anchors() {
        let label = extract_graphemes("ধরনের");
        assert_eq!(label.len(), 5);
        let mut pred = label.clone();
        pred[4] = Grapheme::new("ল").unwrap();
        assert_eq!(crr(&pred, &label).unwrap(), 80.0);
        assert_eq!(crr(&label, &label).unwrap(), 100.0);
        assert_eq!(crr(&g("b"), &g("bcdefghijk")).unwrap(), 10.0);
        assert_eq!(crr(&g("zzzzzzzzzzzzz"), &g("ab")).unwrap(), 0.0);
        assert!(matches!(crr(&g("a"), &g("")), Err(Error::EmptyLabel)));
    }

    #[test]
    fn wrr_and_ned() {
        let same = vec![(g("ab"), g("ab")), (g("c"), g("c"))];
        assert_eq!(wrr(&same).unwrap(), 100.0);
        assert_eq!(ned(&same).unwrap(), (0, 0.0));
        let half = vec![(g("ab"), g("ab")), (g("x"), g("c"))];
        assert_eq!(wrr(&half).unwrap(), 50.0);
        assert_eq!(wrr(&[(g("x"), g("c"))]).unwrap(), 0.0);
        assert_eq!(ned(&[(g("abc"), g("abcxyz"))]).unwrap(), (3, 0.5));
        assert!(matches!(wrr::<Grapheme>(&[]), Err(Error::EmptyPairs)));
        assert!(matches!(ned::<Grapheme>(&[]), Err(Error::EmptyPairs)));
    }

    #[test]
    fn alignment_tie_break() {
        // "ab" vs "ba": distance 2; substitutions are preferred over a
        // delete/insert pair.
        let ops: Vec<EditOp> = align(&g("ba"), &g("ab")).into_iter().map(|o| o.0).collect();
        assert_eq!(ops, [EditOp::Substitute, EditOp::Substitute]);
        let ops: Vec<EditOp> = align(&g("a"), &g("ab")).into_iter().map(|o| o.0).collect();
        assert_eq!(ops, [EditOp::Match, EditOp::Delete]);
        let ops: Vec<EditOp> = align(&g("abc"), &g("ab")).into_iter().map(|o| o.0).collect();
        assert_eq!(ops, [EditOp::Match, EditOp::Match, EditOp::Insert]);
    }

    #[test]
    fn per_class_hand_count() {
        // Pair 1 exact "ab"; pair 2 predicts "ac" for label "ab".
        let pairs = vec![(g("ab"), g("ab")), (g("ac"), g("ab"))];
        let counts = class_counts(&pairs);
        let a = counts[&g("a")[0]];
        let b = counts[&g("b")[0]];
        let c = counts[&g("c")[0]];
        assert_eq!((a.tp, a.fp, a.fn_), (2, 0, 0));
        assert_eq!((b.tp, b.fp, b.fn_), (1, 0, 1));
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 0));
        let (p, r, f) = b.scores();
        assert_eq!((p, r), (100.0, 50.0));
        assert!((f - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.scores(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn report_partitions_classes() {
        let training = GraphemeInventory::from_counts(
            [
                (g("a")[0].clone(), 100),
                (g("b")[0].clone(), 50),
                (g("c")[0].clone(), 5),
            ],
            "train",
        );
        let pairs = vec![(g("ab"), g("ab")), (g("ab"), g("ac")), (g("a"), g("ad"))];
        let r = EvalReport::compute(&pairs, &training).unwrap();
        assert_eq!(r.words, 3);
        assert_eq!(r.ned_total, 2);
        assert_eq!(r.unknown_graphemes.get(&g("d")[0]), Some(&1));
        let minor: BTreeSet<_> = r
            .per_class
            .iter()
            .filter(|c| c.minor)
            .map(|c| c.grapheme.to_string())
            .collect();
        assert_eq!(minor, BTreeSet::from(["c".to_string(), "d".to_string()]));
        assert_eq!(r.f1_minor, 0.0);
        let ab: Vec<f64> = r.per_class.iter().filter(|c| !c.minor).map(|c| c.f1).collect();
        assert!((r.f1_major - (ab[0] + ab[1]) / 2.0).abs() < 1e-12);
        let tsv = r.summary_tsv();
        assert!(tsv.starts_with("NED\tCRR\tWRR\tF1-all\tF1-minor\tF1-major\n"));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn all_exact_scores_hundred() {
        let pairs = vec![(g("abc"), g("abc")), (g("ca"), g("ca"))];
        let (scores, f1) = per_class_f1(
            &pairs,
            &MinorMajor {
                minor: BTreeSet::new(),
                major: g("abc").into_iter().collect(),
            },
        );
        assert!(scores.iter().all(|s| s.f1 == 100.0));
        assert_eq!(f1.all, 100.0);
        assert_eq!(f1.minor, 0.0);
    }
}
