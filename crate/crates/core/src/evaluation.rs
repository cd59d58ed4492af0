//! Patch-level and slide-level classification metrics.

use serde::{Deserialize, Serialize};

use crate::classifier::Arity;
use crate::decision::{PatchClass, Verdict};
use crate::error::{Error, Result};
use crate::label::TissueLabel;

/// Counts with rows = truth and columns = prediction, in class order.
/// Unseen predictions are kept out of the matrix and tallied separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub unseen: u64,
}

impl ConfusionMatrix {
    pub fn new(arity: Arity) -> Self {
        let k = arity.width();
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
            unseen: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, pred: PatchClass, truth: TissueLabel) -> Result<()> {
        let k = self.k();
        if truth.index() >= k {
            return Err(Error::InvalidArgument(format!(
                "truth label {truth} outside a {k}-class matrix"
            )));
        }
        match pred.label() {
            None => self.unseen += 1,
            Some(p) if p.index() >= k => {
                return Err(Error::InvalidArgument(format!(
                    "prediction {p} outside a {k}-class matrix"
                )));
            }
            Some(p) => self.counts[truth.index()][p.index()] += 1,
        }
        Ok(())
    }

    /// Element-wise sum; matrices must have the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k() != self.k() {
            return Err(Error::LengthMismatch {
                left: self.k(),
                right: other.k(),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.unseen += other.unseen;
        Ok(())
    }

    /// Evaluated (non-Unseen) pairs.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Share of predictions that were not Unseen; `None` with no input at all.
    pub fn coverage(&self) -> Option<f64> {
        let all = self.total() + self.unseen;
        (all > 0).then(|| self.total() as f64 / all as f64)
    }

    /// One-vs-rest counts `(tp, fn, fp, tn)` for class `c`.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let row: u64 = self.counts[c].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[c]).sum();
        let (fn_, fp) = (row - tp, col - tp);
        (tp, fn_, fp, self.total() - tp - fn_ - fp)
    }

    /// Builds a binary matrix directly from outcome counts (malignant positive).
    pub fn from_binary(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix {
            counts: vec![vec![tn, fp], vec![fn_, tp]],
            unseen: 0,
        }
    }
}

pub fn confusion(preds: &[PatchClass], truths: &[TissueLabel], arity: Arity) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(arity);
    for (&p, &t) in preds.iter().zip(truths) {
        cm.add(p, t)?;
    }
    Ok(cm)
}

/// Slide verdicts as a binary matrix with melanoma as the positive class.
pub fn slide_confusion(preds: &[Verdict], truths: &[Verdict]) -> Result<ConfusionMatrix> {
    let as_class = |v: Verdict| match v {
        Verdict::Melanoma => TissueLabel::Malignant,
        Verdict::BenignNevus => TissueLabel::Benign,
    };
    let p: Vec<PatchClass> = preds.iter().map(|&v| as_class(v).into()).collect();
    let t: Vec<TissueLabel> = truths.iter().map(|&v| as_class(v)).collect();
    confusion(&p, &t, Arity::Binary)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: TissueLabel,
    pub support: u64,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

/// Undefined ratios (zero denominators) are `None`, serialized as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    pub unseen: u64,
    pub coverage: Option<f64>,
    pub accuracy: f64,
    /// Malignant-vs-rest figures.
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.k())
        .map(|c| {
            let (tp, fn_, fp, tn) = cm.one_vs_rest(c);
            let precision = ratio(tp, tp + fp);
            let sensitivity = ratio(tp, tp + fn_);
            ClassMetrics {
                label: TissueLabel::from_index(c).expect("k <= 3"),
                support: tp + fn_,
                precision,
                sensitivity,
                specificity: ratio(tn, tn + fp),
                f1: f1(precision, sensitivity),
            }
        })
        .collect();
    let m = &per_class[TissueLabel::Malignant.index()];
    Ok(MetricsReport {
        total,
        unseen: cm.unseen,
        coverage: cm.coverage(),
        accuracy: cm.trace() as f64 / total as f64,
        precision: m.precision,
        sensitivity: m.sensitivity,
        specificity: m.specificity,
        f1: m.f1,
        per_class: per_class.clone(),
    })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "acc_pct,f1,sensitivity,specificity";

    /// One CSV row; absent values are left empty.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        format!(
            "{:.2},{},{},{}",
            self.accuracy * 100.0,
            opt(self.f1),
            opt(self.sensitivity),
            opt(self.specificity)
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_counts() {
        let r = metrics(&ConfusionMatrix::from_binary(90, 10, 5, 95)).unwrap();
        assert!((r.sensitivity.unwrap() - 0.9).abs() < 1e-12);
        assert!((r.specificity.unwrap() - 0.95).abs() < 1e-12);
        assert!((r.accuracy - 0.925).abs() < 1e-12);
        assert!((r.f1.unwrap() - 0.9231).abs() < 1e-4);
        assert_eq!(
            r.to_csv(),
            "acc_pct,f1,sensitivity,specificity\n92.50,0.9231,0.9000,0.9500\n"
        );
    }

    #[test]
    fn zero_denominators_are_absent() {
        let r = metrics(&ConfusionMatrix::from_binary(0, 5, 0, 5)).unwrap();
        assert_eq!(r.precision, None);
        assert_eq!(r.f1, None);
        assert_eq!(r.sensitivity, Some(0.0));
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["precision"].is_null());
        assert!(metrics(&ConfusionMatrix::new(Arity::Binary)).is_err());
    }

    #[test]
    fn diagonal_and_unseen() {
        let labels: Vec<TissueLabel> = (0..10).map(|i| TissueLabel::from_index(i % 3).unwrap()).collect();
        let preds: Vec<PatchClass> = labels.iter().map(|&l| l.into()).collect();
        let cm = confusion(&preds, &labels, Arity::Multiclass).unwrap();
        assert_eq!((cm.trace(), cm.total()), (10, 10));
        assert_eq!(metrics(&cm).unwrap().accuracy, 1.0);

        let cm = confusion(&[PatchClass::Unseen; 4], &[TissueLabel::Benign; 4], Arity::Binary).unwrap();
        assert_eq!((cm.total(), cm.coverage()), (0, Some(0.0)));

        let cm = confusion(&[PatchClass::Benign], &[TissueLabel::Malignant], Arity::Binary).unwrap();
        assert_eq!(cm.one_vs_rest(1), (0, 1, 0, 0));
        assert!(confusion(&[PatchClass::Benign], &[], Arity::Binary).is_err());
        assert!(confusion(&[PatchClass::Normal], &[TissueLabel::Benign], Arity::Binary).is_err());
    }

    #[test]
    fn slide_level() {
        let cm = slide_confusion(
            &[Verdict::Melanoma, Verdict::BenignNevus, Verdict::Melanoma],
            &[Verdict::Melanoma, Verdict::BenignNevus, Verdict::BenignNevus],
        )
        .unwrap();
        assert_eq!(cm.one_vs_rest(1), (1, 0, 1, 1));
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(tp in 0u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 0u64..50) {
            prop_assume!(tp + fn_ + fp + tn > 0);
            let r = metrics(&ConfusionMatrix::from_binary(tp, fn_, fp, tn)).unwrap();
            for v in [Some(r.accuracy), r.precision, r.sensitivity, r.specificity, r.f1].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let perfect = r.f1 == Some(1.0);
            prop_assert_eq!(perfect, fp == 0 && fn_ == 0 && tp > 0);
        }

        #[test]
        fn weighted_recall_equals_accuracy(pairs in prop::collection::vec((0usize..3, 0usize..4), 1..300)) {
            let truths: Vec<TissueLabel> = pairs.iter().map(|p| TissueLabel::from_index(p.0).unwrap()).collect();
            let preds: Vec<PatchClass> = pairs
                .iter()
                .map(|p| TissueLabel::from_index(p.1).map_or(PatchClass::Unseen, PatchClass::from))
                .collect();
            let cm = confusion(&preds, &truths, Arity::Multiclass).unwrap();
            prop_assume!(cm.total() > 0);
            let r = metrics(&cm).unwrap();
            let weighted: f64 = r
                .per_class
                .iter()
                .map(|c| c.sensitivity.unwrap_or(0.0) * c.support as f64)
                .sum::<f64>()
                / cm.total() as f64;
            prop_assert!((weighted - r.accuracy).abs() < 1e-9);
        }

        #[test]
        fn merge_is_additive(a in prop::collection::vec((0usize..2, 0usize..3), 0..50), b in prop::collection::vec((0usize..2, 0usize..3), 0..50)) {
            let build = |v: &[(usize, usize)]| {
                let t: Vec<_> = v.iter().map(|p| TissueLabel::from_index(p.0).unwrap()).collect();
                let p: Vec<_> = v.iter().map(|p| TissueLabel::from_index(p.1).filter(|l| l.index() < 2).map_or(PatchClass::Unseen, PatchClass::from)).collect();
                (p, t)
            };
            let (pa, ta) = build(&a);
            let (pb, tb) = build(&b);
            let mut m = confusion(&pa, &ta, Arity::Binary).unwrap();
            m.merge(&confusion(&pb, &tb, Arity::Binary).unwrap()).unwrap();
            let all_p: Vec<_> = pa.iter().chain(&pb).copied().collect();
            let all_t: Vec<_> = ta.iter().chain(&tb).copied().collect();
            prop_assert_eq!(m, confusion(&all_p, &all_t, Arity::Binary).unwrap());
        }
    }
}
