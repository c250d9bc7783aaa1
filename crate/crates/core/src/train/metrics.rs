use serde::{Deserialize, Serialize};

use crate::model::Label;
use crate::{Error, Result};

/// `confusion[true][predicted]`, indexed by `Label::index`.
pub type Confusion = [[u64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub n_samples: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Builds the report from a confusion matrix. Undefined ratios (0/0)
    /// count as 0.
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let n: u64 = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(Error::Metrics("no samples to score".into()));
        }
        let per_class: Vec<ClassMetrics> = Label::ALL
            .iter()
            .map(|&label| {
                let c = label.index();
                let tp = confusion[c][c];
                let predicted = confusion[0][c] + confusion[1][c];
                let actual = confusion[c][0] + confusion[c][1];
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, actual);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics { label, precision, recall, f1, support: actual }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
        let accuracy = ratio(confusion[0][0] + confusion[1][1], n);
        Ok(Self { per_class, macro_f1, accuracy, confusion, n_samples: n })
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.per_class[label.index()]
    }
}

/// Adds two confusion matrices, e.g. from evaluation shards.
pub fn merge_confusion(a: &Confusion, b: &Confusion) -> Confusion {
    let mut out = *a;
    for (row, other) in out.iter_mut().zip(b) {
        for (x, y) in row.iter_mut().zip(other) {
            *x += y;
        }
    }
    out
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = [[0u64; 2]; 2];
    for (p, t) in predictions.iter().zip(labels) {
        m[t.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Per-class precision, recall and F1 plus their unweighted mean.
pub fn macro_f1(predictions: &[Label], labels: &[Label]) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::Metrics("empty prediction set".into()));
    }
    MetricsReport::from_confusion(confusion(predictions, labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Hate as H, NotHate as N};

    #[test]
    fn perfect_predictions() {
        let y = [H, N, H, N];
        let r = macro_f1(&y, &y).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn single_class_predictions_on_balanced_set() {
        let r = macro_f1(&[H, H, H, H], &[H, H, N, N]).unwrap();
        assert_eq!(r.class(H).f1, 2.0 / 3.0);
        assert_eq!(r.class(N).f1, 0.0);
        assert_eq!(r.class(N).precision, 0.0);
        assert_eq!(r.macro_f1, 1.0 / 3.0);
        assert_eq!(r.confusion, [[0, 2], [0, 2]]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(macro_f1(&[], &[]), Err(Error::Metrics(_))));
        assert!(matches!(macro_f1(&[H], &[H, N]), Err(Error::Metrics(_))));
    }

    #[test]
    fn json_round_trip() {
        let r = macro_f1(&[H, N, N], &[H, H, N]).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&text).unwrap(), r);
    }

    #[test]
    fn merged_shards_match_whole() {
        let p = [H, N, N, H, H];
        let t = [H, H, N, N, H];
        let whole = confusion(&p, &t).unwrap();
        let parts = merge_confusion(&confusion(&p[..2], &t[..2]).unwrap(), &confusion(&p[2..], &t[2..]).unwrap());
        assert_eq!(whole, parts);
    }

    fn labels() -> impl Strategy<Value = Vec<(bool, bool)>> {
        prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)
    }

    fn to_label(b: bool) -> Label {
        if b {
            H
        } else {
            N
        }
    }

    proptest! {
        #[test]
        fn report_invariants(pairs in labels()) {
            let p: Vec<Label> = pairs.iter().map(|x| to_label(x.0)).collect();
            let t: Vec<Label> = pairs.iter().map(|x| to_label(x.1)).collect();
            let r = macro_f1(&p, &t).unwrap();
            prop_assert_eq!(r.confusion.iter().flatten().sum::<u64>(), pairs.len() as u64);
            prop_assert!((0.0..=1.0).contains(&r.macro_f1));
            prop_assert!((r.macro_f1 - (r.per_class[0].f1 + r.per_class[1].f1) / 2.0).abs() < 1e-15);
        }

        #[test]
        fn renaming_classes_keeps_macro_f1(pairs in labels()) {
            let p: Vec<Label> = pairs.iter().map(|x| to_label(x.0)).collect();
            let t: Vec<Label> = pairs.iter().map(|x| to_label(x.1)).collect();
            let pf: Vec<Label> = pairs.iter().map(|x| to_label(!x.0)).collect();
            let tf: Vec<Label> = pairs.iter().map(|x| to_label(!x.1)).collect();
            let a = macro_f1(&p, &t).unwrap().macro_f1;
            let b = macro_f1(&pf, &tf).unwrap().macro_f1;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn order_does_not_matter(pairs in labels(), rot in 0usize..60) {
            let p: Vec<Label> = pairs.iter().map(|x| to_label(x.0)).collect();
            let t: Vec<Label> = pairs.iter().map(|x| to_label(x.1)).collect();
            let k = rot % pairs.len();
            let (mut pr, mut tr) = (p.clone(), t.clone());
            pr.rotate_left(k);
            tr.rotate_left(k);
            prop_assert_eq!(macro_f1(&p, &t).unwrap(), macro_f1(&pr, &tr).unwrap());
        }
    }
}
