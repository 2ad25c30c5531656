//! Dynamic-class IoU scoring against ground truth.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::io::{Label, Scan};

/// Confusion matrix with `dynamic` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, gt: Label, pred: Label) {
        match (gt.is_dynamic(), pred.is_dynamic()) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn iou(&self) -> f64 {
        iou(self)
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// Counts one scan. With `range_limit`, only points whose sensor-frame range
/// is at most the limit are evaluated.
pub fn accumulate(
    gt: &[Label],
    pred: &[Label],
    points: &Scan,
    range_limit: Option<f64>,
) -> Result<ConfusionCounts> {
    if gt.len() != pred.len() || gt.len() != points.len() {
        return Err(Error::Evaluation(format!(
            "length mismatch: {} ground-truth labels, {} predictions, {} points",
            gt.len(),
            pred.len(),
            points.len()
        )));
    }
    let limit2 = range_limit.map(|r| r * r);
    let mut c = ConfusionCounts::default();
    for ((g, p), pt) in gt.iter().zip(pred).zip(&points.points) {
        if limit2.is_some_and(|l| pt.norm_squared() > l) {
            continue;
        }
        c.record(*g, *p);
    }
    Ok(c)
}

/// `100 · tp / (tp + fp + fn)`; 100 when nothing is dynamic in either labelling.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        100.0
    } else {
        100.0 * c.tp as f64 / denom as f64
    }
}

/// Per-sequence confusion counts with an aggregate row.
#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    rows: Vec<(String, ConfusionCounts, usize)>,
}

impl ResultsTable {
    /// Adds a sequence row. `scans` is the number of labelled scans that
    /// contributed; sparse ground truth simply contributes fewer scans.
    pub fn push(&mut self, name: impl Into<String>, counts: ConfusionCounts, scans: usize) {
        self.rows.push((name.into(), counts, scans));
    }

    pub fn aggregate(&self) -> ConfusionCounts {
        self.rows.iter().map(|r| r.1).sum()
    }

    /// Tab-separated table: header, one row per sequence, then `total`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sequence\tscans\ttp\tfp\tfn\ttn\tiou\n");
        let total_scans = self.rows.iter().map(|r| r.2).sum();
        let rows = self
            .rows
            .iter()
            .map(|(n, c, s)| (n.as_str(), *c, *s))
            .chain(std::iter::once(("total", self.aggregate(), total_scans)));
        for (name, c, scans) in rows {
            let _ = writeln!(
                out,
                "{name}\t{scans}\t{}\t{}\t{}\t{}\t{:.2}",
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                c.iou()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use Label::{Dynamic as D, Static as S};

    fn scan_at(ranges: &[f64]) -> Scan {
        Scan::new(
            0,
            ranges.iter().map(|&r| Vector3::new(r, 0.0, 0.0)).collect(),
        )
    }

    #[test]
    fn identical_labels_have_no_errors() {
        let l = vec![D, S, D, S];
        let c = accumulate(&l, &l, &scan_at(&[1.0; 4]), None).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(iou(&c), 100.0);
    }

    #[test]
    fn all_static_prediction_misses_everything() {
        let n = 7;
        let c = accumulate(&vec![D; n], &vec![S; n], &scan_at(&vec![1.0; n]), None).unwrap();
        assert_eq!(c.fn_, n as u64);
        assert_eq!(iou(&c), 0.0);
    }

    #[test]
    fn mixed_six_points() {
        // gt/pred pairs: (D,D) (D,S) (S,D) (S,S) (D,D) (S,S)
        let gt = [D, D, S, S, D, S];
        let pred = [D, S, D, S, D, S];
        let c = accumulate(
            &gt,
            &pred,
            &scan_at(&[1.0, 5.0, 30.0, 2.0, 25.0, 3.0]),
            None,
        )
        .unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                fp: 1,
                fn_: 1,
                tn: 2
            }
        );
        assert_eq!(iou(&c), 50.0);
        // Points at 30 m and 25 m fall outside a 20 m limit.
        let c = accumulate(
            &gt,
            &pred,
            &scan_at(&[1.0, 5.0, 30.0, 2.0, 25.0, 3.0]),
            Some(20.0),
        )
        .unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 0,
                fn_: 1,
                tn: 2
            }
        );
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            accumulate(&[D], &[D, S], &scan_at(&[1.0]), None),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn iou_examples() {
        assert_eq!(
            iou(&ConfusionCounts {
                tp: 50,
                ..Default::default()
            }),
            100.0
        );
        assert_eq!(
            iou(&ConfusionCounts {
                fn_: 3,
                ..Default::default()
            }),
            0.0
        );
        assert_eq!(
            iou(&ConfusionCounts {
                tp: 80,
                fp: 10,
                fn_: 10,
                tn: 0
            }),
            80.0
        );
        assert_eq!(iou(&ConfusionCounts::default()), 100.0);
    }

    #[test]
    fn table_totals_sparse_rows() {
        let mut t = ResultsTable::default();
        t.push(
            "a",
            ConfusionCounts {
                tp: 8,
                fp: 1,
                fn_: 1,
                tn: 5,
            },
            2,
        );
        t.push(
            "b",
            ConfusionCounts {
                tp: 2,
                fp: 0,
                fn_: 0,
                tn: 5,
            },
            1,
        );
        assert_eq!(
            t.aggregate(),
            ConfusionCounts {
                tp: 10,
                fp: 1,
                fn_: 1,
                tn: 10
            }
        );
        let tsv = t.to_tsv();
        assert!(tsv
            .lines()
            .last()
            .unwrap()
            .starts_with("total\t3\t10\t1\t1\t10\t83.33"));
    }

    proptest! {
        #[test]
        fn iou_bounded_symmetric_monotone(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
            let c = ConfusionCounts { tp, fp, fn_, tn: 0 };
            let v = iou(&c);
            prop_assert!((0.0..=100.0).contains(&v));
            prop_assert_eq!(v, iou(&ConfusionCounts { fp: fn_, fn_: fp, ..c }));
            let more = ConfusionCounts { tp: tp + 1, ..c };
            prop_assert!(iou(&more) >= v);
        }
    }
}
