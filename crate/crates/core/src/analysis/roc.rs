//! ROC curves, AUC and confusion counts.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Cells scoring at or above this value are called positive. The first
    /// point uses `+inf` (nothing called positive).
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// True positive rate; 0 when there are no positives.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// True negative rate; 0 when there are no negatives.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn youden_j(&self) -> f64 {
        self.sensitivity() + self.specificity() - 1.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::param("scores", format!("contains {s}")));
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }
    Ok((positives, negatives))
}

/// Threshold sweep over the distinct scores, highest first. Equal scores form
/// one step, so ties contribute half credit to the area.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (positives, negatives) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = points[points.len() - 1];
        let point = RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
    }
    Ok(RocCurve { points, auc })
}

/// Counts with cells scoring `>= threshold` called positive.
pub fn confusion_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    Ok(confusion_unchecked(scores, labels, threshold))
}

fn confusion_unchecked(scores: &[f64], labels: &[bool], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, *l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Threshold among the observed scores maximising Youden's J. Ties go to the
/// highest threshold.
pub fn optimal_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, ConfusionCounts)> {
    let curve = roc(scores, labels)?;
    let best = curve
        .points
        .iter()
        .skip(1)
        .fold(None::<(f64, f64)>, |best, p| {
            let j = p.tpr - p.fpr;
            match best {
                Some((_, bj)) if bj >= j => best,
                _ => Some((p.threshold, j)),
            }
        })
        .expect("at least one finite threshold");
    Ok((best.0, confusion_unchecked(scores, labels, best.0)))
}

impl RocCurve {
    /// CSV with header `threshold,fpr,tpr`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["threshold", "fpr", "tpr"])?;
        for p in &self.points {
            w.write_record([
                p.threshold.to_string(),
                p.fpr.to_string(),
                p.tpr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the points back; the area is recomputed by the trapezoid rule.
    pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<RocCurve> {
        let schema = |detail: String| Error::Schema {
            source_name: source_name.to_string(),
            detail,
        };
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["threshold", "fpr", "tpr"] {
            return Err(schema("expected header `threshold,fpr,tpr`".into()));
        }
        let mut points = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0; 3];
            for (k, name) in ["threshold", "fpr", "tpr"].iter().enumerate() {
                vals[k] = rec
                    .get(k)
                    .ok_or_else(|| schema(format!("row {}: missing column `{name}`", row + 1)))?
                    .parse()
                    .map_err(|e| schema(format!("row {}: column `{name}`: {e}", row + 1)))?;
            }
            points.push(RocPoint {
                threshold: vals[0],
                fpr: vals[1],
                tpr: vals[2],
            });
        }
        let auc = points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        Ok(RocCurve { points, auc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Mann-Whitney statistic by enumerating every positive/negative pair.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (sp, _) in scores.iter().zip(labels).filter(|(_, l)| **l) {
            for (sn, _) in scores.iter().zip(labels).filter(|(_, l)| !**l) {
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert!((roc(&scores, &labels).unwrap().auc - 0.75).abs() < 1e-15);

        let sep = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(roc(&sep, &labels).unwrap().auc, 1.0);
        let inverted = [true, true, false, false];
        assert_eq!(roc(&sep, &inverted).unwrap().auc, 0.0);
    }

    #[test]
    fn curve_runs_corner_to_corner() {
        let c = roc(&[0.3, 0.3, 0.5, 0.1], &[true, false, true, false]).unwrap();
        let first = c.points[0];
        let last = c.points[c.points.len() - 1];
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        // tied scores share one step
        assert_eq!(c.points.len(), 4);
    }

    #[test]
    fn single_class_is_rejected() {
        let err = roc(&[0.1, 0.2], &[true, true]).unwrap_err();
        assert!(matches!(
            err,
            Error::SingleClass {
                positives: 2,
                negatives: 0
            }
        ));
        assert!(confusion_at(&[0.1, 0.2], &[false, false], 0.1).is_err());
        assert!(roc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let labels = [false, false, true, true];
        let sep = [0.1, 0.2, 0.8, 0.9];
        let c = confusion_at(&sep, &labels, 0.5).unwrap();
        assert_eq!((c.sensitivity(), c.specificity()), (1.0, 1.0));
        let c = confusion_at(&sep, &labels, 0.0).unwrap();
        assert_eq!((c.sensitivity(), c.specificity()), (1.0, 0.0));

        let scores = [0.1, 0.4, 0.35, 0.8];
        let c = confusion_at(&scores, &labels, 0.35).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                fp: 1,
                tn: 1,
                fn_: 0
            }
        );
        assert_eq!((c.sensitivity(), c.specificity()), (1.0, 0.5));
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn youden_optimum() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        let (t, c) = optimal_threshold(&scores, &labels).unwrap();
        // J = 0.5 at 0.8 and at 0.35; the higher threshold wins
        assert_eq!(t, 0.8);
        assert_eq!((c.tp, c.fp), (1, 0));
        let (t, c) = optimal_threshold(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
        assert_eq!(t, 0.8);
        assert_eq!(c.youden_j(), 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let c = roc(
            &[0.3, 0.3, 0.5, 0.1, 0.7],
            &[true, false, true, false, false],
        )
        .unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = RocCurve::read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, c);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..=100).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..12).prop_map(|k| k as f64 / 4.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn sweep_auc_equals_pairwise((scores, labels) in instance()) {
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let c = roc(&scores, &labels).unwrap();
            prop_assert!((c.auc - pairwise_auc(&scores, &labels)).abs() < 1e-12);
            for w in c.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }

        #[test]
        fn rates_are_monotone_in_threshold((scores, labels) in instance(), t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
            prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
            let lo = confusion_at(&scores, &labels, t1).unwrap();
            let hi = confusion_at(&scores, &labels, t1 + dt).unwrap();
            prop_assert!(hi.sensitivity() <= lo.sensitivity());
            prop_assert!(hi.specificity() >= lo.specificity());
        }
    }
}
