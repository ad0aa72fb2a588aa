//! Confusion counts and the five segmentation scores.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Pixels at or above this probability are positive.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Counts a probability map against a binary mask; `p ≥ threshold` is positive.
pub fn confusion(pred: &[f64], gt: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "prediction has {} pixels, mask has {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("empty mask".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        let truth = match g {
            v if v == 1.0 => true,
            v if v == 0.0 => false,
            v => return Err(Error::Contract(format!("mask value {v} is not binary"))),
        };
        match (p >= threshold, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub se: f64,
    pub sp: f64,
    pub ac: f64,
    pub di: f64,
    pub ja: f64,
}

/// `num / den`, or 1 when the class is absent from both masks and 0 when
/// only the prediction has it.
fn ratio(num: u64, den: u64, absent_both: bool) -> f64 {
    if den == 0 {
        if absent_both {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["SE", "SP", "AC", "DI", "JA"];

    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Self {
            se: ratio(c.tp, c.tp + c.fn_, c.fp == 0),
            sp: ratio(c.tn, c.tn + c.fp, c.fn_ == 0),
            ac: ratio(c.tp + c.tn, c.total(), true),
            di: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, true),
            ja: ratio(c.tp, c.tp + c.fp + c.fn_, true),
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.se, self.sp, self.ac, self.di, self.ja]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            se: v[0],
            sp: v[1],
            ac: v[2],
            di: v[3],
            ja: v[4],
        }
    }

    /// Unweighted mean. Each column is summed in sorted order so the result
    /// does not depend on the order of `items`.
    pub fn mean(items: &[Metrics]) -> Option<Metrics> {
        if items.is_empty() {
            return None;
        }
        let mut out = [0.0; 5];
        for (j, slot) in out.iter_mut().enumerate() {
            let mut col: Vec<f64> = items.iter().map(|m| m.values()[j]).collect();
            col.sort_by(f64::total_cmp);
            *slot = col.iter().sum::<f64>() / items.len() as f64;
        }
        Some(Self::from_values(out))
    }
}

/// Per-image scores, in dataset order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, Metrics)>,
}

impl MetricReport {
    pub fn mean(&self) -> Option<Metrics> {
        Metrics::mean(&self.rows.iter().map(|(_, m)| *m).collect::<Vec<_>>())
    }

    /// `image,SE,SP,AC,DI,JA`, one row per image, then `MEAN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,SE,SP,AC,DI,JA\n");
        let row = |out: &mut String, name: &str, m: &Metrics| {
            out.push_str(name);
            for v in m.values() {
                write!(out, ",{v:.4}").unwrap();
            }
            out.push('\n');
        };
        for (id, m) in &self.rows {
            row(&mut out, id, m);
        }
        if let Some(m) = self.mean() {
            row(&mut out, "MEAN", &m);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let c = confusion(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0], THRESHOLD).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let m = Metrics::from_counts(&c);
        assert_eq!(m.se, 0.5);
        assert_eq!(m.sp, 0.5);
        assert_eq!(m.ac, 0.5);
        assert_eq!(m.di, 0.5);
        assert!((m.ja - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tie_counts_positive() {
        let c = confusion(&[0.5], &[0.0], THRESHOLD).unwrap();
        assert_eq!(c.fp, 1);
    }

    #[test]
    fn perfect_and_empty_masks() {
        let gt = [1.0, 0.0, 0.0, 1.0];
        let m = Metrics::from_counts(&confusion(&gt, &gt, THRESHOLD).unwrap());
        assert_eq!(m.values(), [1.0; 5]);
        let zeros = [0.0; 4];
        let m = Metrics::from_counts(&confusion(&zeros, &zeros, THRESHOLD).unwrap());
        assert_eq!(m.values(), [1.0; 5]);
        let m = Metrics::from_counts(&confusion(&[0.9, 0.0, 0.0, 0.0], &zeros, THRESHOLD).unwrap());
        assert_eq!((m.se, m.di, m.ja), (0.0, 0.0, 0.0));
    }

    #[test]
    fn contract_errors() {
        assert!(confusion(&[], &[], THRESHOLD).is_err());
        assert!(confusion(&[0.1], &[0.5], THRESHOLD).is_err());
        assert!(confusion(&[0.1, 0.2], &[0.0], THRESHOLD).is_err());
    }

    #[test]
    fn csv_layout() {
        let perfect = Metrics::from_values([1.0; 5]);
        let half = Metrics::from_values([0.5; 5]);
        let r = MetricReport {
            rows: vec![("a".into(), perfect), ("b".into(), half)],
        };
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "image,SE,SP,AC,DI,JA");
        assert_eq!(lines[1], "a,1.0000,1.0000,1.0000,1.0000,1.0000");
        assert_eq!(lines[3], "MEAN,0.7500,0.7500,0.7500,0.7500,0.7500");
    }
}
