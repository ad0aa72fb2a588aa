//! Segmentation losses over per-pixel foreground probabilities.
//!
//! * binary cross-entropy, with predictions clamped to `[ε, 1 − ε]`;
//! * Jaccard distance, `1 − Σxp / (Σx + Σp − Σxp)`;
//! * their sum, the training objective.

use crate::error::{Error, Result};

/// Clamp bound for cross-entropy and the Jaccard denominator guard.
pub const LOSS_EPS: f64 = 1e-7;

/// Predictions `p ∈ [0, 1]` paired with binary targets `x ∈ {0, 1}`.
#[derive(Debug, Clone, Copy)]
pub struct PixelBatch<'a> {
    predictions: &'a [f64],
    targets: &'a [f64],
}

impl<'a> PixelBatch<'a> {
    pub fn new(predictions: &'a [f64], targets: &'a [f64]) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Contract("loss over an empty pixel batch".into()));
        }
        if predictions.len() != targets.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} targets",
                predictions.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::Contract(format!("target {t} is not binary")));
        }
        if let Some(p) = predictions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Contract(format!("prediction {p} is outside [0, 1]")));
        }
        Ok(Self { predictions, targets })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn predictions(&self) -> &'a [f64] {
        self.predictions
    }

    pub fn targets(&self) -> &'a [f64] {
        self.targets
    }
}

/// `−(1/N) Σ [x ln p + (1 − x) ln(1 − p)]`.
pub fn bce_loss(batch: PixelBatch<'_>) -> f64 {
    let sum: f64 = batch
        .predictions
        .iter()
        .zip(batch.targets)
        .map(|(&p, &x)| {
            let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            x * p.ln() + (1.0 - x) * (1.0 - p).ln()
        })
        .sum();
    -sum / batch.len() as f64
}

/// Gradient of [`bce_loss`] with respect to each prediction. Zero where the
/// clamp is active.
pub fn bce_grad(batch: PixelBatch<'_>) -> Vec<f64> {
    let n = batch.len() as f64;
    batch
        .predictions
        .iter()
        .zip(batch.targets)
        .map(|(&p, &x)| {
            if !(LOSS_EPS..=1.0 - LOSS_EPS).contains(&p) {
                0.0
            } else {
                -(x / p - (1.0 - x) / (1.0 - p)) / n
            }
        })
        .collect()
}

struct JaccardSums {
    intersection: f64,
    union: f64,
}

fn jaccard_sums(batch: PixelBatch<'_>) -> JaccardSums {
    let (mut sx, mut sp, mut sxp) = (0.0, 0.0, 0.0);
    for (&p, &x) in batch.predictions.iter().zip(batch.targets) {
        sx += x;
        sp += p;
        sxp += x * p;
    }
    JaccardSums {
        intersection: sxp,
        union: sx + sp - sxp,
    }
}

/// `1 − Σxp / max(Σx + Σp − Σxp, ε)`; an all-empty target and prediction scores 0.
pub fn jaccard_loss(batch: PixelBatch<'_>) -> f64 {
    let s = jaccard_sums(batch);
    if s.union == 0.0 {
        return 0.0;
    }
    1.0 - s.intersection / s.union.max(LOSS_EPS)
}

pub fn jaccard_grad(batch: PixelBatch<'_>) -> Vec<f64> {
    let s = jaccard_sums(batch);
    if s.union == 0.0 {
        return vec![0.0; batch.len()];
    }
    let guarded = s.union < LOSS_EPS;
    let u = s.union.max(LOSS_EPS);
    batch
        .targets
        .iter()
        .map(|&x| {
            if guarded {
                -x / u
            } else {
                // d/dp of −I/U with dI/dp = x, dU/dp = 1 − x
                -(x * u - s.intersection * (1.0 - x)) / (u * u)
            }
        })
        .collect()
}

/// Cross-entropy plus Jaccard distance.
pub fn seg_loss(batch: PixelBatch<'_>) -> f64 {
    bce_loss(batch) + jaccard_loss(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch<'a>(p: &'a [f64], x: &'a [f64]) -> PixelBatch<'a> {
        PixelBatch::new(p, x).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let x = [1.0, 0.0, 1.0, 1.0];
        let b = batch(&x, &x);
        assert!((bce_loss(b) - (-(1.0 - LOSS_EPS).ln())).abs() < 1e-18);
        assert_eq!(jaccard_loss(b), 0.0);
        assert!(seg_loss(b) <= 1e-6);
    }

    #[test]
    fn half_probability() {
        let p = [0.5; 6];
        let x = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        assert!((bce_loss(batch(&p, &x)) - 2f64.ln()).abs() < 1e-12);
        let ones = [1.0; 6];
        assert!((jaccard_loss(batch(&p, &ones)) - 0.5).abs() < 1e-15);
        assert!((seg_loss(batch(&p, &ones)) - (2f64.ln() + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_cross_entropy() {
        assert!((bce_loss(batch(&[0.25], &[1.0])) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_and_empty() {
        assert_eq!(jaccard_loss(batch(&[0.0; 3], &[1.0; 3])), 1.0);
        assert_eq!(jaccard_loss(batch(&[0.0; 3], &[0.0; 3])), 0.0);
    }

    #[test]
    fn contract_errors() {
        assert!(PixelBatch::new(&[], &[]).is_err());
        assert!(PixelBatch::new(&[0.5], &[0.5]).is_err());
        assert!(PixelBatch::new(&[0.5, 0.1], &[1.0]).is_err());
        assert!(PixelBatch::new(&[1.5], &[1.0]).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = [0.3, 0.8, 0.55, 0.1, 0.67];
        let x = [1.0, 1.0, 0.0, 0.0, 1.0];
        let h = 1e-6;
        for (loss, grad) in [
            (bce_loss as fn(PixelBatch<'_>) -> f64, bce_grad as fn(PixelBatch<'_>) -> Vec<f64>),
            (jaccard_loss, jaccard_grad),
        ] {
            let g = grad(batch(&p, &x));
            for i in 0..p.len() {
                let (mut a, mut b) = (p, p);
                a[i] += h;
                b[i] -= h;
                let fd = (loss(batch(&a, &x)) - loss(batch(&b, &x))) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "i={i} fd={fd} g={}", g[i]);
            }
        }
    }
}
