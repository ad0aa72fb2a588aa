//! Per-channel batch normalization over N×H×W.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batch_norm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(
            "batch_norm",
            "channels",
            format!("affine parameters {:?}/{:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    Ok((n, c, h * w))
}

/// Saved state of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

/// Normalizes with the batch's own statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, BatchNormCache)> {
    let (n, c, plane) = check(x, gamma, beta)?;
    let count = (n * plane) as f64;
    let d = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            mean[ci] += d[base..base + plane].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            var[ci] += d[base..base + plane].iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut xhat = vec![0.0; x.numel()];
    let mut y = vec![0.0; x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            for i in base..base + plane {
                xhat[i] = (d[i] - mean[ci]) * inv_std[ci];
                y[i] = g * xhat[i] + b;
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        BatchNormCache {
            xhat: Tensor::from_parts(x.shape().to_vec(), xhat),
            inv_std,
            mean,
            var,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)` for [`batch_norm_train`].
pub fn batch_norm_train_backward(cache: &BatchNormCache, gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let shape = dy.shape();
    let (n, c) = (shape[0], shape[1]);
    let plane = shape[2] * shape[3];
    let count = (n * plane) as f64;
    let (xh, g) = (cache.xhat.data(), dy.data());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                dgamma[ci] += g[i] * xh[i];
                dbeta[ci] += g[i];
            }
        }
    }
    // dx = γ·σ⁻¹/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
    let mut dx = vec![0.0; dy.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let k = gamma.data()[ci] * cache.inv_std[ci] / count;
            for i in base..base + plane {
                dx[i] = k * (count * g[i] - dbeta[ci] - xh[i] * dgamma[ci]);
            }
        }
    }
    (
        Tensor::from_parts(shape.to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

/// Normalizes with fixed running statistics; affine in `x`.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let (n, c, plane) = check(x, gamma, beta)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(Error::dim("batch_norm", "channels", "running statistics do not match channel count"));
    }
    let (scale, shift) = eval_affine(gamma, beta, running_mean, running_var, eps);
    let mut y = x.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            y[base..base + plane].iter_mut().for_each(|v| *v = *v * scale[ci] + shift[ci]);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), y))
}

/// Per-channel `(scale, shift)` such that eval-mode output is `x·scale + shift`.
pub fn eval_affine(gamma: &Tensor, beta: &Tensor, rm: &Tensor, rv: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let scale: Vec<f64> = gamma
        .data()
        .iter()
        .zip(rv.data())
        .map(|(g, v)| g / (v + eps).sqrt())
        .collect();
    let shift = beta
        .data()
        .iter()
        .zip(rm.data())
        .zip(&scale)
        .map(|((b, m), s)| b - m * s)
        .collect();
    (scale, shift)
}

/// Exponential moving update of running statistics; the variance update uses
/// the unbiased batch variance.
pub fn update_running(running_mean: &mut Tensor, running_var: &mut Tensor, cache: &BatchNormCache, count: usize, momentum: f64) {
    let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
    for (r, m) in running_mean.data_mut().iter_mut().zip(&cache.mean) {
        *r = (1.0 - momentum) * *r + momentum * m;
    }
    for (r, v) in running_var.data_mut().iter_mut().zip(&cache.var) {
        *r = (1.0 - momentum) * *r + momentum * v * unbias;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn affine(c: usize) -> (Tensor, Tensor) {
        (Tensor::ones([c]), Tensor::zeros([c]))
    }

    #[test]
    fn standardized_input_passes_through() {
        // per channel: mean 0, biased variance 1
        let x = Tensor::new([2, 1, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (g, b) = affine(1);
        let (y, _) = batch_norm_train(&x, &g, &b, BN_EPS).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-5);
        // "two-value batch {−1, +1}" normalizes to ±1/sqrt(1+eps)
        let expect = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-15);
        let ev = batch_norm_eval(&x, &g, &b, &Tensor::zeros([1]), &Tensor::ones([1]), BN_EPS).unwrap();
        assert!(ev.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full([3, 2, 2, 2], 4.2);
        let (g, b) = affine(2);
        let (y, c) = batch_norm_train(&x, &g, &b, BN_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(c.inv_std.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn train_output_has_zero_mean_unit_variance() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform([4, 3, 5, 5], -2.0, 5.0, &mut r);
        let (g, b) = affine(3);
        let (y, _) = batch_norm_train(&x, &g, &b, 0.0).unwrap();
        let (_, cache) = batch_norm_train(&y, &g, &b, 0.0).unwrap();
        for c in 0..3 {
            assert!(cache.mean[c].abs() < 1e-12);
            assert!((cache.var[c] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn running_update_moves_toward_batch() {
        let x = Tensor::new([2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let (g, b) = affine(1);
        let (_, cache) = batch_norm_train(&x, &g, &b, BN_EPS).unwrap();
        let (mut rm, mut rv) = (Tensor::zeros([1]), Tensor::ones([1]));
        update_running(&mut rm, &mut rv, &cache, 2, BN_MOMENTUM);
        assert!((rm.data()[0] - 0.2).abs() < 1e-15);
        // unbiased var = 2
        assert!((rv.data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }
}
