//! Stride-2, 2×2 transposed convolution used for decoder upsampling.

use super::conv::ConvGrads;
use super::gemm::{gemm, Mat};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

const OP: &str = "conv_transpose2x2";

fn dims(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, cin, h, wd) = x.dims4(OP)?;
    let (wcin, cout, kh, kw) = w.dims4(OP)?;
    if (kh, kw) != (2, 2) {
        return Err(Error::dim(OP, "kernel", format!("only 2×2 kernels are supported, got {kh}×{kw}")));
    }
    if wcin != cin {
        return Err(Error::dim(
            OP,
            "channels",
            format!("input has {cin} channels but kernel expects {wcin}"),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::dim(OP, "bias", format!("bias shape {:?}", b.shape())));
        }
    }
    Ok((n, cin, h, wd, cout))
}

/// `x: N×Cin×H×W`, `w: Cin×Cout×2×2` → `N×Cout×2H×2W`. Each input pixel
/// scatters a 2×2 block; blocks never overlap.
pub fn conv_transpose2x2(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, cin, h, wd, cout) = dims(x, w, b)?;
    let plane = h * wd;
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = vec![0.0; n * cout * oh * ow];
    par::for_each_chunk_mut(&mut out, cout * oh * ow, |ni, y| {
        // taps[(co·4 + a·2 + b), pixel]
        let mut taps = vec![0.0; cout * 4 * plane];
        gemm(
            Mat::new(w.data(), cin, cout * 4).t(),
            Mat::new(x.batch_item(ni), cin, plane),
            &mut taps,
            0.0,
        );
        for co in 0..cout {
            let bias = b.map_or(0.0, |b| b.data()[co]);
            for tap in 0..4 {
                let (a, bb) = (tap / 2, tap % 2);
                let src = &taps[(co * 4 + tap) * plane..(co * 4 + tap + 1) * plane];
                for i in 0..h {
                    for j in 0..wd {
                        y[(co * oh + 2 * i + a) * ow + 2 * j + bb] = src[i * wd + j] + bias;
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![n, cout, oh, ow], out))
}

pub fn conv_transpose2x2_backward(x: &Tensor, w: &Tensor, with_bias: bool, dy: &Tensor) -> Result<ConvGrads> {
    let (n, cin, h, wd, cout) = dims(x, w, None)?;
    let plane = h * wd;
    let (oh, ow) = (2 * h, 2 * wd);
    if dy.shape() != [n, cout, oh, ow] {
        return Err(Error::dim(OP, "gradient", format!("upstream gradient shape {:?}", dy.shape())));
    }
    let parts = par::map_indexed(n, |ni| {
        let up = dy.batch_item(ni);
        let mut taps = vec![0.0; cout * 4 * plane];
        for co in 0..cout {
            for tap in 0..4 {
                let (a, bb) = (tap / 2, tap % 2);
                let dst = &mut taps[(co * 4 + tap) * plane..(co * 4 + tap + 1) * plane];
                for i in 0..h {
                    for j in 0..wd {
                        dst[i * wd + j] = up[(co * oh + 2 * i + a) * ow + 2 * j + bb];
                    }
                }
            }
        }
        let tm = Mat::new(&taps, cout * 4, plane);
        let mut dx = vec![0.0; cin * plane];
        let mut dw = vec![0.0; cin * cout * 4];
        gemm(Mat::new(w.data(), cin, cout * 4), tm, &mut dx, 0.0);
        gemm(Mat::new(x.batch_item(ni), cin, plane), tm.t(), &mut dw, 0.0);
        (dx, dw)
    });
    let mut dx = Vec::with_capacity(x.numel());
    let mut dw = vec![0.0; w.numel()];
    for (dxn, dwn) in parts {
        dx.extend_from_slice(&dxn);
        dw.iter_mut().zip(&dwn).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        dx: Tensor::from_parts(x.shape().to_vec(), dx),
        dw: Tensor::from_parts(w.shape().to_vec(), dw),
        db: with_bias.then(|| super::conv::channel_sums(dy, n, cout, oh * ow)),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ops::conv::{conv2d, Conv2dParams};

    #[test]
    fn single_tap_scatter() {
        let x = Tensor::new([1, 1, 1, 1], vec![2.5]).unwrap();
        let w = Tensor::ones([1, 1, 2, 2]);
        let y = conv_transpose2x2(&x, &w, None).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data(), [2.5; 4]);
    }

    #[test]
    fn zero_in_zero_out() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::uniform([3, 2, 2, 2], -1.0, 1.0, &mut r);
        let y = conv_transpose2x2(&Tensor::zeros([2, 3, 4, 5]), &w, None).unwrap();
        assert_eq!(y.shape(), [2, 2, 8, 10]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_of_strided_conv() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let w = Tensor::uniform([3, 2, 2, 2], -1.0, 1.0, &mut r);
        let x = Tensor::uniform([2, 3, 4, 5], -1.0, 1.0, &mut r);
        let y = Tensor::uniform([2, 2, 8, 10], -1.0, 1.0, &mut r);
        let lhs = conv2d(&y, &w, None, Conv2dParams::new(2, 1, 0)).unwrap().dot(&x).unwrap();
        let rhs = y.dot(&conv_transpose2x2(&x, &w, None).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
        // and the input gradient of the transposed conv is that strided conv
        let g = conv_transpose2x2_backward(&x, &w, false, &y).unwrap();
        let c = conv2d(&y, &w, None, Conv2dParams::new(2, 1, 0)).unwrap();
        assert!(g.dx.max_abs_diff(&c).unwrap() < 1e-12);
    }
}
