//! Depthwise and pointwise convolutions, the two halves of a separable convolution.

use super::conv::{self, Conv2dParams, ConvGrads};
use super::gemm::{gemm, Mat};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

struct DwGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry(x: &Tensor, w: &Tensor, p: Conv2dParams) -> Result<DwGeometry> {
    const OP: &str = "depthwise_conv2d";
    p.validate(OP)?;
    let (n, c, h, wd) = x.dims4(OP)?;
    let (wc, one, kh, kw) = w.dims4(OP)?;
    if wc != c {
        return Err(Error::dim(
            OP,
            "channels",
            format!("input has {c} channels but {wc} depthwise kernels were given"),
        ));
    }
    if one != 1 {
        return Err(Error::dim(
            OP,
            "channels",
            format!("depthwise kernels must have one input channel, got {one}"),
        ));
    }
    let oh = p.output_len(OP, "height", h, kh)?;
    let ow = p.output_len(OP, "width", wd, kw)?;
    Ok(DwGeometry {
        n,
        c,
        h,
        w: wd,
        kh,
        kw,
        oh,
        ow,
    })
}

#[inline]
fn source(o: usize, k: usize, p: &Conv2dParams, len: usize) -> Option<usize> {
    let pos = (o * p.stride + k * p.dilation) as isize - p.padding as isize;
    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
}

/// Per-channel convolution: `x: N×C×H×W`, `w: C×1×Kh×Kw`. Channel `c` of the
/// output depends only on channel `c` of the input.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, p: Conv2dParams) -> Result<Tensor> {
    let g = geometry(x, w, p)?;
    let (in_plane, out_plane, k_len) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut out = vec![0.0; g.n * g.c * out_plane];
    par::for_each_chunk_mut(&mut out, out_plane, |nc, y| {
        let c = nc % g.c;
        let src = &x.data()[nc * in_plane..(nc + 1) * in_plane];
        let kern = &w.data()[c * k_len..(c + 1) * k_len];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = 0.0;
                for ky in 0..g.kh {
                    let Some(iy) = source(oy, ky, &p, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = source(ox, kx, &p, g.w) else { continue };
                        acc += src[iy * g.w + ix] * kern[ky * g.kw + kx];
                    }
                }
                y[oy * g.ow + ox] = acc;
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.n, g.c, g.oh, g.ow], out))
}

/// Returns `(dx, dw)` for [`depthwise_conv2d`].
pub fn depthwise_conv2d_backward(x: &Tensor, w: &Tensor, p: Conv2dParams, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let g = geometry(x, w, p)?;
    if dy.shape() != [g.n, g.c, g.oh, g.ow] {
        return Err(Error::dim(
            "depthwise_conv2d_backward",
            "gradient",
            format!("upstream gradient shape {:?}", dy.shape()),
        ));
    }
    let (in_plane, out_plane, k_len) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    // One task per channel: it owns that channel's kernel gradient and its
    // input-gradient planes for every batch item.
    let per_channel = par::map_indexed(g.c, |c| {
        let kern = &w.data()[c * k_len..(c + 1) * k_len];
        let mut dk = vec![0.0; k_len];
        let mut dx = vec![0.0; g.n * in_plane];
        for n in 0..g.n {
            let nc = n * g.c + c;
            let src = &x.data()[nc * in_plane..(nc + 1) * in_plane];
            let up = &dy.data()[nc * out_plane..(nc + 1) * out_plane];
            let dst = &mut dx[n * in_plane..(n + 1) * in_plane];
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let gv = up[oy * g.ow + ox];
                    for ky in 0..g.kh {
                        let Some(iy) = source(oy, ky, &p, g.h) else { continue };
                        for kx in 0..g.kw {
                            let Some(ix) = source(ox, kx, &p, g.w) else { continue };
                            dk[ky * g.kw + kx] += gv * src[iy * g.w + ix];
                            dst[iy * g.w + ix] += gv * kern[ky * g.kw + kx];
                        }
                    }
                }
            }
        }
        (dk, dx)
    });
    let mut dw = Vec::with_capacity(w.numel());
    let mut dx = vec![0.0; x.numel()];
    for (c, (dk, planes)) in per_channel.into_iter().enumerate() {
        dw.extend_from_slice(&dk);
        for n in 0..g.n {
            let nc = n * g.c + c;
            dx[nc * in_plane..(nc + 1) * in_plane].copy_from_slice(&planes[n * in_plane..(n + 1) * in_plane]);
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
    ))
}

fn pointwise_dims(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize, usize)> {
    const OP: &str = "pointwise_conv";
    let (n, c, h, wd) = x.dims4(OP)?;
    let (m, wc, kh, kw) = w.dims4(OP)?;
    if (kh, kw) != (1, 1) {
        return Err(Error::dim(OP, "kernel", format!("expected a 1×1 kernel, got {kh}×{kw}")));
    }
    if wc != c {
        return Err(Error::dim(
            OP,
            "channels",
            format!("input has {c} channels but kernel expects {wc}"),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [m] {
            return Err(Error::dim(OP, "bias", format!("bias shape {:?}", b.shape())));
        }
    }
    Ok((n, c, h * wd, m))
}

/// 1×1 convolution as a per-pixel matrix multiply: `w: M×C×1×1` maps every
/// pixel's channel vector through `w`.
pub fn pointwise_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, c, plane, m) = pointwise_dims(x, w, b)?;
    let mut out = vec![0.0; n * m * plane];
    par::for_each_chunk_mut(&mut out, m * plane, |ni, y| {
        gemm(Mat::new(w.data(), m, c), Mat::new(x.batch_item(ni), c, plane), y, 0.0);
        if let Some(b) = b {
            for (row, bv) in y.chunks_mut(plane).zip(b.data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    let s = x.shape();
    Ok(Tensor::from_parts(vec![n, m, s[2], s[3]], out))
}

pub fn pointwise_conv_backward(x: &Tensor, w: &Tensor, with_bias: bool, dy: &Tensor) -> Result<ConvGrads> {
    let (n, c, plane, m) = pointwise_dims(x, w, None)?;
    if dy.shape() != [n, m, x.shape()[2], x.shape()[3]] {
        return Err(Error::dim(
            "pointwise_conv_backward",
            "gradient",
            format!("upstream gradient shape {:?}", dy.shape()),
        ));
    }
    let parts = par::map_indexed(n, |ni| {
        let g = Mat::new(dy.batch_item(ni), m, plane);
        let mut dx = vec![0.0; c * plane];
        let mut dw = vec![0.0; m * c];
        gemm(Mat::new(w.data(), m, c).t(), g, &mut dx, 0.0);
        gemm(g, Mat::new(x.batch_item(ni), c, plane).t(), &mut dw, 0.0);
        (dx, dw)
    });
    let mut dx = Vec::with_capacity(x.numel());
    let mut dw = vec![0.0; m * c];
    for (dxn, dwn) in parts {
        dx.extend_from_slice(&dxn);
        dw.iter_mut().zip(&dwn).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        dx: Tensor::from_parts(x.shape().to_vec(), dx),
        dw: Tensor::from_parts(w.shape().to_vec(), dw),
        db: with_bias.then(|| conv::channel_sums(dy, n, m, plane)),
    })
}

/// Standard kernel equivalent to depthwise `w_dw` followed by pointwise `w_pw`:
/// `k[m, c, :, :] = w_pw[m, c] · w_dw[c, 0, :, :]`.
pub fn factored_kernel(w_dw: &Tensor, w_pw: &Tensor) -> Result<Tensor> {
    let (c, _, kh, kw) = w_dw.dims4("factored_kernel")?;
    let (m, pc, _, _) = w_pw.dims4("factored_kernel")?;
    if pc != c {
        return Err(Error::dim("factored_kernel", "channels", format!("{pc} vs {c}")));
    }
    let k = kh * kw;
    let mut out = vec![0.0; m * c * k];
    for mi in 0..m {
        for ci in 0..c {
            let scale = w_pw.data()[mi * c + ci];
            for t in 0..k {
                out[(mi * c + ci) * k + t] = scale * w_dw.data()[ci * k + t];
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, c, kh, kw], out))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ops::conv::conv2d_direct;

    #[test]
    fn delta_kernels_are_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform([2, 3, 5, 4], -1.0, 1.0, &mut r);
        let mut w = Tensor::zeros([3, 1, 3, 3]);
        for c in 0..3 {
            w.data_mut()[c * 9 + 4] = 1.0;
        }
        assert_eq!(depthwise_conv2d(&x, &w, Conv2dParams::same(3, 1)).unwrap(), x);
    }

    #[test]
    fn channels_do_not_mix() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut x = Tensor::uniform([1, 3, 6, 6], -1.0, 1.0, &mut r);
        x.data_mut()[..36].fill(0.0);
        let w = Tensor::uniform([3, 1, 3, 3], -1.0, 1.0, &mut r);
        let y = depthwise_conv2d(&x, &w, Conv2dParams::same(3, 1)).unwrap();
        assert!(y.data()[..36].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn box_sum_matches_block_diagonal_standard_conv() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform([1, 2, 3, 3], 0.0, 1.0, &mut r);
        let w = Tensor::ones([2, 1, 3, 3]);
        let p = Conv2dParams::same(3, 1);
        let y = depthwise_conv2d(&x, &w, p).unwrap();
        // block-diagonal standard kernel: channel c only sees channel c
        let mut full = Tensor::zeros([2, 2, 3, 3]);
        for c in 0..2 {
            full.data_mut()[(c * 2 + c) * 9..(c * 2 + c + 1) * 9].fill(1.0);
        }
        let oracle = conv2d_direct(&x, &full, None, p).unwrap();
        assert!(y.max_abs_diff(&oracle).unwrap() < 1e-14);
        // centre of each channel is the sum of its whole 3×3 plane
        for c in 0..2 {
            let plane_sum: f64 = x.data()[c * 9..(c + 1) * 9].iter().sum();
            assert!((y.data()[c * 9 + 4] - plane_sum).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_wrong_kernel_count() {
        let x = Tensor::ones([1, 3, 4, 4]);
        let w = Tensor::ones([2, 1, 3, 3]);
        assert!(matches!(
            depthwise_conv2d(&x, &w, Conv2dParams::same(3, 1)),
            Err(Error::Dimension { axis: "channels", .. })
        ));
    }

    #[test]
    fn pointwise_sum_and_difference() {
        // pixel (a, b) → (a + b, a − b)
        let x = Tensor::new([1, 2, 1, 2], vec![3.0, 5.0, 1.0, -2.0]).unwrap();
        let w = Tensor::new([2, 2, 1, 1], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let y = pointwise_conv(&x, &w, None).unwrap();
        assert_eq!(y.data(), [4.0, 3.0, 2.0, 7.0]);
    }

    #[test]
    fn pointwise_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::uniform([2, 3, 4, 5], -1.0, 1.0, &mut r);
        let mut w = Tensor::zeros([3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(pointwise_conv(&x, &w, None).unwrap(), x);
    }

    #[test]
    fn pointwise_matches_unit_kernel_conv() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform([3, 4, 5, 6], -1.0, 1.0, &mut r);
        let w = Tensor::uniform([7, 4, 1, 1], -1.0, 1.0, &mut r);
        let b = Tensor::uniform([7], -1.0, 1.0, &mut r);
        let a = pointwise_conv(&x, &w, Some(&b)).unwrap();
        let c = conv2d_direct(&x, &w, Some(&b), Conv2dParams::default()).unwrap();
        assert!(a.max_abs_diff(&c).unwrap() < 1e-12);
    }
}
