//! Standard 2-D convolution (cross-correlation) over N×C×H×W tensors.
//!
//! The production path gathers receptive-field patches into a column matrix
//! and multiplies it by the flattened kernel. [`conv2d_direct`] evaluates the
//! same sum with nested loops and serves as an independent reference.

use std::sync::atomic::{AtomicBool, Ordering};

use super::gemm::{gemm, Mat};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

static FLIP_BACKWARD_SIGN: AtomicBool = AtomicBool::new(false);

/// Test fixture: negates the input gradient of [`conv2d_backward`] so that the
/// self-verification suite can be shown to catch a broken backward pass.
#[doc(hidden)]
pub fn inject_backward_sign_fault(on: bool) {
    FLIP_BACKWARD_SIGN.store(on, Ordering::SeqCst);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            padding,
        }
    }

    /// Stride 1, padding that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation, dilation * (kernel - 1) / 2)
    }

    pub(crate) fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::dim(op, "stride", "stride must be ≥ 1"));
        }
        if self.dilation == 0 {
            return Err(Error::dim(op, "dilation", "dilation must be ≥ 1"));
        }
        Ok(())
    }

    /// Output length along one spatial axis.
    pub fn output_len(&self, op: &'static str, axis: &'static str, input: usize, kernel: usize) -> Result<usize> {
        let extent = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if extent > padded {
            return Err(Error::dim(
                op,
                axis,
                format!("effective kernel extent {extent} exceeds padded input extent {padded}"),
            ));
        }
        Ok((padded - extent) / self.stride + 1)
    }
}

/// Validated geometry shared by the forward and backward passes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub p: Conv2dParams,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_item(&self) -> usize {
        self.cin * self.h * self.w
    }
}

pub(crate) fn geometry(op: &'static str, x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: Conv2dParams) -> Result<ConvGeometry> {
    p.validate(op)?;
    let (n, cin, h, wd) = x.dims4(op)?;
    let (cout, wcin, kh, kw) = w.dims4(op)?;
    if wcin != cin {
        return Err(Error::dim(
            op,
            "channels",
            format!("input has {cin} channels but kernel expects {wcin}"),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::dim(
                op,
                "bias",
                format!("bias shape {:?} does not match {cout} output channels", b.shape()),
            ));
        }
    }
    let oh = p.output_len(op, "height", h, kh)?;
    let ow = p.output_len(op, "width", wd, kw)?;
    Ok(ConvGeometry {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        oh,
        ow,
        p,
    })
}

/// Input coordinate for output position `o` and kernel tap `k`, if in bounds.
#[inline]
fn source(o: usize, k: usize, p: &Conv2dParams, len: usize) -> Option<usize> {
    let pos = (o * p.stride + k * p.dilation) as isize - p.padding as isize;
    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
}

/// Gathers patches of one batch item into `col` (`patch_len × oh·ow`).
fn im2col(x: &[f64], g: &ConvGeometry, col: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match source(oy, ky, &g.p, g.h) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            let src_row = &src[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = source(ox, kx, &g.p, g.w).map_or(0.0, |ix| src_row[ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an input-shaped buffer.
fn col2im(col: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let Some(iy) = source(oy, ky, &g.p, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = source(ox, kx, &g.p, g.w) {
                            dst[iy * g.w + ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// A 1×1, stride-1, unpadded kernel reads the input item as its own column matrix.
fn is_pointwise(g: &ConvGeometry) -> bool {
    g.kh == 1 && g.kw == 1 && g.p.stride == 1 && g.p.padding == 0
}

/// `y = conv(x, w) + b` with `x: N×Cin×H×W`, `w: Cout×Cin×Kh×Kw`, `b: Cout`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: Conv2dParams) -> Result<Tensor> {
    let g = geometry("conv2d", x, w, b, p)?;
    let plane = g.out_plane();
    let mut out = vec![0.0; g.n * g.cout * plane];
    par::for_each_chunk_mut(&mut out, g.cout * plane, |n, y| {
        let xn = x.batch_item(n);
        let wm = Mat::new(w.data(), g.cout, g.patch_len());
        if is_pointwise(&g) {
            gemm(wm, Mat::new(xn, g.cin, plane), y, 0.0);
        } else {
            let mut col = vec![0.0; g.patch_len() * plane];
            im2col(xn, &g, &mut col);
            gemm(wm, Mat::new(&col, g.patch_len(), plane), y, 0.0);
        }
        if let Some(b) = b {
            for (co, row) in y.chunks_mut(plane).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Ok(Tensor::from_parts(vec![g.n, g.cout, g.oh, g.ow], out))
}

/// Nested-loop reference implementation of [`conv2d`].
pub fn conv2d_direct(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: Conv2dParams) -> Result<Tensor> {
    let g = geometry("conv2d", x, w, b, p)?;
    let mut out = Tensor::zeros([g.n, g.cout, g.oh, g.ow]);
    let (xd, wd) = (x.data(), w.data());
    let od = out.data_mut();
    for n in 0..g.n {
        for co in 0..g.cout {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..g.cin {
                        for ky in 0..g.kh {
                            let Some(iy) = source(oy, ky, &p, g.h) else { continue };
                            for kx in 0..g.kw {
                                let Some(ix) = source(ox, kx, &p, g.w) else { continue };
                                acc += xd[((n * g.cin + ci) * g.h + iy) * g.w + ix]
                                    * wd[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                            }
                        }
                    }
                    od[((n * g.cout + co) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Option<Tensor>,
}

/// Gradients of [`conv2d`] given the upstream gradient `dy`.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, with_bias: bool, p: Conv2dParams, dy: &Tensor) -> Result<ConvGrads> {
    let g = geometry("conv2d_backward", x, w, None, p)?;
    let plane = g.out_plane();
    if dy.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::dim(
            "conv2d_backward",
            "gradient",
            format!("upstream gradient shape {:?}", dy.shape()),
        ));
    }
    let parts = par::map_indexed(g.n, |n| {
        let dyn_ = Mat::new(dy.batch_item(n), g.cout, plane);
        let wm = Mat::new(w.data(), g.cout, g.patch_len());
        let mut dx = vec![0.0; g.in_item()];
        let mut dw = vec![0.0; g.cout * g.patch_len()];
        if is_pointwise(&g) {
            gemm(wm.t(), dyn_, &mut dx, 0.0);
            gemm(dyn_, Mat::new(x.batch_item(n), g.cin, plane).t(), &mut dw, 0.0);
        } else {
            let mut col = vec![0.0; g.patch_len() * plane];
            im2col(x.batch_item(n), &g, &mut col);
            gemm(dyn_, Mat::new(&col, g.patch_len(), plane).t(), &mut dw, 0.0);
            gemm(wm.t(), dyn_, &mut col, 0.0);
            col2im(&col, &g, &mut dx);
        }
        (dx, dw)
    });

    let mut dx = Vec::with_capacity(g.n * g.in_item());
    let mut dw = vec![0.0; w.numel()];
    for (dxn, dwn) in parts {
        dx.extend_from_slice(&dxn);
        dw.iter_mut().zip(&dwn).for_each(|(a, b)| *a += b);
    }
    if FLIP_BACKWARD_SIGN.load(Ordering::Relaxed) {
        dx.iter_mut().for_each(|v| *v = -*v);
    }
    let db = with_bias.then(|| channel_sums(dy, g.n, g.cout, plane));
    Ok(ConvGrads {
        dx: Tensor::from_parts(x.shape().to_vec(), dx),
        dw: Tensor::from_parts(w.shape().to_vec(), dw),
        db,
    })
}

/// Per-channel sum over batch and spatial positions, accumulated in index order.
pub(crate) fn channel_sums(t: &Tensor, n: usize, c: usize, plane: usize) -> Tensor {
    let mut out = vec![0.0; c];
    let d = t.data();
    for ni in 0..n {
        for (ci, acc) in out.iter_mut().enumerate() {
            let base = (ni * c + ci) * plane;
            *acc += d[base..base + plane].iter().sum::<f64>();
        }
    }
    Tensor::from_parts(vec![c], out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn ones_kernel_box_sum() {
        let x = Tensor::ones([1, 1, 3, 3]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, Conv2dParams::same(3, 1)).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut r = rng(1);
        let x = Tensor::uniform([2, 1, 5, 6], -1.0, 1.0, &mut r);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d(&x, &w, None, Conv2dParams::same(3, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_shape() {
        let x = Tensor::ones([1, 1, 5, 5]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, Conv2dParams::new(1, 2, 0)).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn extent_larger_than_input_is_rejected() {
        let x = Tensor::ones([1, 1, 4, 4]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let err = conv2d(&x, &w, None, Conv2dParams::new(1, 2, 0)).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::ones([1, 2, 4, 4]);
        let w = Tensor::ones([1, 3, 3, 3]);
        let err = conv2d(&x, &w, None, Conv2dParams::same(3, 1)).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn gemm_path_matches_direct_loops() {
        let mut r = rng(7);
        for (stride, dilation, padding, k) in [(1, 1, 1, 3), (2, 1, 3, 7), (1, 3, 3, 3), (2, 2, 0, 3), (1, 1, 0, 1), (2, 1, 0, 2)] {
            let x = Tensor::uniform([2, 3, 9, 11], -1.0, 1.0, &mut r);
            let w = Tensor::uniform([4, 3, k, k], -1.0, 1.0, &mut r);
            let b = Tensor::uniform([4], -1.0, 1.0, &mut r);
            let p = Conv2dParams::new(stride, dilation, padding);
            let fast = conv2d(&x, &w, Some(&b), p).unwrap();
            let slow = conv2d_direct(&x, &w, Some(&b), p).unwrap();
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "{p:?} k={k}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let mut r = rng(3);
        let p = Conv2dParams::new(2, 2, 2);
        let x = Tensor::uniform([2, 3, 8, 7], -1.0, 1.0, &mut r);
        let w = Tensor::uniform([5, 3, 3, 3], -1.0, 1.0, &mut r);
        let y = conv2d(&x, &w, None, p).unwrap();
        let u = Tensor::uniform(y.shape().to_vec(), -1.0, 1.0, &mut r);
        let grads = conv2d_backward(&x, &w, true, p, &u).unwrap();
        // linear in x: <conv(x), u> == <x, dx>
        let lhs = y.dot(&u).unwrap();
        let rhs = x.dot(&grads.dx).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        // linear in w: <conv(x; w), u> == <w, dw>
        let rhs_w = w.dot(&grads.dw).unwrap();
        assert!((lhs - rhs_w).abs() <= 1e-10 * lhs.abs().max(1.0));
        assert!((grads.db.unwrap().sum() - u.sum()).abs() < 1e-10);
    }
}
