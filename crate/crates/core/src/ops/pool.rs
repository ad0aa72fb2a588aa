//! Windowed and global pooling.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

fn check_even(op: &'static str, h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 {
        return Err(Error::dim(op, "height", format!("height {h} is odd")));
    }
    if w % 2 != 0 {
        return Err(Error::dim(op, "width", format!("width {w} is odd")));
    }
    Ok(())
}

fn pooled_len(op: &'static str, axis: &'static str, len: usize, k: usize, s: usize, pad: usize) -> Result<usize> {
    if k == 0 || s == 0 || pad >= k {
        return Err(Error::dim(op, axis, format!("invalid window {k}, stride {s}, padding {pad}")));
    }
    let padded = len + 2 * pad;
    if k > padded {
        return Err(Error::dim(op, axis, format!("window {k} exceeds padded extent {padded}")));
    }
    Ok((padded - k) / s + 1)
}

/// Result of [`max_pool2d`]: the pooled tensor plus, for every output element,
/// the flat in-plane index of the input element it came from.
pub struct MaxPooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Max pooling over `k×k` windows. Padded positions never win; ties go to the
/// first element in row-major window order. Spatial dims must be even.
pub fn max_pool2d(x: &Tensor, k: usize, stride: usize, padding: usize) -> Result<MaxPooled> {
    const OP: &str = "max_pool2d";
    let (n, c, h, w) = x.dims4(OP)?;
    check_even(OP, h, w)?;
    let oh = pooled_len(OP, "height", h, k, stride, padding)?;
    let ow = pooled_len(OP, "width", w, k, stride, padding)?;
    let out_plane = oh * ow;
    let planes = par::map_indexed(n * c, |nc| {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
        let mut vals = vec![0.0; out_plane];
        let mut idx = vec![0usize; out_plane];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let i = iy as usize * w + ix as usize;
                        if best_i == usize::MAX || src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                vals[oy * ow + ox] = best;
                idx[oy * ow + ox] = best_i;
            }
        }
        (vals, idx)
    });
    let mut out = Vec::with_capacity(n * c * out_plane);
    let mut argmax = Vec::with_capacity(n * c * out_plane);
    for (v, i) in planes {
        out.extend_from_slice(&v);
        argmax.extend_from_slice(&i);
    }
    Ok(MaxPooled {
        output: Tensor::from_parts(vec![n, c, oh, ow], out),
        argmax,
    })
}

/// Routes each upstream gradient to its recorded argmax position.
pub fn max_pool2d_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let planes = input_shape[0] * input_shape[1];
    let out_plane = dy.numel() / planes;
    let mut dx = vec![0.0; input_shape.iter().product()];
    par::for_each_chunk_mut(&mut dx, h * w, |nc, dst| {
        let up = &dy.data()[nc * out_plane..(nc + 1) * out_plane];
        let idx = &argmax[nc * out_plane..(nc + 1) * out_plane];
        for (g, &i) in up.iter().zip(idx) {
            dst[i] += g;
        }
    });
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Average pooling over non-overlapping-or-strided `k×k` windows without padding.
pub fn avg_pool2d(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    const OP: &str = "avg_pool2d";
    let (n, c, h, w) = x.dims4(OP)?;
    check_even(OP, h, w)?;
    let oh = pooled_len(OP, "height", h, k, stride, 0)?;
    let ow = pooled_len(OP, "width", w, k, stride, 0)?;
    let norm = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; n * c * oh * ow];
    par::for_each_chunk_mut(&mut out, oh * ow, |nc, dst| {
        let src = &x.data()[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        acc += src[(oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                dst[oy * ow + ox] = acc * norm;
            }
        }
    });
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

pub fn avg_pool2d_backward(input_shape: &[usize], k: usize, stride: usize, dy: &Tensor) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let norm = 1.0 / (k * k) as f64;
    let mut dx = vec![0.0; input_shape.iter().product()];
    par::for_each_chunk_mut(&mut dx, h * w, |nc, dst| {
        let up = &dy.data()[nc * oh * ow..(nc + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = up[oy * ow + ox] * norm;
                for ky in 0..k {
                    for kx in 0..k {
                        dst[(oy * stride + ky) * w + ox * stride + kx] += g;
                    }
                }
            }
        }
    });
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Mean over all spatial positions: `N×C×H×W → N×C`.
/// Mean over all spatial positions, taken about the first element so a
/// constant plane comes back exactly.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let plane = h * w;
    let out = x
        .data()
        .chunks(plane)
        .map(|p| p[0] + p.iter().map(|&v| v - p[0]).sum::<f64>() / plane as f64)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn global_avg_pool_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    let plane = input_shape[2] * input_shape[3];
    let mut dx = Vec::with_capacity(input_shape.iter().product());
    for &g in dy.data() {
        dx.extend(std::iter::repeat(g / plane as f64).take(plane));
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Maximum over all spatial positions with first-occurrence argmax.
pub fn global_max_pool(x: &Tensor) -> Result<MaxPooled> {
    let (n, c, h, w) = x.dims4("global_max_pool")?;
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c);
    let mut argmax = Vec::with_capacity(n * c);
    for p in x.data().chunks(plane) {
        let (i, v) = p
            .iter()
            .enumerate()
            .fold((0, p[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        out.push(v);
        argmax.push(i);
    }
    Ok(MaxPooled {
        output: Tensor::from_parts(vec![n, c], out),
        argmax,
    })
}

pub fn global_max_pool_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let plane = input_shape[2] * input_shape[3];
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (nc, (&g, &i)) in dy.data().iter().zip(argmax).enumerate() {
        dx[nc * plane + i] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(v: [f64; 4]) -> Tensor {
        Tensor::new([1, 1, 2, 2], v.to_vec()).unwrap()
    }

    #[test]
    fn max_and_avg_of_block() {
        let x = block([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(max_pool2d(&x, 2, 2, 0).unwrap().output.data(), [4.0]);
        assert_eq!(avg_pool2d(&x, 2, 2).unwrap().data(), [2.5]);
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let x = Tensor::full([2, 3, 4, 6], 1.75);
        let m = max_pool2d(&x, 2, 2, 0).unwrap().output;
        let a = avg_pool2d(&x, 2, 2).unwrap();
        assert_eq!(m.shape(), [2, 3, 2, 3]);
        assert!(m.data().iter().chain(a.data()).all(|&v| v == 1.75));
    }

    #[test]
    fn tie_routes_gradient_to_first() {
        let x = block([5.0, 5.0, 0.0, 0.0]);
        let p = max_pool2d(&x, 2, 2, 0).unwrap();
        let dx = max_pool2d_backward(x.shape(), &p.argmax, &Tensor::ones([1, 1, 1, 1]));
        assert_eq!(dx.data(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::ones([1, 1, 3, 4]);
        assert!(matches!(max_pool2d(&x, 2, 2, 0), Err(Error::Dimension { axis: "height", .. })));
        let x = Tensor::ones([1, 1, 4, 5]);
        assert!(matches!(avg_pool2d(&x, 2, 2), Err(Error::Dimension { axis: "width", .. })));
    }

    #[test]
    fn padded_three_by_three_halves() {
        let x = Tensor::ones([1, 2, 8, 6]);
        let p = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(p.output.shape(), [1, 2, 4, 3]);
    }

    #[test]
    fn global_pools() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), [2.5]);
        assert_eq!(global_max_pool(&x).unwrap().output.data(), [4.0]);
        let single = Tensor::new([1, 2, 1, 1], vec![-3.0, 7.0]).unwrap();
        assert_eq!(global_avg_pool(&single).unwrap().data(), [-3.0, 7.0]);
        assert_eq!(global_max_pool(&single).unwrap().output.data(), [-3.0, 7.0]);
    }
}
