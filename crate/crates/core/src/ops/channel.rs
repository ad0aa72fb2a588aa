//! Channel-axis operators: concatenation, per-channel scaling, 1-D convolution
//! across the channel vector, and spatial broadcast.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Concatenates 4-D tensors along the channel axis.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    const OP: &str = "concat_channels";
    let first = xs
        .first()
        .ok_or_else(|| Error::Contract("concat_channels needs at least one input".into()))?;
    let (n, _, h, w) = first.dims4(OP)?;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let (xn, c, xh, xw) = x.dims4(OP)?;
        if xn != n {
            return Err(Error::dim(OP, "batch", format!("{xn} vs {n}")));
        }
        if (xh, xw) != (h, w) {
            return Err(Error::dim(OP, "spatial", format!("{xh}×{xw} vs {h}×{w}")));
        }
        channels.push(c);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for ni in 0..n {
        for (x, &c) in xs.iter().zip(&channels) {
            out.extend_from_slice(&x.data()[ni * c * plane..(ni + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total, h, w], out))
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn split_channels(dy: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let s = dy.shape();
    let (n, total, plane) = (s[0], s[1], s[2] * s[3]);
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(n * c * plane)).collect();
    for ni in 0..n {
        let mut offset = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            let base = (ni * total + offset) * plane;
            part.extend_from_slice(&dy.data()[base..base + c * plane]);
            offset += c;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_parts(vec![n, c, s[2], s[3]], d))
        .collect()
}

/// `y[n, c, :, :] = x[n, c, :, :] · s[n, c]`.
pub fn scale_channels(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("scale_channels")?;
    if s.shape() != [n, c] {
        return Err(Error::dim(
            "scale_channels",
            "channels",
            format!("scale shape {:?} for input {:?}", s.shape(), x.shape()),
        ));
    }
    let plane = h * w;
    let mut out = x.data().to_vec();
    for (chunk, &k) in out.chunks_mut(plane).zip(s.data()) {
        chunk.iter_mut().for_each(|v| *v *= k);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Returns `(dx, ds)` for [`scale_channels`].
pub fn scale_channels_backward(x: &Tensor, s: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let plane = x.shape()[2] * x.shape()[3];
    let mut dx = dy.data().to_vec();
    let mut ds = Vec::with_capacity(s.numel());
    for ((dchunk, xchunk), &k) in dx.chunks_mut(plane).zip(x.data().chunks(plane)).zip(s.data()) {
        ds.push(dchunk.iter().zip(xchunk).map(|(g, v)| g * v).sum());
        dchunk.iter_mut().for_each(|g| *g *= k);
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(s.shape().to_vec(), ds),
    )
}

/// 1-D convolution sliding along the channel vector of each batch row, with
/// zero padding `(k−1)/2` at both ends and one weight vector shared by every
/// position. `v: N×C`, `w: k` (odd).
pub fn conv1d_channels(v: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, c) = v.dims2("conv1d_channels")?;
    let k = conv1d_kernel_len(w)?;
    let half = (k / 2) as isize;
    let mut out = vec![0.0; n * c];
    for ni in 0..n {
        let row = &v.data()[ni * c..(ni + 1) * c];
        for i in 0..c {
            let mut acc = 0.0;
            for (j, &wj) in w.data().iter().enumerate() {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < c {
                    acc += wj * row[src as usize];
                }
            }
            out[ni * c + i] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Returns `(dv, dw)` for [`conv1d_channels`].
pub fn conv1d_channels_backward(v: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (n, c) = (v.shape()[0], v.shape()[1]);
    let k = w.numel();
    let half = (k / 2) as isize;
    let mut dv = vec![0.0; n * c];
    let mut dw = vec![0.0; k];
    for ni in 0..n {
        let row = &v.data()[ni * c..(ni + 1) * c];
        for i in 0..c {
            let g = dy.data()[ni * c + i];
            for (j, &wj) in w.data().iter().enumerate() {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < c {
                    dw[j] += g * row[src as usize];
                    dv[ni * c + src as usize] += g * wj;
                }
            }
        }
    }
    (
        Tensor::from_parts(v.shape().to_vec(), dv),
        Tensor::from_parts(w.shape().to_vec(), dw),
    )
}

fn conv1d_kernel_len(w: &Tensor) -> Result<usize> {
    match *w.shape() {
        [k] if k % 2 == 1 => Ok(k),
        _ => Err(Error::dim(
            "conv1d_channels",
            "kernel",
            format!("expected an odd-length vector, got shape {:?}", w.shape()),
        )),
    }
}

/// Repeats an `N×C×1×1` map over an `h×w` grid.
pub fn broadcast_spatial(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, xh, xw) = x.dims4("broadcast_spatial")?;
    if (xh, xw) != (1, 1) {
        return Err(Error::dim("broadcast_spatial", "spatial", format!("expected 1×1 input, got {xh}×{xw}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::dim("broadcast_spatial", "spatial", "target size must be positive"));
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for &v in x.data() {
        out.extend(std::iter::repeat(v).take(h * w));
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

pub fn broadcast_spatial_backward(dy: &Tensor) -> Tensor {
    let s = dy.shape();
    let plane = s[2] * s[3];
    let sums = dy.data().chunks(plane).map(|p| p.iter().sum()).collect();
    Tensor::from_parts(vec![s[0], s[1], 1, 1], sums)
}

/// Keeps the top-left `h×w` window of every plane.
pub fn crop_spatial(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, xh, xw) = x.dims4("crop_spatial")?;
    if h == 0 || w == 0 || h > xh || w > xw {
        return Err(Error::dim("crop_spatial", "spatial", format!("cannot crop {xh}×{xw} to {h}×{w}")));
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in x.data().chunks(xh * xw) {
        for row in plane.chunks(xw).take(h) {
            out.extend_from_slice(&row[..w]);
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

pub fn crop_spatial_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    let (xh, xw) = (input_shape[2], input_shape[3]);
    let (h, w) = (dy.shape()[2], dy.shape()[3]);
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (dst, src) in dx.chunks_mut(xh * xw).zip(dy.data().chunks(h * w)) {
        for (y, row) in src.chunks(w).enumerate() {
            dst[y * xw..y * xw + w].copy_from_slice(row);
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Extends every plane to `h×w` by mirroring across the bottom and right
/// edges, edge pixel included. Each extension must not exceed the source size.
pub fn pad_mirror(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, xh, xw) = x.dims4("pad_mirror")?;
    if h < xh || w < xw || h > 2 * xh || w > 2 * xw {
        return Err(Error::dim("pad_mirror", "spatial", format!("cannot mirror {xh}×{xw} to {h}×{w}")));
    }
    let fold = |i: usize, len: usize| if i < len { i } else { 2 * len - 1 - i };
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in x.data().chunks(xh * xw) {
        for y in 0..h {
            let row = &plane[fold(y, xh) * xw..][..xw];
            out.extend((0..w).map(|x| row[fold(x, xw)]));
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_mirror() {
        let x = Tensor::new([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = pad_mirror(&x, 3, 5).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 3.0, 2.0, 4.0, 5.0, 6.0, 6.0, 5.0, 4.0, 5.0, 6.0, 6.0, 5.0]);
        assert_eq!(crop_spatial(&p, 2, 3).unwrap(), x);
        assert!(pad_mirror(&x, 5, 3).is_err());
        let dy = Tensor::ones([1, 1, 2, 3]);
        let dx = crop_spatial_backward(&[1, 1, 3, 5], &dy);
        assert_eq!(dx.sum(), 6.0);
        assert_eq!(dx.data()[4], 0.0);
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::new([1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_examples() {
        let v = row(&[1.0, 2.0, 3.0, 4.0]);
        let id = Tensor::new([3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(conv1d_channels(&v, &id).unwrap(), v);
        let ones = Tensor::ones([3]);
        assert_eq!(conv1d_channels(&v, &ones).unwrap().data(), [3.0, 6.0, 9.0, 7.0]);
        let zero = Tensor::zeros([3]);
        assert!(conv1d_channels(&v, &zero).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        assert!(conv1d_channels(&row(&[1.0, 2.0]), &Tensor::ones([2])).is_err());
    }

    #[test]
    fn concat_adds_channels_and_splits_back() {
        let a = Tensor::full([2, 64, 3, 4], 1.0);
        let b = Tensor::full([2, 32, 3, 4], 2.0);
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), [2, 96, 3, 4]);
        let parts = split_channels(&y, &[64, 32]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros([1, 1, 3, 4]);
        let b = Tensor::zeros([1, 1, 4, 4]);
        assert!(matches!(
            concat_channels(&[&a, &b]),
            Err(Error::Dimension { axis: "spatial", .. })
        ));
    }

    #[test]
    fn broadcast_round_trip() {
        let x = Tensor::new([1, 2, 1, 1], vec![1.5, -2.0]).unwrap();
        let y = broadcast_spatial(&x, 3, 2).unwrap();
        assert_eq!(&y.data()[..6], [1.5; 6]);
        assert_eq!(broadcast_spatial_backward(&y).data(), [9.0, -12.0]);
    }
}
