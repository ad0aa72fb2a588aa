//! Resampling with half-pixel centres: bilinear for images, nearest for masks.
//! Resampling to the current size is the identity.

use super::sample::Sample;

/// Source coordinate of destination index `d` when mapping `src_len` onto `dst_len`.
fn source_coord(d: usize, src_len: usize, dst_len: usize) -> f64 {
    (d as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

fn nearest_index(d: usize, src_len: usize, dst_len: usize) -> usize {
    ((d * src_len * 2 + src_len) / (dst_len * 2)).min(src_len - 1)
}

fn bilinear_taps(d: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = source_coord(d, src_len, dst_len).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resampling of an interleaved `channels`-plane `u8` image.
pub fn resize_bilinear(src: &[u8], (h, w): (usize, usize), channels: usize, (th, tw): (usize, usize)) -> Vec<u8> {
    let cols: Vec<_> = (0..tw).map(|x| bilinear_taps(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw * channels);
    for y in 0..th {
        let (y0, y1, fy) = bilinear_taps(y, h, th);
        for &(x0, x1, fx) in &cols {
            for c in 0..channels {
                let at = |yy: usize, xx: usize| f64::from(src[(yy * w + xx) * channels + c]);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Nearest-neighbour resampling of a single-plane map.
pub fn resize_nearest(src: &[u8], (h, w): (usize, usize), (th, tw): (usize, usize)) -> Vec<u8> {
    let cols: Vec<_> = (0..tw).map(|x| nearest_index(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let row = &src[nearest_index(y, h, th) * w..][..w];
        out.extend(cols.iter().map(|&x| row[x]));
    }
    out
}

pub fn resize(sample: &Sample, target: (usize, usize)) -> Sample {
    assert!(target.0 > 0 && target.1 > 0, "empty target size");
    Sample {
        id: sample.id.clone(),
        height: target.0,
        width: target.1,
        image: resize_bilinear(&sample.image, sample.size(), 3, target),
        mask: resize_nearest(&sample.mask, sample.size(), target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Sample {
        let image = (0..h * w * 3).map(|i| (i * 7 % 251) as u8).collect();
        let mask = (0..h * w).map(|i| u8::from(i % 3 == 0)).collect();
        Sample::new("r", h, w, image, mask).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let s = ramp(7, 11);
        assert_eq!(resize(&s, (7, 11)), s);
    }

    #[test]
    fn shapes_and_binary_mask() {
        let s = ramp(56, 77);
        let r = resize(&s, (19, 26));
        assert_eq!(r.image.len(), 19 * 26 * 3);
        assert!(r.mask.iter().all(|&m| m <= 1));
        let solid = Sample::new("s", 5, 6, vec![9; 90], vec![1; 30]).unwrap();
        let up = resize(&solid, (13, 3));
        assert!(up.mask.iter().all(|&m| m == 1));
        assert!(up.image.iter().all(|&v| v == 9));
    }

    #[test]
    fn integer_upscale_replicates_mask() {
        let s = Sample::new("m", 2, 2, vec![0; 12], vec![1, 0, 0, 1]).unwrap();
        let r = resize(&s, (4, 4));
        assert_eq!(r.mask, vec![1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1]);
    }
}
