//! Synthetic dermoscopy stand-in: textured skin with one dark elliptical
//! lesion whose mask is the exact ellipse interior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sample::Sample;
use crate::error::{Error, Result};

pub const MIN_LESION_FRACTION: f64 = 0.05;
pub const MAX_LESION_FRACTION: f64 = 0.60;

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// `< 1` inside.
    fn level(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * self.cos + dy * self.sin) / self.rx;
        let v = (-dx * self.sin + dy * self.cos) / self.ry;
        u * u + v * v
    }
}

fn draw_ellipse(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Ellipse, Vec<u8>) {
    let (hf, wf) = (h as f64, w as f64);
    let short = hf.min(wf);
    loop {
        let e = Ellipse {
            cy: hf * rng.gen_range(0.35..0.65),
            cx: wf * rng.gen_range(0.35..0.65),
            ry: short * rng.gen_range(0.18..0.42),
            rx: short * rng.gen_range(0.18..0.42),
            cos: 0.0,
            sin: 0.0,
        };
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let e = Ellipse {
            cos: theta.cos(),
            sin: theta.sin(),
            ..e
        };
        let mask: Vec<u8> = (0..h * w)
            .map(|i| u8::from(e.level((i / w) as f64, (i % w) as f64) <= 1.0))
            .collect();
        let frac = mask.iter().filter(|&&m| m == 1).count() as f64 / (h * w) as f64;
        if (MIN_LESION_FRACTION..=MAX_LESION_FRACTION).contains(&frac) {
            return (e, mask);
        }
    }
}

fn one(id: String, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Sample {
    let (e, mask) = draw_ellipse(rng, h, w);
    let skin = [rng.gen_range(190.0..230.0), rng.gen_range(140.0..175.0), rng.gen_range(120.0..150.0)];
    let lesion = [rng.gen_range(70.0..120.0), rng.gen_range(40.0..75.0), rng.gen_range(25.0..60.0)];
    let (fy, fx, phase) = (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4), rng.gen_range(0.0..6.3));
    let blur = rng.gen_range(0.05..0.2);
    let mut image = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let level = e.level(y as f64, x as f64);
            // 1 deep inside, 0 outside, smooth across the rim
            let t = ((1.0 + blur - level) / (2.0 * blur)).clamp(0.0, 1.0);
            let alpha = t * t * (3.0 - 2.0 * t);
            let texture = 8.0 * ((y as f64 * fy + phase).sin() * (x as f64 * fx).cos());
            for c in 0..3 {
                let noise = rng.gen_range(-6.0..6.0);
                let v = skin[c] * (1.0 - alpha) + lesion[c] * alpha + texture + noise;
                image.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Sample {
        id,
        height: h,
        width: w,
        image,
        mask,
    }
}

/// `n` samples of size `h×w`, identical for identical seeds.
pub fn synth_dataset(n: usize, (h, w): (usize, usize), seed: u64) -> Result<Vec<Sample>> {
    if h < 8 || w < 8 {
        return Err(Error::Data(format!("synthetic size {h}×{w} is below 8×8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|i| one(format!("synth_{i:04}"), h, w, &mut rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lesion_fraction_bounds() {
        let s = synth_dataset(8, (48, 64), 1).unwrap();
        assert_eq!(s.len(), 8);
        for x in &s {
            let f = x.positives() as f64 / (48.0 * 64.0);
            assert!((0.05..=0.6).contains(&f), "{f}");
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(synth_dataset(3, (16, 20), 9).unwrap(), synth_dataset(3, (16, 20), 9).unwrap());
        assert_ne!(synth_dataset(1, (16, 20), 9).unwrap(), synth_dataset(1, (16, 20), 10).unwrap());
    }

    #[test]
    fn lesion_is_darker() {
        let s = &synth_dataset(1, (48, 64), 3).unwrap()[0];
        let mean = |want: u8| {
            let px: Vec<f64> = (0..48 * 64).filter(|&i| s.mask[i] == want).map(|i| f64::from(s.image[i * 3])).collect();
            px.iter().sum::<f64>() / px.len() as f64
        };
        assert!(mean(1) + 50.0 < mean(0));
    }
}
