//! Geometric augmentations applied identically to image and mask.

use rand::Rng;

use super::resize::resize;
use super::sample::Sample;
use crate::error::{Error, Result};
use crate::kv;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentOp {
    Rotate,
    HFlip,
    VFlip,
    /// Transpose, then resize back to the original shape.
    DFlip,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 4] = [AugmentOp::Rotate, AugmentOp::HFlip, AugmentOp::VFlip, AugmentOp::DFlip];
}

fn remap(s: &Sample, (h, w): (usize, usize), src_of: impl Fn(usize, usize) -> (usize, usize)) -> Sample {
    let mut image = Vec::with_capacity(h * w * 3);
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = src_of(y, x);
            let i = sy * s.width + sx;
            image.extend_from_slice(&s.image[i * 3..i * 3 + 3]);
            mask.push(s.mask[i]);
        }
    }
    Sample {
        id: s.id.clone(),
        height: h,
        width: w,
        image,
        mask,
    }
}

/// Mirrors columns.
pub fn hflip(s: &Sample) -> Sample {
    remap(s, s.size(), |y, x| (y, s.width - 1 - x))
}

/// Mirrors rows.
pub fn vflip(s: &Sample) -> Sample {
    remap(s, s.size(), |y, x| (s.height - 1 - y, x))
}

pub fn transpose(s: &Sample) -> Sample {
    remap(s, (s.width, s.height), |y, x| (x, y))
}

/// Transpose, resized back so the shape is unchanged.
pub fn dflip(s: &Sample) -> Sample {
    resize(&transpose(s), s.size())
}

/// Folds a continuous coordinate into `[0, n−1]` by mirroring at the ends.
fn reflect(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let m = v.rem_euclid(period);
    if m > last {
        period - m
    } else {
        m
    }
}

/// Source coordinate `(y, x)` of every output pixel for a rotation by
/// `degrees` counter-clockwise about the centre, mirrored into range.
pub fn rotation_sources(h: usize, w: usize, degrees: f64) -> Vec<(f64, f64)> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            out.push((reflect(sy, h), reflect(sx, w)));
        }
    }
    out
}

/// Bilinear sample of plane `c` of an interleaved image.
pub fn sample_bilinear(src: &[f64], w: usize, channels: usize, c: usize, (sy, sx): (f64, f64), h: usize) -> f64 {
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let at = |y: usize, x: usize| src[(y * w + x) * channels + c];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Rotation with mirrored borders: bilinear image, nearest mask.
pub fn rotate(s: &Sample, degrees: f64) -> Sample {
    let (h, w) = s.size();
    let sources = rotation_sources(h, w, degrees);
    let img: Vec<f64> = s.image.iter().map(|&v| f64::from(v)).collect();
    let mut image = Vec::with_capacity(h * w * 3);
    let mut mask = Vec::with_capacity(h * w);
    for &(sy, sx) in &sources {
        for c in 0..3 {
            image.push(sample_bilinear(&img, w, 3, c, (sy, sx), h).round().clamp(0.0, 255.0) as u8);
        }
        let (ny, nx) = ((sy.round() as usize).min(h - 1), (sx.round() as usize).min(w - 1));
        mask.push(s.mask[ny * w + nx]);
    }
    Sample {
        id: s.id.clone(),
        height: h,
        width: w,
        image,
        mask,
    }
}

/// One augmentation; rotation draws its angle uniformly from `±max_degrees`.
pub fn augment<R: Rng + ?Sized>(s: &Sample, op: AugmentOp, max_degrees: f64, rng: &mut R) -> Sample {
    match op {
        AugmentOp::Rotate => {
            let a = if max_degrees > 0.0 { rng.gen_range(-max_degrees..=max_degrees) } else { 0.0 };
            rotate(s, a)
        }
        AugmentOp::HFlip => hflip(s),
        AugmentOp::VFlip => vflip(s),
        AugmentOp::DFlip => dflip(s),
    }
}

/// Which augmentations run during training. Each enabled one is applied
/// independently with `probability`, in the order rotate, h, v, d.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPolicy {
    pub rotate: bool,
    pub hflip: bool,
    pub vflip: bool,
    pub dflip: bool,
    pub max_degrees: f64,
    pub probability: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::full()
    }
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self {
            rotate: false,
            hflip: false,
            vflip: false,
            dflip: false,
            max_degrees: 25.0,
            probability: 0.5,
        }
    }

    pub fn full() -> Self {
        Self {
            rotate: true,
            hflip: true,
            vflip: true,
            dflip: true,
            ..Self::none()
        }
    }

    pub fn only(op: AugmentOp) -> Self {
        let mut p = Self::none();
        *p.flag_mut(op) = true;
        p
    }

    fn flag_mut(&mut self, op: AugmentOp) -> &mut bool {
        match op {
            AugmentOp::Rotate => &mut self.rotate,
            AugmentOp::HFlip => &mut self.hflip,
            AugmentOp::VFlip => &mut self.vflip,
            AugmentOp::DFlip => &mut self.dflip,
        }
    }

    pub fn enabled(&self, op: AugmentOp) -> bool {
        match op {
            AugmentOp::Rotate => self.rotate,
            AugmentOp::HFlip => self.hflip,
            AugmentOp::VFlip => self.vflip,
            AugmentOp::DFlip => self.dflip,
        }
    }

    /// The augmentation study: none, each single method, all four.
    pub fn study() -> Vec<(&'static str, AugmentationPolicy)> {
        vec![
            ("W / O", Self::none()),
            ("Rotation only", Self::only(AugmentOp::Rotate)),
            ("Horizontal flip only", Self::only(AugmentOp::HFlip)),
            ("Vertical flip only", Self::only(AugmentOp::VFlip)),
            ("Diagonal flip only", Self::only(AugmentOp::DFlip)),
            ("full", Self::full()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config("aug_probability", format!("{} is outside [0, 1]", self.probability)));
        }
        if !(0.0..=180.0).contains(&self.max_degrees) {
            return Err(Error::config("aug_max_degrees", format!("{} is outside [0, 180]", self.max_degrees)));
        }
        Ok(())
    }

    /// Draws one coin per enabled op, so the stream of random numbers
    /// depends only on the policy.
    pub fn apply<R: Rng + ?Sized>(&self, s: &Sample, rng: &mut R) -> Sample {
        let mut out = s.clone();
        for op in AugmentOp::ALL {
            if self.enabled(op) && rng.gen::<f64>() < self.probability {
                out = augment(&out, op, self.max_degrees, rng);
            }
        }
        out
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        [
            ("aug_rotate", self.rotate.to_string()),
            ("aug_hflip", self.hflip.to_string()),
            ("aug_vflip", self.vflip.to_string()),
            ("aug_dflip", self.dflip.to_string()),
            ("aug_max_degrees", kv::float(self.max_degrees)),
            ("aug_probability", kv::float(self.probability)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "aug_rotate" => self.rotate = kv::parse_bool(key, v)?,
            "aug_hflip" => self.hflip = kv::parse_bool(key, v)?,
            "aug_vflip" => self.vflip = kv::parse_bool(key, v)?,
            "aug_dflip" => self.dflip = kv::parse_bool(key, v)?,
            "aug_max_degrees" => self.max_degrees = kv::parse_f64(key, v)?,
            "aug_probability" => self.probability = kv::parse_f64(key, v)?,
            "augmentation" => {
                *self = match v {
                    "none" => Self::none(),
                    "full" => Self::full(),
                    "rotate" => Self::only(AugmentOp::Rotate),
                    "hflip" => Self::only(AugmentOp::HFlip),
                    "vflip" => Self::only(AugmentOp::VFlip),
                    "dflip" => Self::only(AugmentOp::DFlip),
                    _ => return Err(Error::config(key, format!("unknown preset {v:?}"))),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}
