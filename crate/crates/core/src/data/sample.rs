use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image with its binary lesion mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Row-major, interleaved RGB.
    pub image: Vec<u8>,
    /// Row-major, values 0 or 1.
    pub mask: Vec<u8>,
}

impl Sample {
    pub fn new(id: impl Into<String>, height: usize, width: usize, image: Vec<u8>, mask: Vec<u8>) -> Result<Self> {
        let id = id.into();
        if image.len() != height * width * 3 {
            return Err(Error::Data(format!("{id}: image has {} bytes, expected {height}×{width}×3", image.len())));
        }
        if mask.len() != height * width {
            return Err(Error::Data(format!("{id}: mask has {} values, expected {height}×{width}", mask.len())));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Data(format!("{id}: mask is not binary")));
        }
        Ok(Self {
            id,
            height,
            width,
            image,
            mask,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.image[i], self.image[i + 1], self.image[i + 2]]
    }

    /// `1×3×H×W` in `[0, 1]`.
    pub fn image_tensor(&self) -> Tensor {
        images_tensor(std::slice::from_ref(self)).expect("single sample")
    }

    /// `1×1×H×W` of zeros and ones.
    pub fn mask_tensor(&self) -> Tensor {
        masks_tensor(std::slice::from_ref(self)).expect("single sample")
    }
}

fn check_uniform(samples: &[Sample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    if let Some(s) = samples.iter().find(|s| s.size() != first.size()) {
        return Err(Error::Data(format!(
            "{} is {}×{}, batch is {}×{}",
            s.id, s.height, s.width, first.height, first.width
        )));
    }
    Ok(first.size())
}

/// Stacks images as `N×3×H×W`, scaled to `[0, 1]`.
pub fn images_tensor(samples: &[Sample]) -> Result<Tensor> {
    let (h, w) = check_uniform(samples)?;
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        for c in 0..3 {
            data.extend(s.image.iter().skip(c).step_by(3).map(|&v| f64::from(v) / 255.0));
        }
    }
    Tensor::new([samples.len(), 3, h, w], data)
}

/// Stacks masks as `N×1×H×W`.
pub fn masks_tensor(samples: &[Sample]) -> Result<Tensor> {
    let (h, w) = check_uniform(samples)?;
    let data = samples.iter().flat_map(|s| s.mask.iter().map(|&m| f64::from(m))).collect();
    Tensor::new([samples.len(), 1, h, w], data)
}
