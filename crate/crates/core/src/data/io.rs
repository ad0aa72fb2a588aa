//! Dataset directories and mask images on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::sample::Sample;
use crate::error::{Error, Result};

/// Mask pixels at or above this gray level are lesion.
pub const MASK_THRESHOLD: u8 = 128;
const EXTENSIONS: [&str; 2] = ["png", "bmp"];

fn image_error(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any supported image as interleaved RGB.
pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Reads a mask, binarized at [`MASK_THRESHOLD`].
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw().into_iter().map(|v| u8::from(v >= MASK_THRESHOLD)).collect()))
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Loads `<root>/images/<id>.{png,bmp}` with `<root>/masks/<id>.{png,bmp}`,
/// sorted by id.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images = stems(&root.join("images"))?;
    if images.is_empty() {
        return Err(Error::Data(format!("no images under {}", root.join("images").display())));
    }
    let masks = stems(&root.join("masks"))?;
    let mut out = Vec::with_capacity(images.len());
    for (id, img_path) in images {
        let mask_path = masks
            .get(&id)
            .ok_or_else(|| Error::Data(format!("missing mask for {id}")))?;
        let (h, w, image) = read_rgb(&img_path)?;
        let (mh, mw, mask) = read_mask(mask_path)?;
        if (mh, mw) != (h, w) {
            return Err(Error::Data(format!("{id}: image is {h}×{w}, mask is {mh}×{mw}")));
        }
        out.push(Sample::new(id, h, w, image, mask)?);
    }
    Ok(out)
}

/// Writes samples in the layout [`load_dataset`] reads.
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    let (img_dir, mask_dir) = (root.join("images"), root.join("masks"));
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&mask_dir)?;
    for s in samples {
        let p = img_dir.join(format!("{}.png", s.id));
        image::save_buffer(&p, &s.image, s.width as u32, s.height as u32, image::ColorType::Rgb8)
            .map_err(|e| image_error(&p, e))?;
        write_mask_png(&mask_dir.join(format!("{}.png", s.id)), &s.mask, s.height, s.width)?;
    }
    Ok(())
}

/// Writes a 0/1 mask as an 8-bit 0/255 PNG.
pub fn write_mask_png(path: &Path, mask: &[u8], h: usize, w: usize) -> Result<()> {
    let gray: Vec<u8> = mask.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
    image::save_buffer(path, &gray, w as u32, h as u32, image::ColorType::L8).map_err(|e| image_error(path, e))
}
