//! Loading, resizing, splitting, augmentation and synthetic data.

pub mod augment;
pub mod io;
pub mod resize;
pub mod sample;
pub mod split;
pub mod synth;

pub use augment::{augment, dflip, hflip, rotate, vflip, AugmentOp, AugmentationPolicy};
pub use io::{load_dataset, save_dataset, write_mask_png};
pub use resize::resize;
pub use sample::{images_tensor, masks_tensor, Sample};
pub use split::{split, Split, SplitSpec};
pub use synth::synth_dataset;
