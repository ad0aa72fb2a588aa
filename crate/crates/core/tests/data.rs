use std::collections::BTreeSet;
use std::fs;

use cascn::data::{load_dataset, resize, save_dataset, split, synth_dataset, Sample, SplitSpec};
use cascn::Error;

fn write_gray(path: &std::path::Path, h: u32, w: u32, value: u8) {
    image::save_buffer(path, &vec![value; (h * w) as usize], w, h, image::ColorType::L8).unwrap();
}

#[test]
fn save_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_dataset(5, (24, 40), 7).unwrap();
    save_dataset(dir.path(), &samples).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), samples);
}

#[test]
fn missing_mask_names_the_image() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &synth_dataset(3, (16, 16), 0).unwrap()).unwrap();
    fs::remove_file(dir.path().join("masks/synth_0001.png")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(&err, Error::Data(m) if m.contains("synth_0001")), "{err}");
}

#[test]
fn empty_root_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("images")).unwrap();
    fs::create_dir_all(dir.path().join("masks")).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn gray_mask_values_binarize() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("images")).unwrap();
    fs::create_dir_all(dir.path().join("masks")).unwrap();
    image::save_buffer(dir.path().join("images/a.png"), &[90u8; 4 * 6 * 3], 6, 4, image::ColorType::Rgb8).unwrap();
    write_gray(&dir.path().join("masks/a.png"), 4, 6, 200);
    image::save_buffer(dir.path().join("images/b.bmp"), &[90u8; 4 * 6 * 3], 6, 4, image::ColorType::Rgb8).unwrap();
    write_gray(&dir.path().join("masks/b.png"), 4, 6, 100);
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded[0].mask, vec![1; 24]);
    assert_eq!(loaded[1].mask, vec![0; 24]);
}

#[test]
fn resize_to_table_size() {
    let big = synth_dataset(1, (560, 768), 1).unwrap().remove(0);
    let small = resize(&big, (192, 256));
    assert_eq!(small.size(), (192, 256));
    assert_eq!((small.image.len(), small.mask.len()), (192 * 256 * 3, 192 * 256));
    assert!(small.positives() > 0 && small.mask.iter().all(|&m| m <= 1));
    assert_eq!(resize(&big, (560, 768)), big);

    let solid = Sample::new("s", 20, 30, vec![10; 20 * 30 * 3], vec![1; 20 * 30]).unwrap();
    for target in [(7, 9), (64, 48), (20, 30)] {
        assert!(resize(&solid, target).mask.iter().all(|&m| m == 1));
    }
}

#[test]
fn split_sizes_and_seeding() {
    let samples = synth_dataset(200, (8, 8), 0).unwrap();
    let spec = SplitSpec::default();
    let parts = split(&samples, &spec).unwrap();
    assert_eq!((parts.train.len(), parts.val.len(), parts.test.len()), (140, 20, 40));
    let ids: BTreeSet<_> = [&parts.train, &parts.val, &parts.test]
        .into_iter()
        .flatten()
        .map(|s| s.id.clone())
        .collect();
    assert_eq!(ids.len(), 200);
    assert_eq!(split(&samples, &spec).unwrap(), parts);
    let reseeded = split(&samples, &SplitSpec { seed: 9, ..spec.clone() }).unwrap();
    assert_ne!(reseeded.train, parts.train);

    let lopsided = SplitSpec { train: 1.0, val: 0.0, test: 0.0, seed: 0 };
    assert!(matches!(split(&samples, &lopsided), Err(Error::Contract(_))));
}

#[test]
fn synthetic_lesions() {
    let samples = synth_dataset(8, (48, 64), 0).unwrap();
    assert_eq!(samples.len(), 8);
    for s in &samples {
        let fraction = s.positives() as f64 / (48.0 * 64.0);
        assert!((0.05..=0.60).contains(&fraction), "{}: {fraction}", s.id);
    }
    assert_eq!(synth_dataset(8, (48, 64), 0).unwrap(), samples);
}
