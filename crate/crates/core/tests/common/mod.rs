#![allow(dead_code)]

use std::path::{Path, PathBuf};

use terraseg::raster::{write_gray8, write_rgb8};
use terraseg::rng::SplitMix64;
use terraseg::trainer::TrainConfig;
use terraseg::unet::UNetConfig;

/// Writes `n` image/mask pairs whose mask is `red >= 0.5`.
///
/// Each image is a background with red in `[0, 0.3]` and a few rectangles
/// with red in `[0.7, 1]`; green and blue are noise unrelated to the mask.
pub fn red_threshold_dataset(root: &Path, n: usize, size: usize, seed: u64) {
    std::fs::create_dir_all(root.join("images")).unwrap();
    std::fs::create_dir_all(root.join("masks")).unwrap();
    let mut rng = SplitMix64::new(seed);
    let level = |rng: &mut SplitMix64, lo: f64, hi: f64| (255.0 * (lo + (hi - lo) * rng.next_f64())).round() as u8;
    for i in 0..n {
        let mut red = vec![level(&mut rng, 0.0, 0.3); size * size];
        for _ in 0..1 + rng.below(3) {
            let w = size / 8 + rng.below(size / 2);
            let h = size / 8 + rng.below(size / 2);
            let x0 = rng.below(size - w);
            let y0 = rng.below(size - h);
            let v = level(&mut rng, 0.7, 1.0);
            for y in y0..y0 + h {
                red[y * size + x0..y * size + x0 + w].fill(v);
            }
        }
        let mut rgb = Vec::with_capacity(3 * size * size);
        for &r in &red {
            rgb.extend([r, level(&mut rng, 0.0, 1.0), level(&mut rng, 0.0, 1.0)]);
        }
        let mask: Vec<u8> = red.iter().map(|&r| if r >= 128 { 255 } else { 0 }).collect();
        let stem = format!("s{i:03}");
        write_rgb8(&root.join("images").join(format!("{stem}.png")), size, size, &rgb).unwrap();
        write_gray8(&root.join("masks").join(format!("{stem}.png")), size, size, &mask).unwrap();
    }
}

/// Small-model configuration used for the memorization experiment.
pub fn overfit_config(data: &Path, out: &Path) -> TrainConfig {
    TrainConfig {
        train_batch: 4,
        val_batch: 4,
        max_epochs: 200,
        patience: 200,
        split: 0.75,
        seed: 17,
        model: UNetConfig {
            depth: 2,
            base_width: 8,
            img_size: 64,
            ..UNetConfig::default()
        },
        data_root: data.to_path_buf(),
        out_dir: out.to_path_buf(),
        ..TrainConfig::default()
    }
}

pub fn scratch() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    (dir, data, out)
}

pub mod grad;
pub mod oracle;
