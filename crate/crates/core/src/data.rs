//! Dataset discovery, train/validation split, sample decoding and batching.
//!
//! Layout on disk:
//!
//! ```text
//! <root>/images/<stem>.(png|ppm)
//! <root>/masks/<stem>.(png|pgm)
//! ```
//!
//! Stems pair an image with its mask; extensions may differ.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{read_gray8, read_rgb8, resize_bilinear, resize_nearest};
use crate::rng::{epoch_seed, SplitMix64};
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: &[&str] = &["png", "ppm", "pnm"];
const MASK_EXTENSIONS: &[&str] = &["png", "pgm", "pnm"];

/// Mask pixels at or above this 8-bit level are foreground.
pub const MASK_THRESHOLD: u8 = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub stem: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

/// Image/mask pairs ordered by stem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn sorted(root: PathBuf, mut entries: Vec<ManifestEntry>) -> Self {
        entries.sort_by(|a, b| a.stem.cmp(&b.stem));
        Self { root, entries }
    }
}

/// Result of scanning a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetScan {
    pub manifest: Manifest,
    /// One message per file that has no partner in the other directory.
    pub warnings: Vec<String>,
}

fn list_stems(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut stems = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let (Some(ext), Some(stem)) = (ext, path.file_stem().and_then(|s| s.to_str())) else {
            continue;
        };
        if !path.is_file() || !extensions.contains(&ext.as_str()) {
            continue;
        }
        if let Some(prev) = stems.insert(stem.to_string(), path.clone()) {
            return Err(Error::Dataset(format!(
                "stem {stem:?} is ambiguous: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(stems)
}

/// Pairs `images/` and `masks/` by stem.
pub fn scan_dataset(root: &Path) -> Result<DatasetScan> {
    let images = list_stems(&root.join("images"), IMAGE_EXTENSIONS)?;
    let mut masks = list_stems(&root.join("masks"), MASK_EXTENSIONS)?;
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (stem, image_path) in images {
        match masks.remove(&stem) {
            Some(mask_path) => entries.push(ManifestEntry {
                stem,
                image_path,
                mask_path,
            }),
            None => warnings.push(format!("image {} has no mask", image_path.display())),
        }
    }
    for path in masks.values() {
        warnings.push(format!("mask {} has no image", path.display()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "no image/mask pairs under {}",
            root.display()
        )));
    }
    Ok(DatasetScan {
        manifest: Manifest::sorted(root.to_path_buf(), entries),
        warnings,
    })
}

/// Seeded Fisher–Yates shuffle, first `floor(n · fraction)` to training and
/// the rest to validation. Both halves come back ordered by stem.
pub fn split_manifest(m: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = m.len();
    if n < 2 {
        return Err(Error::Dataset(format!("cannot split {n} entries")));
    }
    // Tolerance absorbs products like 0.29 · 100 = 28.999999999999996.
    let n_train = ((n as f64) * train_fraction + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Dataset(format!(
            "fraction {train_fraction} of {n} entries leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let pick = |idx: &[usize]| idx.iter().map(|&i| m.entries[i].clone()).collect::<Vec<_>>();
    Ok((
        Manifest::sorted(m.root.clone(), pick(&order[..n_train])),
        Manifest::sorted(m.root.clone(), pick(&order[n_train..])),
    ))
}

/// One decoded training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3×S×S`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `1×S×S`, values exactly 0 or 1.
    pub mask: Tensor<f32>,
}

/// Decodes an RGB image, resizes it bilinearly to `size×size` and scales to `[0, 1]`.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let raster = read_rgb8(path)?;
    let (w, h) = (raster.width, raster.height);
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane: Vec<f32> = raster.pixels[c..].iter().step_by(3).map(|&v| v as f32).collect();
        let resized = resize_bilinear(&plane, w, h, size, size);
        data.extend(resized.into_iter().map(|v| v / 255.0));
    }
    Tensor::new(&[3, size, size], data)
}

/// Decodes a mask, resizes it by nearest neighbour to `size×size` and
/// binarizes at [`MASK_THRESHOLD`].
pub fn load_mask(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let raster = read_gray8(path)?;
    let resized = resize_nearest(&raster.pixels, raster.width, raster.height, size, size);
    let data = resized
        .into_iter()
        .map(|v| if v >= MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(&[1, size, size], data)
}

pub fn load_sample(entry: &ManifestEntry, target_size: usize) -> Result<Sample> {
    Ok(Sample {
        image: load_image(&entry.image_path, target_size)?,
        mask: load_mask(&entry.mask_path, target_size)?,
    })
}

/// Order in which a manifest is visited.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchOrder {
    /// Manifest order; used for validation.
    Sequential,
    /// Fisher–Yates with a SplitMix64 stream seeded by `hash64(seed, epoch)`.
    Shuffled { seed: u64, epoch: usize },
}

/// Groups `0..n` into batches; the last batch may be short.
pub fn plan_batches(n: usize, batch_size: usize, order: BatchOrder) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if let BatchOrder::Shuffled { seed, epoch } = order {
        SplitMix64::new(epoch_seed(seed, epoch)).shuffle(&mut idx);
    }
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub stems: Vec<String>,
    /// `N×3×S×S`.
    pub images: Tensor<f32>,
    /// `N×1×S×S`.
    pub masks: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }
}

/// Decodes the given manifest entries (in parallel) and stacks them in order.
pub fn load_batch(m: &Manifest, indices: &[usize], size: usize) -> Result<Batch> {
    let samples = indices
        .par_iter()
        .map(|&i| load_sample(&m.entries[i], size))
        .collect::<Result<Vec<_>>>()?;
    let (images, masks): (Vec<_>, Vec<_>) = samples.into_iter().map(|s| (s.image, s.mask)).unzip();
    Ok(Batch {
        stems: indices.iter().map(|&i| m.entries[i].stem.clone()).collect(),
        images: Tensor::stack(&images)?,
        masks: Tensor::stack(&masks)?,
    })
}

/// Plans and loads every batch of one pass over `m`.
pub fn make_batches(m: &Manifest, batch_size: usize, order: BatchOrder, size: usize) -> Result<Vec<Batch>> {
    plan_batches(m.len(), batch_size, order)?
        .iter()
        .map(|idx| load_batch(m, idx, size))
        .collect()
}
