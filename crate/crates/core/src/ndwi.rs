//! Water masks from the Normalized Difference Water Index,
//! `(green - nir) / (green + nir)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{read_unit_band, write_gray8};

/// Single-band reflectance raster with non-negative values.
#[derive(Clone, Debug, PartialEq)]
pub struct BandRaster {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl BandRaster {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values do not fill a {width}×{height} raster",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Contract(format!("reflectance {v} is not a finite value ≥ 0")));
        }
        Ok(Self { width, height, values })
    }

    /// Reads a single-channel 8- or 16-bit PNG/PGM, scaled to `[0, 1]`.
    pub fn read(path: &Path) -> Result<Self> {
        let (w, h, values) = read_unit_band(path)?;
        Self::new(w, h, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Per-pixel index in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

/// Binary raster holding 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl BinaryMask {
    /// Writes the mask as 8-bit {0, 255}, PNG or PGM by extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self.values.iter().map(|&v| v * 255).collect();
        write_gray8(path, self.width, self.height, &pixels)
    }
}

/// Pixels where `green + nir == 0` get index 0.
pub fn compute_ndwi(green: &BandRaster, nir: &BandRaster) -> Result<IndexRaster> {
    if (green.width, green.height) != (nir.width, nir.height) {
        return Err(Error::Shape(format!(
            "green band is {}×{}, NIR band is {}×{}",
            green.width, green.height, nir.width, nir.height
        )));
    }
    let values = green
        .values
        .iter()
        .zip(&nir.values)
        .map(|(&g, &n)| {
            let sum = g + n;
            if sum == 0.0 {
                0.0
            } else {
                (g - n) / sum
            }
        })
        .collect();
    Ok(IndexRaster {
        width: green.width,
        height: green.height,
        values,
    })
}

/// 1 where `index >= threshold`, else 0.
pub fn threshold_mask(index: &IndexRaster, threshold: f32) -> BinaryMask {
    BinaryMask {
        width: index.width,
        height: index.height,
        values: index.values.iter().map(|&v| u8::from(v >= threshold)).collect(),
    }
}
