//! Image file decoding/encoding and resampling.
//!
//! PNG and the binary PNM family (PGM/PPM) are supported, 8-bit everywhere
//! except band rasters, which may also be 16-bit.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Interleaved 8-bit raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn unsupported(path: &Path, img: &DynamicImage, wanted: &str) -> Error {
    Error::Format(format!(
        "{}: {:?} pixels are not supported, expected {wanted}",
        path.display(),
        img.color()
    ))
}

/// Decodes an 8-bit RGB image; grayscale is replicated and alpha dropped.
pub fn read_rgb8(path: &Path) -> Result<Raster8> {
    let img = decode(path)?;
    let rgb = match &img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        _ => return Err(unsupported(path, &img, "8-bit gray or RGB")),
    };
    Ok(Raster8 {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        channels: 3,
        pixels: rgb.into_raw(),
    })
}

/// Decodes an 8-bit single-channel image; RGB input is reduced to luma.
pub fn read_gray8(path: &Path) -> Result<Raster8> {
    let img = decode(path)?;
    let gray = match &img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_luma8(),
        _ => return Err(unsupported(path, &img, "8-bit gray or RGB")),
    };
    Ok(Raster8 {
        width: gray.width() as usize,
        height: gray.height() as usize,
        channels: 1,
        pixels: gray.into_raw(),
    })
}

/// Decodes a single-channel 8- or 16-bit image into `[0, 1]` reflectances.
pub fn read_unit_band(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match &img {
        DynamicImage::ImageLuma8(buf) => buf.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.as_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        _ => return Err(unsupported(path, &img, "a single 8- or 16-bit channel")),
    };
    Ok((w, h, values))
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm" | "ppm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Format(format!(
            "{}: output must be .png or .pgm",
            path.display()
        ))),
    }
}

/// Writes an 8-bit grayscale image, PNG or binary PGM by extension.
pub fn write_gray8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let format = format_for(path)?;
    image::save_buffer_with_format(
        path,
        pixels,
        width as u32,
        height as u32,
        image::ExtendedColorType::L8,
        format,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Writes an 8-bit RGB image, PNG or binary PPM by extension.
pub fn write_rgb8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let format = format_for(path)?;
    image::save_buffer_with_format(
        path,
        pixels,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
        format,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Writes a 16-bit grayscale PNG.
pub fn write_gray16_png(path: &Path, width: usize, height: usize, pixels: &[u16]) -> Result<()> {
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width as u32, height as u32, pixels.to_vec())
        .ok_or_else(|| Error::Format("pixel buffer does not match extents".into()))?;
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Bilinear resampling of one plane with half-pixel centres and clamped edges.
pub fn resize_bilinear(src: &[f32], width: usize, height: usize, new_w: usize, new_h: usize) -> Vec<f32> {
    if (width, height) == (new_w, new_h) {
        return src.to_vec();
    }
    // Source coordinate, lower neighbour and interpolation weight per output index.
    let axis = |from: usize, to: usize| -> Vec<(usize, usize, f32)> {
        let scale = from as f64 / to as f64;
        (0..to)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(from - 1);
                (x0, x1, (x - x0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(width, new_w);
    let ys = axis(height, new_h);
    let mut out = Vec::with_capacity(new_w * new_h);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * width..(y0 + 1) * width];
        let r1 = &src[y1 * width..(y1 + 1) * width];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Nearest-neighbour resampling of one plane; never invents new values.
pub fn resize_nearest<V: Copy>(src: &[V], width: usize, height: usize, new_w: usize, new_h: usize) -> Vec<V> {
    let pick = |i: usize, from: usize, to: usize| (((i as f64 + 0.5) * from as f64 / to as f64) as usize).min(from - 1);
    let mut out = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let sy = pick(y, height, new_h);
        for x in 0..new_w {
            out.push(src[sy * width + pick(x, width, new_w)]);
        }
    }
    out
}
