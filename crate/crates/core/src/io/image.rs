//! 8-bit PGM and PPM images.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Luma, Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn img_err(e: image::ImageError) -> Error {
    Error::format("pnm", e.to_string())
}

fn save(path: &Path, subtype: PnmSubtype, raw: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(subtype)
        .write_image(raw, w, h, color)
        .map_err(img_err)
}

/// Writes an intensity map in [0, 1] as binary PGM.
pub fn write_pgm(path: impl AsRef<Path>, img: ArrayView2<f32>) -> Result<()> {
    let (h, w) = img.dim();
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(img[[y as usize, x as usize]])]));
    save(path.as_ref(), PnmSubtype::Graymap(SampleEncoding::Binary), out.as_raw(), out.width(), out.height(), ExtendedColorType::L8)
}

/// Writes three channel maps in [0, 1] as binary PPM.
pub fn write_ppm(path: impl AsRef<Path>, channels: [ArrayView2<f32>; 3]) -> Result<()> {
    let (h, w) = channels[0].dim();
    if channels.iter().any(|c| c.dim() != (h, w)) {
        return Err(Error::arg("colour channels differ in size"));
    }
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: &ArrayView2<f32>| to_u8(c[[y as usize, x as usize]]);
        Rgb([at(&channels[0]), at(&channels[1]), at(&channels[2])])
    });
    save(path.as_ref(), PnmSubtype::Pixmap(SampleEncoding::Binary), out.as_raw(), out.width(), out.height(), ExtendedColorType::Rgb8)
}

/// Reads any PNM image as intensities in [0, 1] (colour is converted to luma).
pub fn read_gray(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(img_err)?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
    }))
}

/// Maps a depth map to [0, 1] for viewing; invalid entries (non-positive) become 0.
pub fn depth_preview(depth: ArrayView2<f32>) -> Array2<f32> {
    let valid = depth.iter().copied().filter(|&d| d > 0.0 && d.is_finite());
    let (lo, hi) = valid.fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), d| (a.min(d), b.max(d)));
    let span = (hi - lo).max(f32::EPSILON);
    depth.mapv(|d| if d > 0.0 && d.is_finite() { 1.0 - (d - lo) / span } else { 0.0 })
}
