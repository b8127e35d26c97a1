use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use super::{Image, Kernel};
use crate::error::{DeblurError, Result};

/// Loads PNG or PNM (8 or 16 bit) into `[0, 1]` doubles. Alpha is dropped;
/// gray inputs give one channel, everything else three.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let dynamic = image::open(path.as_ref())?;
    from_dynamic(&dynamic)
}

pub fn from_dynamic(dynamic: &DynamicImage) -> Result<Image> {
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let n = w * h;
    match dynamic {
        DynamicImage::ImageLuma8(buf) => {
            Image::gray(w, h, buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLumaA8(buf) => Image::gray(
            w,
            h,
            buf.as_raw().chunks(2).map(|p| p[0] as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageLuma16(buf) => {
            Image::gray(w, h, buf.as_raw().iter().map(|&v| v as f64 / 65535.0).collect())
        }
        DynamicImage::ImageLumaA16(buf) => Image::gray(
            w,
            h,
            buf.as_raw().chunks(2).map(|p| p[0] as f64 / 65535.0).collect(),
        ),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let rgb = dynamic.to_rgb16();
            planar(w, h, n, rgb.as_raw().iter().map(|&v| v as f64 / 65535.0))
        }
        _ => {
            let rgb = dynamic.to_rgb8();
            planar(w, h, n, rgb.as_raw().iter().map(|&v| v as f64 / 255.0))
        }
    }
}

fn planar(w: usize, h: usize, n: usize, interleaved: impl Iterator<Item = f64>) -> Result<Image> {
    let mut data = vec![0.0; 3 * n];
    for (i, v) in interleaved.enumerate() {
        data[(i % 3) * n + i / 3] = v;
    }
    Image::from_vec(w, h, 3, data)
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn to_dynamic(image: &Image, sixteen_bit: bool) -> Result<DynamicImage> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let n = image.pixel_count();
    match (image.channels(), sixteen_bit) {
        (1, false) => Ok(DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, image.data().iter().map(|&v| quantize8(v)).collect())
                .expect("buffer size matches"),
        )),
        (1, true) => Ok(DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, image.data().iter().map(|&v| quantize16(v)).collect())
                .expect("buffer size matches"),
        )),
        (3, false) => {
            let raw = (0..3 * n).map(|i| quantize8(image.data()[(i % 3) * n + i / 3])).collect();
            Ok(DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("buffer size matches"),
            ))
        }
        (3, true) => {
            let raw = (0..3 * n).map(|i| quantize16(image.data()[(i % 3) * n + i / 3])).collect();
            Ok(DynamicImage::ImageRgb16(
                ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("buffer size matches"),
            ))
        }
        (c, _) => Err(DeblurError::Channel(format!("cannot encode {c}-channel image"))),
    }
}

/// Writes a PNG, clamping to `[0, 1]` and quantizing to 8 or 16 bits.
pub fn save_png(image: &Image, path: impl AsRef<Path>, sixteen_bit: bool) -> Result<()> {
    to_dynamic(image, sixteen_bit)?.save_with_format(path.as_ref(), ImageFormat::Png)?;
    Ok(())
}

/// Writes a binary PGM with 0/255 samples.
pub fn save_mask_pgm(bits: &[bool], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| DeblurError::Shape("mask length does not match its dimensions".into()))?;
    DynamicImage::ImageLuma8(buf).save_with_format(path.as_ref(), ImageFormat::Pnm)?;
    Ok(())
}

/// Kernel text form: the side on the first line, then one line of
/// whitespace-separated taps per row, 17 significant digits.
pub fn kernel_to_text(kernel: &Kernel) -> String {
    let n = kernel.size();
    let mut out = format!("{n}\n");
    for row in 0..n {
        let line: Vec<String> = (0..n).map(|col| format!("{:.16e}", kernel.get(row, col))).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses [`kernel_to_text`] output. Negative taps are rejected. A kernel
/// whose taps do not sum to one within `1e-6` is normalized, and the second
/// element of the result is then `true`.
pub fn kernel_from_text(text: &str) -> Result<(Kernel, bool)> {
    let bad = |reason: String| DeblurError::Format { what: "kernel file", reason };
    let mut tokens = text.split_whitespace();
    let size: usize = tokens
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .parse()
        .map_err(|e| bad(format!("size line: {e}")))?;
    if size == 0 || size % 2 == 0 {
        return Err(bad(format!("size must be odd and positive, got {size}")));
    }
    let taps = tokens
        .map(|t| t.parse::<f64>().map_err(|e| bad(format!("tap '{t}': {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    if taps.len() != size * size {
        return Err(bad(format!("expected {} taps, found {}", size * size, taps.len())));
    }
    if taps.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(bad("taps must be finite and non-negative".into()));
    }
    let sum: f64 = taps.iter().sum();
    if !(sum > 0.0) {
        return Err(bad("taps sum to zero".into()));
    }
    let kernel = Kernel::new(size, taps).map_err(|e| bad(e.to_string()))?;
    if (sum - 1.0).abs() > 1e-6 {
        Ok((kernel.normalized()?, true))
    } else {
        Ok((kernel, false))
    }
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<(Kernel, bool)> {
    kernel_from_text(&std::fs::read_to_string(path)?)
}

pub fn write_kernel(kernel: &Kernel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, kernel_to_text(kernel))?;
    Ok(())
}

/// Kernel as an 8-bit image scaled so its peak is white.
pub fn kernel_image(kernel: &Kernel) -> Image {
    let peak = kernel.weights().iter().cloned().fold(0.0, f64::max);
    let s = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    Image::from_fn(kernel.size(), kernel.size(), |x, y| kernel.get(y, x) * s)
}
