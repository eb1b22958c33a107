//! Image decoding, resizing and PNG encoding.
//!
//! Images become `1 x 3 x h x w` tensors with RGB values in `[0, 1]`.
//! Accepted inputs are PNG and binary PPM (`P6`).

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

fn image_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn sniff(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(ImageFormat::Png)
    } else if bytes.starts_with(b"P6") {
        Some(ImageFormat::Pnm)
    } else {
        None
    }
}

/// Decode PNG or P6 bytes. `size`, when given, resizes so the short side
/// equals `size` and center-crops to `size x size`.
pub fn decode_image(bytes: &[u8], size: Option<usize>) -> Result<Tensor4> {
    decode_named(bytes, size, Path::new("<memory>"))
}

fn decode_named(bytes: &[u8], size: Option<usize>, path: &Path) -> Result<Tensor4> {
    let format = sniff(bytes).ok_or_else(|| image_err(path, "unsupported format (expected PNG or binary PPM)"))?;
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| image_err(path, format!("corrupt image: {e}")))?
        .to_rgb8();
    let t = rgb_to_tensor(&img);
    match size {
        Some(s) => resize_and_crop(&t, s),
        None => Ok(t),
    }
}

pub fn load_image(path: impl AsRef<Path>, size: Option<usize>) -> Result<Tensor4> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_named(&bytes, size, path)
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor4 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor4::from_fn(Shape4::new(1, 3, h, w), |_, c, y, x| {
        raw[(y * w + x) * 3 + c] as f64 / 255.0
    })
}

/// Clamp to `[0, 1]` and quantize to 8 bits.
pub fn tensor_to_rgb(t: &Tensor4) -> Result<RgbImage> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("tensor_to_rgb", format!("expected 1x3xHxW, got {s}")));
    }
    let mut raw = vec![0u8; s.h * s.w * 3];
    for c in 0..3 {
        for y in 0..s.h {
            for x in 0..s.w {
                let v = t.get(0, c, y, x);
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                raw[(y * s.w + x) * 3 + c] = (v * 255.0).round() as u8;
            }
        }
    }
    Ok(RgbImage::from_raw(s.w as u32, s.h as u32, raw).expect("buffer sized from shape"))
}

pub fn encode_png(t: &Tensor4) -> Result<Vec<u8>> {
    let img = tensor_to_rgb(t)?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| image_err(Path::new("<memory>"), e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_image(t: &Tensor4, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(t)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Binary PPM encoding, used for fixtures.
pub fn encode_ppm(t: &Tensor4) -> Result<Vec<u8>> {
    let img = tensor_to_rgb(t)?;
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_raw());
    Ok(out)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(t: &Tensor4, out_h: usize, out_w: usize) -> Result<Tensor4> {
    let s = t.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::invalid("resize_bilinear", "empty image"));
    }
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(t.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(out_h, s.h);
    let xs = axis(out_w, s.w);
    Ok(Tensor4::from_fn(Shape4::new(s.n, s.c, out_h, out_w), |n, c, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = t.get(n, c, y0, x0) * (1.0 - fx) + t.get(n, c, y0, x1) * fx;
        let bot = t.get(n, c, y1, x0) * (1.0 - fx) + t.get(n, c, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }))
}

/// Resize so the short side is `size`, then take the centered `size x size` crop.
pub fn resize_and_crop(t: &Tensor4, size: usize) -> Result<Tensor4> {
    if size == 0 {
        return Err(Error::invalid("resize_and_crop", "size must be positive"));
    }
    let s = t.shape();
    let (h, w) = if s.h <= s.w {
        (size, ((s.w as f64 * size as f64 / s.h as f64).round() as usize).max(size))
    } else {
        (((s.h as f64 * size as f64 / s.w as f64).round() as usize).max(size), size)
    };
    let r = resize_bilinear(t, h, w)?;
    let (oy, ox) = ((h - size) / 2, (w - size) / 2);
    Ok(Tensor4::from_fn(Shape4::new(s.n, s.c, size, size), |n, c, y, x| {
        r.get(n, c, y + oy, x + ox)
    }))
}
