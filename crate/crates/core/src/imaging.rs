//! Image decode/encode and the pixel-level geometry primitives (resize,
//! pad, crop) every tiling strategy builds on.
//!
//! Pixels are normalized to `[0, 1]` at decode time; no mean/std
//! normalization happens here (the encoder applies its own per-channel
//! affine input map, see [`crate::encoder::VitConfig`]).
//!
//! PPM (P6) is the canonical fixture format because it is bit-exact and
//! trivially generated. PNG and JPEG are accepted for convenience via the
//! `image` crate.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Channel count is fixed: interleaved RGB.
pub const CHANNELS: usize = 3;

/// Decoded raster image: row-major interleaved RGB, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image, validating every type invariant.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "image dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::Geometry(format!(
                "pixel buffer length {} does not match {width}x{height}x{CHANNELS}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Geometry(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageBuffer {
            width,
            height,
            data,
        })
    }

    /// All-black image.
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1);
        ImageBuffer {
            width,
            height,
            data: vec![0.0; width * height * CHANNELS],
        }
    }

    /// Builds an image from a per-(x, y, channel) generator.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(x, y, c));
                }
            }
        }
        ImageBuffer::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * CHANNELS + c
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    /// Overwrites one sample. `v` must stay in `[0, 1]`.
    pub fn set_pixel(&mut self, x: usize, y: usize, c: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v), "pixel value {v} outside [0, 1]");
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * CHANNELS);
        ImageBuffer {
            width,
            height,
            data,
        }
    }
}

/// Decodes a PNG, JPEG or binary PPM (P6) file into a normalized image.
///
/// 8-bit samples map to `v / 255`.
pub fn decode_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P6") {
        return decode_ppm_bytes(&bytes).map_err(|reason| Error::decode(path, reason));
    }
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::decode(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data = decoded.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::new(w, h, data)
}

fn decode_ppm_bytes(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and '#' comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated PPM header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err("malformed PPM header".into());
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text.parse::<usize>().map_err(|e| e.to_string())?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported PPM max value {maxval} (expected 255)"));
    }
    if w == 0 || h == 0 {
        return Err(format!("invalid PPM dimensions {w}x{h}"));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after PPM header".into()),
    }
    let need = w * h * CHANNELS;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format!(
            "PPM raster too short: need {need} bytes, have {}",
            raster.len()
        ));
    }
    let data = raster[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(ImageBuffer::from_raw(w, h, data))
}

/// Writes a binary PPM (P6) with header `P6\n<w> <h>\n255\n`.
///
/// Values are quantized by `round(v * 255)` (round half away from zero)
/// and clamped to `[0, 255]`.
pub fn encode_ppm(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(32 + img.data.len());
    write!(out, "P6\n{} {}\n255\n", img.width, img.height).expect("vec write");
    for &v in &img.data {
        out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Bilinear resize with half-pixel centers: source coordinate
/// `(i + 0.5) * scale - 0.5`, clamped to the valid range.
pub fn resize_bilinear(img: &ImageBuffer, out_w: usize, out_h: usize) -> ImageBuffer {
    assert!(out_w >= 1 && out_h >= 1, "resize target must be >= 1");
    let (in_w, in_h) = (img.width, img.height);
    let scale_x = in_w as f64 / out_w as f64;
    let scale_y = in_h as f64 / out_h as f64;
    let mut data = Vec::with_capacity(out_w * out_h * CHANNELS);
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (in_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (in_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = sx - x0 as f64;
            for c in 0..CHANNELS {
                let v00 = img.pixel(x0, y0, c);
                let v01 = img.pixel(x1, y0, c);
                let v10 = img.pixel(x0, y1, c);
                let v11 = img.pixel(x1, y1, c);
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                let v = top + fy * (bot - top);
                // clamp to the corner range so rounding can never push the
                // result outside the convex hull of its samples
                let lo = v00.min(v01).min(v10).min(v11);
                let hi = v00.max(v01).max(v10).max(v11);
                data.push(v.clamp(lo, hi));
            }
        }
    }
    ImageBuffer::from_raw(out_w, out_h, data)
}

/// Surrounds the image with a black frame of `margin` pixels on each side.
pub fn pad_black_frame(img: &ImageBuffer, margin: usize) -> ImageBuffer {
    let (w, h) = (img.width + 2 * margin, img.height + 2 * margin);
    let mut data = vec![0.0; w * h * CHANNELS];
    for y in 0..img.height {
        let src = y * img.width * CHANNELS;
        let dst = ((y + margin) * w + margin) * CHANNELS;
        data[dst..dst + img.width * CHANNELS]
            .copy_from_slice(&img.data[src..src + img.width * CHANNELS]);
    }
    ImageBuffer::from_raw(w, h, data)
}

/// Copies the sub-rectangle `(x, y, w, h)`.
pub fn crop(img: &ImageBuffer, x: usize, y: usize, w: usize, h: usize) -> Result<ImageBuffer> {
    if w == 0 || h == 0 || x + w > img.width || y + h > img.height {
        return Err(Error::Geometry(format!(
            "crop ({x}, {y}, {w}, {h}) out of bounds for {}x{} image",
            img.width, img.height
        )));
    }
    let mut data = Vec::with_capacity(w * h * CHANNELS);
    for row in y..y + h {
        let start = (row * img.width + x) * CHANNELS;
        data.extend_from_slice(&img.data[start..start + w * CHANNELS]);
    }
    Ok(ImageBuffer::from_raw(w, h, data))
}
