//! Planar `[C, H, W]` images with values in [0, 1], stored as binary PGM/PPM.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimension(format!("{height}x{width} image")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidDimension(format!("{channels} channels, expected 1 or 3")));
        }
        if values.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain(format!("value {} at index {i} outside [0,1]", values[i])));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, values)
    }

    /// Build from a `[C, H, W]` tensor, clamping into [0, 1].
    pub fn from_tensor_clamped(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.dims() else {
            return Err(Error::shape(format!("expected [C,H,W], got {:?}", t.dims())));
        };
        let values = t
            .data()
            .iter()
            .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(h, w, c, values)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.channels, self.height, self.width], self.values.clone())
            .expect("image extents are valid tensor dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn same_extents(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Single-channel luma (0.299 R + 0.587 G + 0.114 B); grayscale passes through.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let values = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            values,
        }
    }

    /// Round-half-up 8-bit quantization followed by dequantization.
    pub fn quantized(&self) -> Image {
        Image {
            values: self.values.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
            ..self.clone()
        }
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn channels_for_extension(path: &Path) -> Result<usize> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ref e) if e == "pgm" => Ok(1),
        Some(ref e) if e == "ppm" => Ok(3),
        _ => Err(Error::domain(format!(
            "{}: image path needs a .pgm or .ppm extension",
            path.display()
        ))),
    }
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let channels = channels_for_extension(path)?;
    if channels != img.channels {
        return Err(Error::shape(format!(
            "{}: channel mismatch, {}-channel image for a {}-channel format",
            path.display(),
            img.channels,
            channels
        )));
    }
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    let n = img.height * img.width;
    for i in 0..n {
        for c in 0..channels {
            out.push(quantize(img.values[c * n + i]));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let channels = channels_for_extension(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (img, _) = decode_netpbm(&bytes, path)?;
    if img.channels != channels {
        return Err(Error::shape(format!(
            "{}: channel mismatch, file holds {} channel(s) but extension implies {}",
            path.display(),
            img.channels,
            channels
        )));
    }
    Ok(img)
}

/// Decode a binary P5/P6 image; returns the image and the number of bytes consumed.
pub fn decode_netpbm(bytes: &[u8], origin: &Path) -> Result<(Image, usize)> {
    let err = |offset: usize, msg: &str| Error::format(origin, offset as u64, msg);
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(err(0, "expected binary netpbm magic P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments before each header token.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| err(start, "header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err(pos, &format!("unsupported maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(err(pos, "zero image extent"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected single whitespace after maxval"));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| err(pos, "image extent overflows"))?;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| err(bytes.len(), "truncated raster"))?;
    let plane = width * height;
    let mut values = vec![0.0f32; n];
    for (i, px) in raster.chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            values[c * plane + i] = b as f32 / 255.0;
        }
    }
    Ok((Image::new(height, width, channels, values)?, pos + n))
}
