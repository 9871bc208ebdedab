//! RGB image buffers and file I/O.
//!
//! Channel values are `f32` in `[0, 1]`; files are 8-bit with the
//! quantisation rule `round(v · 255)`, so a file → buffer → file round trip
//! reproduces the original bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    /// HWC, row-major.
    data: Vec<f32>,
}

impl ImageBuffer {
    /// Builds a buffer, clamping every value into `[0, 1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("image extents must be positive, got {width}×{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{width}×{height}×3 image needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Applies `f` to every channel value, clamping the result.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Rounds every value to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}×{h} at ({x0}, {y0}) exceeds {}×{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(ImageBuffer { width: w, height: h, data })
    }

    /// `(h·w) × 3` tensor view for the network.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.width * self.height, 3],
            self.data.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("image extents are positive")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    pub fn same_extent(&self, other: &ImageBuffer) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "image extents differ: {}×{} vs {}×{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "ppm" => Ok(ImageFormat::Ppm),
            Some(e) if e == "png" => Ok(ImageFormat::Png),
            _ => Err(Error::Format(format!("unsupported image extension: {}", path.display()))),
        }
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Ppm => decode_ppm(&bytes).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        }),
        ImageFormat::Png => decode_png(path),
    }
}

pub fn write_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match ImageFormat::from_path(path)? {
        ImageFormat::Ppm => std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e)),
        ImageFormat::Png => encode_png(img, path),
    }
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

/// Parses a binary PPM (P6, maxval 255).
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::Parse { offset: 0, msg: format!("expected magic P6, found {found:?}") });
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        skip_ws_and_comments(bytes, &mut pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(Error::Parse { offset: pos, msg: format!("expected {what}") });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { offset: start, msg: "header number out of range".into() })?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Parse { offset: pos, msg: format!("maxval {maxval} unsupported, need 255") });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse { offset: pos, msg: "zero image extent".into() });
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse { offset: pos, msg: "expected whitespace after maxval".into() });
    }
    pos += 1;
    let need = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::io(
            "<ppm payload>",
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("truncated payload: need {need} bytes, have {}", payload.len()),
            ),
        ));
    }
    ImageBuffer::from_bytes(width, height, &payload[..need])
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        if bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        } else if bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
}

fn decode_png(path: &Path) -> Result<ImageBuffer> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("{}: only 8-bit PNG is supported", path.display())));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => px.to_vec(),
        png::ColorType::Rgba => px.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        other => {
            return Err(Error::Format(format!("{}: unsupported PNG color type {other:?}", path.display())))
        }
    };
    ImageBuffer::from_bytes(w, h, &rgb)
}

fn encode_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(&img.to_bytes()).map_err(fmt)?;
    writer.finish().map_err(fmt)?;
    Ok(())
}
