//! Planar image tensors, 8-bit quantization and PNG I/O.
//!
//! All real-valued arrays in this crate share the channel-major, row-major
//! layout of [`Tensor3`]: element `(c, y, x)` lives at `(c * H + y) * W + x`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dimensions of a planar `C×H×W` array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidShape(format!("{self} has a zero dimension")));
        }
        Ok(())
    }

    pub(crate) fn expect(&self, other: Shape) -> Result<()> {
        if *self != other {
            return Err(Error::shape(self, other));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Real-valued planar array. Used for images, masks, logits and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: Shape,
    data: Vec<f64>,
}

/// An image with intensities nominally in `[0, 1]`.
pub type ImageTensor = Tensor3;

impl Tensor3 {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor3 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} elements for {shape}", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor3 { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Tensor3 { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(c, y, x)]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.shape.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor3 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.shape.expect(other.shape)?;
        Ok(Tensor3 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor3) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// 8-bit image with levels in `0..=255`, planar like [`Tensor3`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedImage {
    shape: Shape,
    data: Vec<u8>,
}

impl QuantizedImage {
    pub fn from_vec(shape: Shape, data: Vec<u8>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} bytes for {shape}", shape.len()),
                format!("{} bytes", data.len()),
            ));
        }
        Ok(QuantizedImage { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.shape.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn dequantize(&self) -> ImageTensor {
        Tensor3 {
            shape: self.shape,
            data: self.data.iter().map(|&q| f64::from(q) / 255.0).collect(),
        }
    }

    /// Interleaved `RGBRGB...` bytes, row-major.
    pub fn to_interleaved(&self) -> Vec<u8> {
        let Shape {
            channels,
            height,
            width,
        } = self.shape;
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    out.push(self.data[self.shape.index(c, y, x)]);
                }
            }
        }
        out
    }

    pub fn from_interleaved(shape: Shape, bytes: &[u8]) -> Result<Self> {
        shape.validate()?;
        if bytes.len() != shape.len() {
            return Err(Error::shape(shape.len(), bytes.len()));
        }
        let mut data = vec![0u8; shape.len()];
        let mut it = bytes.iter();
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data[shape.index(c, y, x)] = *it.next().unwrap();
                }
            }
        }
        Ok(QuantizedImage { shape, data })
    }
}

/// Element-wise clamp to `[0, 1]`.
pub fn clip01(img: &ImageTensor) -> ImageTensor {
    img.map(|v| v.clamp(0.0, 1.0))
}

/// Round each element to the nearest of 256 levels, halves away from zero.
pub fn quantize(img: &ImageTensor) -> QuantizedImage {
    QuantizedImage {
        shape: img.shape(),
        data: img.data().iter().map(|&v| quantize_level(v)).collect(),
    }
}

pub(crate) fn quantize_level(v: f64) -> u8 {
    // f64::round rounds half away from zero
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// `clip01(gain * |a - b|)`, used to visualise perturbations.
pub fn residual(a: &ImageTensor, b: &ImageTensor, gain: f64) -> Result<ImageTensor> {
    a.zip_map(b, |x, y| (gain * (x - y).abs()).clamp(0.0, 1.0))
}

/// Load an 8-bit RGB or RGBA PNG. Alpha is discarded.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    Ok(load_png_quantized(path)?.dequantize())
}

pub fn load_png_quantized(path: impl AsRef<Path>) -> Result<QuantizedImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode_png(BufReader::new(file))
}

pub fn decode_png(reader: impl std::io::Read) -> Result<QuantizedImage> {
    let decoder = png::Decoder::new(reader);
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedImage(format!(
            "bit depth {depth:?}; only 8-bit PNGs are supported"
        )));
    }
    let stride = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::UnsupportedImage(format!(
                "color type {other:?}; expected RGB or RGBA"
            )))
        }
    };
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let shape = Shape::new(3, h, w);
    let mut data = vec![0u8; shape.len()];
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            for c in 0..3 {
                data[shape.index(c, y, x)] = row[x * stride + c];
            }
        }
    }
    QuantizedImage::from_vec(shape, data)
}

/// Write an 8-bit RGB PNG whose decoded bytes equal `img` exactly.
pub fn save_png(img: &QuantizedImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_png(img)?;
    write_file(path.as_ref(), &bytes)
}

pub fn encode_png(img: &QuantizedImage) -> Result<Vec<u8>> {
    let shape = img.shape();
    if shape.channels != 3 {
        return Err(Error::shape("3 channels", shape.channels));
    }
    encode_raw(
        &img.to_interleaved(),
        shape.width,
        shape.height,
        png::ColorType::Rgb,
    )
}

/// Write a single-plane 8-bit grayscale PNG.
pub fn save_gray_png(plane: &[u8], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    if plane.len() != width * height {
        return Err(Error::shape(width * height, plane.len()));
    }
    let bytes = encode_raw(plane, width, height, png::ColorType::Grayscale)?;
    write_file(path.as_ref(), &bytes)
}

fn encode_raw(bytes: &[u8], width: usize, height: usize, color: png::ColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(bytes)?;
        writer.finish()?;
    }
    Ok(out)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let map = |source| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(map)?);
    w.write_all(bytes).map_err(map)?;
    w.flush().map_err(map)
}
