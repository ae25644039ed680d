//! The frozen decoder network.
//!
//! A stack of stride-1, zero-padded "same" convolutions with LeakyReLU between
//! them. Weights never change after construction; the only derivative this
//! module computes is the gradient with respect to the input image.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{write_file, Shape, Tensor3};
use crate::keystream::StegoKey;
use crate::message::MessageTensor;

/// Raw decoder output, `D×H×W`, before any sigmoid.
pub type LogitTensor = Tensor3;

pub const WEIGHT_MAGIC: &[u8; 5] = b"KFNN1";
pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.2;
const HIDDEN_WIDTH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    /// `(out, in, kh, kw)` order.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::WeightFormat("layer with zero channels".into()));
        }
        if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
            return Err(Error::WeightFormat(format!(
                "kernel {kernel_h}x{kernel_w} must have odd dimensions"
            )));
        }
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != expected || bias.len() != out_channels {
            return Err(Error::WeightFormat(format!(
                "layer {in_channels}->{out_channels} expects {expected} weights and {out_channels} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(ConvLayer {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn forward(&self, input: &[f64], h: usize, w: usize, col: &mut Vec<f64>) -> Vec<f64> {
        let n = h * w;
        im2col(input, self.in_channels, h, w, self.kernel_h, self.kernel_w, col);
        let mut out = vec![0.0; self.out_channels * n];
        for (o, row) in out.chunks_exact_mut(n).enumerate() {
            row.fill(self.bias[o]);
        }
        let k = self.patch_len();
        // out (M x N) += W (M x K) * col (K x N)
        unsafe {
            matrixmultiply::dgemm(
                self.out_channels,
                k,
                n,
                1.0,
                self.weights.as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                n as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        out
    }

    fn backward(&self, grad_out: &[f64], h: usize, w: usize, col: &mut Vec<f64>) -> Vec<f64> {
        let n = h * w;
        let k = self.patch_len();
        col.clear();
        col.resize(k * n, 0.0);
        // dcol (K x N) = W^T (K x M) * dout (M x N)
        unsafe {
            matrixmultiply::dgemm(
                k,
                self.out_channels,
                n,
                1.0,
                self.weights.as_ptr(),
                1,
                k as isize,
                grad_out.as_ptr(),
                n as isize,
                1,
                0.0,
                col.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        col2im(col, self.in_channels, h, w, self.kernel_h, self.kernel_w)
    }
}

fn im2col(input: &[f64], channels: usize, h: usize, w: usize, kh: usize, kw: usize, col: &mut Vec<f64>) {
    let n = h * w;
    let (ph, pw) = (kh / 2, kw / 2);
    col.clear();
    col.resize(channels * kh * kw * n, 0.0);
    let mut row = 0;
    for c in 0..channels {
        let plane = &input[c * n..(c + 1) * n];
        for dy in 0..kh {
            for dx in 0..kw {
                let dst = &mut col[row * n..(row + 1) * n];
                row += 1;
                let x_lo = pw.saturating_sub(dx);
                let x_hi = (w + pw).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let sy = sy - ph;
                    let sx_lo = x_lo + dx - pw;
                    let len = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[sy * w + sx_lo..sy * w + sx_lo + len]);
                }
            }
        }
    }
}

fn col2im(col: &[f64], channels: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let n = h * w;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; channels * n];
    let mut row = 0;
    for c in 0..channels {
        for dy in 0..kh {
            for dx in 0..kw {
                let src = &col[row * n..(row + 1) * n];
                row += 1;
                let x_lo = pw.saturating_sub(dx);
                let x_hi = (w + pw).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                let plane = &mut out[c * n..(c + 1) * n];
                for y in 0..h {
                    let sy = y + dy;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let sy = sy - ph;
                    let sx_lo = x_lo + dx - pw;
                    let dst = &mut plane[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// Frozen fully-convolutional decoder `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDecoder {
    layers: Vec<ConvLayer>,
    negative_slope: f64,
}

/// Pre-activations kept from a forward pass for the backward sweep.
pub struct Tape {
    shape: Shape,
    pre_activations: Vec<Vec<f64>>,
}

impl Tape {
    /// Sign of every hidden pre-activation. Two inputs with equal signatures
    /// lie in the same linear region of the network.
    pub fn activation_signs(&self) -> Vec<bool> {
        self.pre_activations
            .iter()
            .flat_map(|layer| layer.iter().map(|&v| v > 0.0))
            .collect()
    }
}

impl FixedDecoder {
    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::WeightFormat("decoder has no layers".into()))?;
        if first.in_channels != 3 {
            return Err(Error::WeightFormat(format!(
                "first layer takes {} channels, expected 3",
                first.in_channels
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::WeightFormat(format!(
                    "layer {i} outputs {} channels but layer {} expects {}",
                    pair[0].out_channels,
                    i + 1,
                    pair[1].in_channels
                )));
            }
        }
        Ok(FixedDecoder {
            layers,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
        })
    }

    /// Reference architecture: 3→32→32→32→D, 3×3 kernels, He-normal weights
    /// drawn from the seed's keystream, zero biases.
    pub fn build_seeded(seed: &StegoKey, payload_depth: usize) -> Result<Self> {
        if payload_depth == 0 {
            return Err(Error::InvalidArgument("payload depth must be at least 1".into()));
        }
        let dims = [
            (3, HIDDEN_WIDTH),
            (HIDDEN_WIDTH, HIDDEN_WIDTH),
            (HIDDEN_WIDTH, HIDDEN_WIDTH),
            (HIDDEN_WIDTH, payload_depth),
        ];
        let mut stream = seed.stream();
        let layers = dims
            .iter()
            .map(|&(cin, cout)| {
                let fan_in = cin * 9;
                let std = (2.0 / fan_in as f64).sqrt();
                let weights = (0..cout * fan_in).map(|_| std * stream.next_gaussian()).collect();
                ConvLayer::new(cin, cout, 3, 3, weights, vec![0.0; cout])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    /// Replace the LeakyReLU slope. A slope of 1 makes the network linear.
    pub fn with_negative_slope(mut self, slope: f64) -> Self {
        self.negative_slope = slope;
        self
    }

    pub fn negative_slope(&self) -> f64 {
        self.negative_slope
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn payload_depth(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.channels != self.layers[0].in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.layers[0].in_channels),
                format!("{} channels", shape.channels),
            ));
        }
        Ok(())
    }

    fn output_shape(&self, input: Shape) -> Shape {
        Shape::new(self.payload_depth(), input.height, input.width)
    }

    pub fn forward(&self, img: &Tensor3) -> Result<LogitTensor> {
        Ok(self.forward_cached(img)?.0)
    }

    pub fn forward_cached(&self, img: &Tensor3) -> Result<(LogitTensor, Tape)> {
        let shape = img.shape();
        self.check_input(shape)?;
        let (h, w) = (shape.height, shape.width);
        let mut col = Vec::new();
        let mut act = img.data().to_vec();
        let mut pre_activations = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&act, h, w, &mut col);
            if i == last {
                act = pre;
            } else {
                act = pre
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { self.negative_slope * v })
                    .collect();
                pre_activations.push(pre);
            }
        }
        let logits = Tensor3::from_vec(self.output_shape(shape), act)?;
        Ok((
            logits,
            Tape {
                shape,
                pre_activations,
            },
        ))
    }

    /// Reverse sweep from `d loss / d logits` to `d loss / d input`.
    pub fn backward(&self, tape: &Tape, loss_grad: &LogitTensor) -> Result<Tensor3> {
        let out_shape = self.output_shape(tape.shape);
        out_shape.expect(loss_grad.shape())?;
        let (h, w) = (tape.shape.height, tape.shape.width);
        let mut col = Vec::new();
        let mut grad = loss_grad.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward(&grad, h, w, &mut col);
            if i > 0 {
                for (g, &pre) in grad.iter_mut().zip(&tape.pre_activations[i - 1]) {
                    if pre <= 0.0 {
                        *g *= self.negative_slope;
                    }
                }
            }
        }
        Tensor3::from_vec(tape.shape, grad)
    }

    pub fn input_gradient(&self, img: &Tensor3, loss_grad: &LogitTensor) -> Result<Tensor3> {
        let (_, tape) = self.forward_cached(img)?;
        self.backward(&tape, loss_grad)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = WEIGHT_MAGIC.to_vec();
        out.extend((self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for v in [l.in_channels, l.out_channels, l.kernel_h, l.kernel_w] {
                out.extend((v as u32).to_le_bytes());
            }
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(WEIGHT_MAGIC.len())? != WEIGHT_MAGIC {
            return Err(Error::WeightFormat(
                "bad magic or unsupported version (expected KFNN1)".into(),
            ));
        }
        let count = r.u32()? as usize;
        if count == 0 || count > 1024 {
            return Err(Error::WeightFormat(format!("implausible layer count {count}")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            dims.push([r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize));
        }
        let mut layers = Vec::with_capacity(count);
        for [cin, cout, kh, kw] in dims {
            let n = cout
                .checked_mul(cin)
                .and_then(|v| v.checked_mul(kh))
                .and_then(|v| v.checked_mul(kw))
                .ok_or_else(|| Error::WeightFormat("layer dimensions overflow".into()))?;
            let weights = r.f64s(n)?;
            let bias = r.f64s(cout)?;
            layers.push(ConvLayer::new(cin, cout, kh, kw, weights, bias)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::WeightFormat(format!(
                "{} trailing bytes after the last layer",
                bytes.len() - r.pos
            )));
        }
        Self::from_layers(layers)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::WeightFormat(format!("file truncated at byte {}", self.bytes.len()))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::WeightFormat("layer dimensions overflow".into())
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Bit is 1 iff the logit is strictly positive.
pub fn decode_bits(logits: &LogitTensor) -> MessageTensor {
    let bits = logits.data().iter().map(|&z| u8::from(z > 0.0)).collect();
    MessageTensor::from_bits(logits.shape(), bits).expect("shape preserved")
}
