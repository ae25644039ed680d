//! Bit error rate, PSNR and SSIM.

use crate::error::{Error, Result};
use crate::image::QuantizedImage;
use crate::message::MessageTensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub ber: f64,
    /// `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

/// Fraction of differing bits.
pub fn ber(a: &MessageTensor, b: &MessageTensor) -> Result<f64> {
    a.shape().expect(b.shape())?;
    let wrong = a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count();
    Ok(wrong as f64 / a.len() as f64)
}

pub fn mse(a: &QuantizedImage, b: &QuantizedImage) -> Result<f64> {
    a.shape().expect(b.shape())?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(255² / MSE)` over all channels.
pub fn psnr(a: &QuantizedImage, b: &QuantizedImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable Gaussian filter over full windows only.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win
                .iter()
                .enumerate()
                .map(|(i, c)| c * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win
                .iter()
                .enumerate()
                .map(|(i, c)| c * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), computed per
/// channel over full windows and averaged.
pub fn ssim(a: &QuantizedImage, b: &QuantizedImage) -> Result<f64> {
    a.shape().expect(b.shape())?;
    let s = a.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, image is {}x{}",
            s.height, s.width
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let (h, w) = (s.height, s.width);
    let mut total = 0.0;
    for c in 0..s.channels {
        let pa: Vec<f64> = a.plane(c).iter().map(|&v| f64::from(v)).collect();
        let pb: Vec<f64> = b.plane(c).iter().map(|&v| f64::from(v)).collect();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&pa, h, w, &win);
        let mu_b = filter_valid(&pb, h, w, &win);
        let e_aa = filter_valid(&aa, h, w, &win);
        let e_bb = filter_valid(&bb, h, w, &win);
        let e_ab = filter_valid(&ab, h, w, &win);
        let n = mu_a.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
        total += acc / n as f64;
    }
    Ok(total / s.channels as f64)
}
