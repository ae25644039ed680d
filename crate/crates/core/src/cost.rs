//! Content-adaptive perturbation cost.
//!
//! High-pass residual magnitude, smoothed by a 3×3 mean, inverted, spread by a
//! 15×15 mean and finally truncated: costs above `threshold` become `cap`.
//! Flat regions therefore sit at `cap` while textured regions keep a small
//! cost.

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape, Tensor3};

/// The 3×3 high-pass kernel.
pub const HIGH_PASS: [f64; 9] = [-1.0, 2.0, -1.0, 2.0, -4.0, 2.0, -1.0, 2.0, -1.0];

/// A `kh×kw` row-major kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub height: usize,
    pub width: usize,
    pub taps: Vec<f64>,
}

impl Kernel {
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height % 2 == 0 || width % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel {height}x{width} must have odd dimensions"
            )));
        }
        if taps.len() != height * width {
            return Err(Error::shape(height * width, taps.len()));
        }
        Ok(Kernel {
            height,
            width,
            taps,
        })
    }

    pub fn mean(size: usize) -> Result<Self> {
        let n = size * size;
        Self::new(size, size, vec![1.0 / n as f64; n])
    }

    pub fn high_pass() -> Self {
        Kernel {
            height: 3,
            width: 3,
            taps: HIGH_PASS.to_vec(),
        }
    }
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`),
/// folded as often as needed for kernels larger than the plane.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// "Same"-size correlation of an `h×w` plane with mirror padding.
pub fn convolve2d(plane: &[f64], h: usize, w: usize, kernel: &Kernel) -> Result<Vec<f64>> {
    if plane.len() != h * w {
        return Err(Error::shape(h * w, plane.len()));
    }
    if kernel.height % 2 == 0 || kernel.width % 2 == 0 {
        return Err(Error::InvalidArgument("kernel dimensions must be odd".into()));
    }
    let (ph, pw) = ((kernel.height / 2) as isize, (kernel.width / 2) as isize);
    // precomputed column lookups per kernel column offset
    let cols: Vec<Vec<usize>> = (0..kernel.width as isize)
        .map(|dx| {
            (0..w as isize)
                .map(|x| reflect_index(x + dx - pw, w))
                .collect()
        })
        .collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        let dst = &mut out[y as usize * w..(y as usize + 1) * w];
        for dy in 0..kernel.height as isize {
            let sy = reflect_index(y + dy - ph, h);
            let src = &plane[sy * w..(sy + 1) * w];
            for (dx, lookup) in cols.iter().enumerate() {
                let k = kernel.taps[dy as usize * kernel.width + dx];
                if k == 0.0 {
                    continue;
                }
                for (d, &sx) in dst.iter_mut().zip(lookup) {
                    *d += k * src[sx];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Costs strictly above this become `cap`.
    pub threshold: f64,
    pub cap: f64,
    /// Added to the smoothed residual before inversion.
    pub eps: f64,
    /// Multiplier applied to `[0,1]` intensities before filtering.
    pub intensity_scale: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            threshold: 0.5,
            cap: 3.0,
            eps: 1e-10,
            intensity_scale: 255.0,
        }
    }
}

/// Per-pixel, per-channel perturbation cost with every element in `(0, cap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Tensor3);

impl CostMatrix {
    /// Constant cost, i.e. plain (unweighted) distortion.
    pub fn uniform(shape: Shape, value: f64) -> Self {
        CostMatrix(Tensor3::filled(shape, value))
    }

    pub fn as_tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }
}

pub fn hill_cost(cover: &ImageTensor, params: &CostParams) -> Result<CostMatrix> {
    let CostParams {
        threshold,
        cap,
        eps,
        intensity_scale,
    } = *params;
    if !(threshold > 0.0 && cap >= threshold && eps > 0.0 && intensity_scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cost parameters need threshold > 0, cap >= threshold, eps > 0; got {params:?}"
        )));
    }
    let shape = cover.shape();
    let (h, w) = (shape.height, shape.width);
    let high = Kernel::high_pass();
    let small = Kernel::mean(3)?;
    let large = Kernel::mean(15)?;
    let mut data = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        let scaled: Vec<f64> = cover.plane(c).iter().map(|v| v * intensity_scale).collect();
        let residual: Vec<f64> = convolve2d(&scaled, h, w, &high)?
            .into_iter()
            .map(f64::abs)
            .collect();
        let smoothed = convolve2d(&residual, h, w, &small)?;
        let inverse: Vec<f64> = smoothed.iter().map(|r| 1.0 / (r + eps)).collect();
        let spread = convolve2d(&inverse, h, w, &large)?;
        data.extend(spread.into_iter().map(|v| if v > threshold { cap } else { v }));
    }
    Ok(CostMatrix(Tensor3::from_vec(shape, data)?))
}
