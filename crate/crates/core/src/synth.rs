//! Deterministic synthetic cover images.
//!
//! Covers combine a smooth colour field, textured patches made of
//! multi-octave value noise, and mild sensor noise, so they contain both the
//! flat and the busy regions that adaptive embedding distinguishes. A final
//! levels stretch leaves the combed histogram typical of processed photos.

use crate::image::{quantize_level, QuantizedImage, Shape};
use crate::keystream::{Keystream, StegoKey};

/// Bilinear value noise on a lattice with `cell`-pixel spacing.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(stream: &mut Keystream, height: usize, width: usize, cell: usize) -> Self {
        let cols = width / cell + 2;
        let rows = height / cell + 2;
        ValueNoise {
            cell: cell as f64,
            cols,
            lattice: (0..rows * cols).map(|_| stream.next_symmetric()).collect(),
        }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let fy = y as f64 / self.cell;
        let fx = x as f64 / self.cell;
        let (iy, ix) = (fy as usize, fx as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
        let v = |r: usize, c: usize| self.lattice[r * self.cols + c];
        let top = v(iy, ix) * (1.0 - tx) + v(iy, ix + 1) * tx;
        let bottom = v(iy + 1, ix) * (1.0 - tx) + v(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// A `3×height×width` cover determined entirely by `seed`.
pub fn synthetic_cover(seed: &StegoKey, height: usize, width: usize) -> QuantizedImage {
    let mut s = seed.derive("synthetic-cover").stream();
    let shape = Shape::new(3, height, width);
    let big = (height.max(width) / 2).max(4);

    let base: Vec<[f64; 3]> = (0..2).map(|_| [s.next_unit(), s.next_unit(), s.next_unit()]).collect();
    let angle = s.next_unit() * std::f64::consts::TAU;
    let (ca, sa) = (angle.cos(), angle.sin());
    let region = ValueNoise::new(&mut s, height, width, big.max(8) / 2);
    let shading = ValueNoise::new(&mut s, height, width, big);
    let texture: Vec<Vec<ValueNoise>> = (0..3)
        .map(|_| {
            [8, 4, 2]
                .iter()
                .map(|&cell| ValueNoise::new(&mut s, height, width, cell))
                .collect()
        })
        .collect();
    let texture_amp = 0.15 + 0.2 * s.next_unit();
    let region_bias = 0.4 * s.next_symmetric();
    let sensor_sigma = (0.5 + 1.5 * s.next_unit()) / 255.0;
    let black = 8.0 + 24.0 * s.next_unit();
    let white = 215.0 + 30.0 * s.next_unit();
    let stretch = |level: u8| {
        let v = (f64::from(level) - black) * 255.0 / (white - black);
        v.round().clamp(0.0, 255.0) as u8
    };

    let mut data = vec![0u8; shape.len()];
    let diag = (height * height + width * width) as f64;
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f64 * ca + y as f64 * sa) / diag.sqrt() + 1.0) / 2.0;
            let busy = ((region.at(y, x) + region_bias) * 4.0).clamp(0.0, 1.0);
            let light = 0.15 * shading.at(y, x);
            for c in 0..3 {
                let smooth = base[0][c] * (1.0 - t) + base[1][c] * t + light;
                let detail: f64 = texture[c]
                    .iter()
                    .zip([0.5, 0.3, 0.2])
                    .map(|(n, wgt)| wgt * n.at(y, x))
                    .sum();
                let v = smooth * 0.8 + 0.1
                    + busy * texture_amp * detail
                    + sensor_sigma * s.next_gaussian();
                data[shape.index(c, y, x)] = stretch(quantize_level(v.clamp(0.0, 1.0)));
            }
        }
    }
    QuantizedImage::from_vec(shape, data).expect("shape matches data")
}

/// `count` covers seeded from `label` and their index.
pub fn synthetic_corpus(label: &str, count: usize, height: usize, width: usize) -> Vec<QuantizedImage> {
    (0..count)
        .map(|i| synthetic_cover(&StegoKey::from_passphrase(&format!("{label}/{i}")), height, width))
        .collect()
}
