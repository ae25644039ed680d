//! Classical LSB detectors, score fusion and ROC curves.
//!
//! Each detector looks at every colour channel's LSB plane separately and
//! averages the per-channel scores. Scores are in `[0, 1]`, higher meaning
//! more likely to carry a payload.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::image::QuantizedImage;
use crate::keystream::StegoKey;

/// Fused scores at or above this are reported as stego.
pub const DEFAULT_THRESHOLD: f64 = 0.2;

const RS_MASK: [bool; 4] = [false, true, true, false];
/// Minimum expected count for a value pair to enter the chi-square sum.
const MIN_PAIR_COUNT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorScore {
    pub chi_square: f64,
    pub rs: f64,
    pub sample_pairs: f64,
    pub fused: f64,
}

impl DetectorScore {
    pub fn is_stego(&self, threshold: f64) -> bool {
        self.fused >= threshold
    }
}

/// Run all three detectors and fuse them by their mean.
pub fn analyze(img: &QuantizedImage) -> Result<DetectorScore> {
    let chi_square = chi_square_attack(img)?;
    let rs = rs_analysis(img);
    let sample_pairs = sample_pairs(img);
    Ok(DetectorScore {
        chi_square,
        rs,
        sample_pairs,
        fused: (chi_square + rs + sample_pairs) / 3.0,
    })
}

fn per_channel(img: &QuantizedImage, f: impl Fn(&[u8], usize, usize) -> f64) -> f64 {
    let s = img.shape();
    let total: f64 = (0..s.channels)
        .map(|c| f(img.plane(c), s.height, s.width).clamp(0.0, 1.0))
        .sum();
    total / s.channels as f64
}

/// Pairs-of-values chi-square test: the probability that the histogram's
/// value pairs `(2k, 2k+1)` were equalised by LSB replacement.
pub fn chi_square_attack(img: &QuantizedImage) -> Result<f64> {
    let s = img.shape();
    if s.plane_len() < 256 {
        return Err(Error::InvalidArgument(format!(
            "chi-square attack needs at least 256 pixels per channel, image is {}x{}",
            s.height, s.width
        )));
    }
    Ok(per_channel(img, |plane, _, _| chi_square_plane(plane)))
}

fn chi_square_plane(plane: &[u8]) -> f64 {
    let mut hist = [0u64; 256];
    for &v in plane {
        hist[v as usize] += 1;
    }
    let mut stat = 0.0;
    let mut categories = 0usize;
    for k in 0..128 {
        let even = hist[2 * k] as f64;
        let expected = (even + hist[2 * k + 1] as f64) / 2.0;
        if expected >= MIN_PAIR_COUNT {
            stat += (even - expected).powi(2) / expected;
            categories += 1;
        }
    }
    if categories < 2 {
        return 0.0;
    }
    match ChiSquared::new((categories - 1) as f64) {
        Ok(dist) => dist.sf(stat),
        Err(_) => 0.0,
    }
}

/// LSB flipping `F1`: 0↔1, 2↔3, …
fn flip(v: i32) -> i32 {
    v ^ 1
}

/// Shifted flipping `F-1`: −1↔0, 1↔2, …
fn flip_neg(v: i32) -> i32 {
    ((v + 1) ^ 1) - 1
}

/// Regular and singular group counts for one flipping direction.
fn rs_counts(plane: &[u8], h: usize, w: usize, invert_lsb: bool, f: fn(i32) -> i32) -> (f64, f64) {
    let (mut regular, mut singular) = (0usize, 0usize);
    let mut group = [0i32; 4];
    let mut flipped = [0i32; 4];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for chunk in row.chunks_exact(4) {
            for i in 0..4 {
                let v = i32::from(chunk[i]);
                group[i] = if invert_lsb { flip(v) } else { v };
                flipped[i] = if RS_MASK[i] { f(group[i]) } else { group[i] };
            }
            let before = smoothness(&group);
            let after = smoothness(&flipped);
            if after > before {
                regular += 1;
            } else if after < before {
                singular += 1;
            }
        }
    }
    let groups = (h * (w / 4)).max(1) as f64;
    (regular as f64 / groups, singular as f64 / groups)
}

fn smoothness(g: &[i32; 4]) -> i32 {
    g.windows(2).map(|p| (p[1] - p[0]).abs()).sum()
}

/// RS steganalysis with the `[0, 1, 1, 0]` mask.
pub fn rs_analysis(img: &QuantizedImage) -> f64 {
    per_channel(img, rs_plane)
}

fn rs_plane(plane: &[u8], h: usize, w: usize) -> f64 {
    let (rm, sm) = rs_counts(plane, h, w, false, flip);
    let (rn, sn) = rs_counts(plane, h, w, false, flip_neg);
    let (rm1, sm1) = rs_counts(plane, h, w, true, flip);
    let (rn1, sn1) = rs_counts(plane, h, w, true, flip_neg);
    let d0 = rm - sm;
    let d1 = rm1 - sm1;
    let dn0 = rn - sn;
    let dn1 = rn1 - sn1;
    let a = 2.0 * (d1 + d0);
    let b = dn0 - dn1 - d1 - 3.0 * d0;
    let c = d0 - dn0;
    let Some(z) = smallest_root(a, b, c) else {
        return 0.0;
    };
    let p = z / (z - 0.5);
    if p.is_finite() {
        p
    } else {
        0.0
    }
}

/// Root of `a·x² + b·x + c` with the smallest magnitude, if real.
fn smallest_root(a: f64, b: f64, c: f64) -> Option<f64> {
    const TINY: f64 = 1e-12;
    if a.abs() < TINY {
        return (b.abs() >= TINY).then(|| -c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let r1 = (-b + sq) / (2.0 * a);
    let r2 = (-b - sq) / (2.0 * a);
    Some(if r1.abs() <= r2.abs() { r1 } else { r2 })
}

/// Sample pairs analysis over horizontally adjacent pixels.
pub fn sample_pairs(img: &QuantizedImage) -> f64 {
    per_channel(img, sample_pairs_plane)
}

fn sample_pairs_plane(plane: &[u8], h: usize, w: usize) -> f64 {
    let (mut x, mut y, mut z, mut wc, mut p) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for r in 0..h {
        for c in 0..w.saturating_sub(1) {
            let u = i32::from(plane[r * w + c]);
            let v = i32::from(plane[r * w + c + 1]);
            if u >> 1 == v >> 1 && u != v {
                wc += 1.0;
            }
            if u == v {
                z += 1.0;
            }
            let v_even = v % 2 == 0;
            if (v_even && u < v) || (!v_even && u > v) {
                x += 1.0;
            }
            if (v_even && u > v) || (!v_even && u < v) {
                y += 1.0;
            }
            p += 1.0;
        }
    }
    let a = (wc + z) / 2.0;
    let b = 2.0 * x - p;
    let c = y - x;
    smallest_root(a, b, c).unwrap_or(0.0)
}

/// Replace every LSB with a keystream bit.
pub fn lsb_replace_random(img: &QuantizedImage, key: &StegoKey) -> QuantizedImage {
    let mut s = key.derive("lsb-replace").stream();
    let data = img.data().iter().map(|&v| (v & !1) | s.next_bit()).collect();
    QuantizedImage::from_vec(img.shape(), data).expect("same shape")
}

/// ±1 embedding at full rate: where a keystream bit differs from the LSB,
/// add or subtract one at random (never leaving 0..=255).
pub fn lsb_match_random(img: &QuantizedImage, key: &StegoKey) -> QuantizedImage {
    let mut s = key.derive("lsb-match").stream();
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let bit = s.next_bit();
            let up = s.next_bit() == 1;
            if v & 1 == bit {
                v
            } else if v == 0 || (up && v < 255) {
                v + 1
            } else {
                v - 1
            }
        })
        .collect();
    QuantizedImage::from_vec(img.shape(), data).expect("same shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, non-decreasing in both.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Whitespace-separated `fpr tpr` rows with a leading comment line.
    pub fn to_gnuplot(&self) -> String {
        let mut out = format!("# fpr tpr (auc = {:.6})\n", self.auc);
        for (f, t) in &self.points {
            out.push_str(&format!("{f:.6} {t:.6}\n"));
        }
        out
    }
}

/// ROC of the rule `score >= threshold` swept over every distinct score.
pub fn roc(cover_scores: &[f64], stego_scores: &[f64]) -> Result<RocCurve> {
    if cover_scores.is_empty() || stego_scores.is_empty() {
        return Err(Error::InvalidArgument(
            "ROC needs at least one cover and one stego score".into(),
        ));
    }
    if cover_scores.iter().chain(stego_scores).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("ROC scores must not be NaN".into()));
    }
    let mut thresholds: Vec<f64> = cover_scores.iter().chain(stego_scores).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |scores: &[f64], t: f64| {
        scores.iter().filter(|&&s| s >= t).count() as f64 / scores.len() as f64
    };
    let mut points = vec![(0.0, 0.0)];
    points.extend(
        thresholds
            .iter()
            .map(|&t| (rate(cover_scores, t), rate(stego_scores, t))),
    );
    let auc = points
        .windows(2)
        .map(|p| (p[1].0 - p[0].0) * (p[1].1 + p[0].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;

    fn constant(v: u8) -> QuantizedImage {
        let shape = Shape::new(3, 32, 32);
        QuantizedImage::from_vec(shape, vec![v; shape.len()]).unwrap()
    }

    #[test]
    fn constant_image_scores_zero() {
        let img = constant(77);
        assert_eq!(rs_analysis(&img), 0.0);
        assert_eq!(sample_pairs(&img), 0.0);
        assert_eq!(chi_square_attack(&img).unwrap(), 0.0);
    }

    #[test]
    fn equalised_pairs_saturate_chi_square() {
        let shape = Shape::new(1, 32, 32);
        let data = (0..shape.len()).map(|i| (i % 64) as u8).collect();
        let img = QuantizedImage::from_vec(shape, data).unwrap();
        assert!(chi_square_attack(&img).unwrap() > 0.99);
    }

    #[test]
    fn small_images_are_rejected() {
        let shape = Shape::new(3, 15, 15);
        let img = QuantizedImage::from_vec(shape, vec![0; shape.len()]).unwrap();
        assert!(chi_square_attack(&img).is_err());
    }

    #[test]
    fn roc_examples() {
        let a = [0.1, 0.4, 0.35, 0.8];
        let same = roc(&a, &a).unwrap();
        assert!((same.auc - 0.5).abs() < 1e-12);
        let sep = roc(&[0.1, 0.2], &[0.5, 0.9]).unwrap();
        assert_eq!(sep.auc, 1.0);
        // covers {0.2, 0.6}, stegos {0.4, 0.8}:
        // points (0,0) (0,.5) (.5,.5) (.5,1) (1,1) -> area 0.75
        let hand = roc(&[0.2, 0.6], &[0.4, 0.8]).unwrap();
        assert_eq!(
            hand.points,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(hand.auc, 0.75);
        assert!(roc(&[], &[0.1]).is_err());
    }

    #[test]
    fn roc_ignores_monotone_rescaling() {
        let covers = [0.05, 0.3, 0.12, 0.5, 0.3];
        let stegos = [0.3, 0.7, 0.2, 0.9];
        let base = roc(&covers, &stegos).unwrap().auc;
        let warp = |v: &[f64]| v.iter().map(|x| (3.0 * x).exp() - 1.0).collect::<Vec<_>>();
        let warped = roc(&warp(&covers), &warp(&stegos)).unwrap().auc;
        assert!((base - warped).abs() < 1e-15);
    }

    #[test]
    fn flipping_functions() {
        assert_eq!((0..6).map(flip).collect::<Vec<_>>(), [1, 0, 3, 2, 5, 4]);
        assert_eq!((0..6).map(flip_neg).collect::<Vec<_>>(), [-1, 2, 1, 4, 3, 6]);
    }
}
