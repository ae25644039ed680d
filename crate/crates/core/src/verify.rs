//! Independent reference computations used by the test suites and by the
//! `selftest` command.
//!
//! Everything here is deliberately naive (nested loops, no shared helpers with
//! the production paths) so that agreement is meaningful.

use crate::cost::{hill_cost, CostParams};
use crate::error::Result;
use crate::fnn::FixedDecoder;
use crate::image::{decode_png, encode_png, ImageTensor, QuantizedImage, Shape, Tensor3};
use crate::keystream::{encrypt, random_message, wrong_key_set, StegoKey};
use crate::lbfgs::{lbfgs_minimize, LbfgsOptions};
use crate::losses::{
    bce_with_logits, distortion_loss, total_loss, type1_loss, type2_loss, type3_loss, LossWeights,
    Stage,
};

/// Decoder forward pass computed pixel by pixel.
pub fn naive_decoder_forward(decoder: &FixedDecoder, img: &ImageTensor) -> Tensor3 {
    let (h, w) = (img.shape().height, img.shape().width);
    let mut act: Vec<Vec<Vec<f64>>> = (0..img.shape().channels)
        .map(|c| {
            (0..h)
                .map(|y| (0..w).map(|x| img.get(c, y, x)).collect())
                .collect()
        })
        .collect();
    let last = decoder.layers().len() - 1;
    for (li, layer) in decoder.layers().iter().enumerate() {
        let (kh, kw) = layer.kernel();
        let cin = layer.in_channels();
        let mut out = vec![vec![vec![0.0; w]; h]; layer.out_channels()];
        for (o, plane) in out.iter_mut().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.bias()[o];
                    for i in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = y as isize + ky as isize - (kh / 2) as isize;
                                let sx = x as isize + kx as isize - (kw / 2) as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wi = ((o * cin + i) * kh + ky) * kw + kx;
                                acc += layer.weights()[wi] * act[i][sy as usize][sx as usize];
                            }
                        }
                    }
                    if li != last && acc <= 0.0 {
                        acc *= decoder.negative_slope();
                    }
                    plane[y][x] = acc;
                }
            }
        }
        act = out;
    }
    Tensor3::from_fn(Shape::new(act.len(), h, w), |c, y, x| act[c][y][x])
}

fn mirror(i: isize, n: usize) -> usize {
    // walk back and forth until inside [0, n)
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn naive_filter(plane: &[Vec<f64>], kernel: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, w) = (plane.len(), plane[0].len());
    let (kh, kw) = (kernel.len(), kernel[0].len());
    let mut out = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ky, krow) in kernel.iter().enumerate() {
                for (kx, k) in krow.iter().enumerate() {
                    let sy = mirror(y as isize + ky as isize - (kh / 2) as isize, h);
                    let sx = mirror(x as isize + kx as isize - (kw / 2) as isize, w);
                    acc += k * plane[sy][sx];
                }
            }
            out[y][x] = acc;
        }
    }
    out
}

/// Perturbation cost pipeline written out with nested loops.
pub fn naive_hill_cost(cover: &ImageTensor, params: &CostParams) -> Tensor3 {
    let s = cover.shape();
    let high = vec![
        vec![-1.0, 2.0, -1.0],
        vec![2.0, -4.0, 2.0],
        vec![-1.0, 2.0, -1.0],
    ];
    let mean3 = vec![vec![1.0 / 9.0; 3]; 3];
    let mean15 = vec![vec![1.0 / 225.0; 15]; 15];
    let mut planes = Vec::new();
    for c in 0..s.channels {
        let p: Vec<Vec<f64>> = (0..s.height)
            .map(|y| {
                (0..s.width)
                    .map(|x| cover.get(c, y, x) * params.intensity_scale)
                    .collect()
            })
            .collect();
        let r: Vec<Vec<f64>> = naive_filter(&p, &high)
            .into_iter()
            .map(|row| row.into_iter().map(f64::abs).collect())
            .collect();
        let r = naive_filter(&r, &mean3);
        let inv: Vec<Vec<f64>> = r
            .into_iter()
            .map(|row| row.into_iter().map(|v| 1.0 / (v + params.eps)).collect())
            .collect();
        let wmap = naive_filter(&inv, &mean15);
        planes.push(wmap);
    }
    Tensor3::from_fn(s, |c, y, x| {
        let v = planes[c][y][x];
        if v > params.threshold {
            params.cap
        } else {
            v
        }
    })
}

/// Central differences of `f` at `x` along every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest coordinate-wise relative error, `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Activation signs of `decoder` on each input, concatenated.
pub fn activation_signature(decoder: &FixedDecoder, inputs: &[Tensor3]) -> Vec<bool> {
    inputs
        .iter()
        .flat_map(|x| {
            decoder
                .forward_cached(x)
                .expect("signature input matches decoder")
                .1
                .activation_signs()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose probes straddled a LeakyReLU kink, where central
    /// differences do not estimate the derivative.
    pub straddling_kink: usize,
}

impl GradientCheck {
    pub fn coverage(&self) -> f64 {
        self.checked as f64 / (self.checked + self.straddling_kink).max(1) as f64
    }

    pub fn merge(&self, other: &GradientCheck) -> GradientCheck {
        GradientCheck {
            max_relative_error: self.max_relative_error.max(other.max_relative_error),
            checked: self.checked + other.checked,
            straddling_kink: self.straddling_kink + other.straddling_kink,
        }
    }
}

/// Compare `analytic` against central differences of `f` at `x`.
///
/// `f` returns the loss and the activation signature of every decoder pass
/// it performed. Coordinates whose `x ± h` probes change the signature are
/// excluded from the comparison and counted separately.
pub fn check_gradient(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<bool>),
    analytic: &[f64],
    x: &[f64],
    h: f64,
    floor: f64,
) -> GradientCheck {
    let (_, base) = f(x);
    let mut probe = x.to_vec();
    let mut out = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        straddling_kink: 0,
    };
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let (up, sig_up) = f(&probe);
        probe[i] = orig - h;
        let (down, sig_down) = f(&probe);
        probe[i] = orig;
        if sig_up != base || sig_down != base {
            out.straddling_kink += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        out.max_relative_error = out.max_relative_error.max(err);
        out.checked += 1;
    }
    out
}

/// Finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-3;
/// Relative error tolerated between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Smallest fraction of coordinates that must avoid activation kinks.
pub const FD_MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheck {
    pub name: &'static str,
    pub check: GradientCheck,
}

/// Gradient checks of every loss term on one random 3×8×8 instance.
pub fn loss_gradient_checks(seed: &StegoKey) -> Result<Vec<LossCheck>> {
    let shape = Shape::new(3, 8, 8);
    let decoder = FixedDecoder::build_seeded(&seed.derive("decoder"), 1)?;
    let mut s = seed.derive("instance").stream();
    let cover = Tensor3::from_fn(shape, |_, _, _| s.next_unit());
    let stego = Tensor3::from_fn(shape, |c, y, x| cover.get(c, y, x) + 0.2 * s.next_symmetric());
    let cost = hill_cost(&cover, &CostParams::default())?;
    let msg = random_message(&seed.derive("message"), Shape::new(1, 8, 8));
    let key = seed.derive("key");
    let wrong = wrong_key_set(&key, 3);
    let weights = LossWeights::default();
    let tensor = |v: &[f64]| Tensor3::from_vec(shape, v.to_vec()).expect("probe keeps shape");
    let sig = |t: &Tensor3, keys: &[&StegoKey], plain: bool| {
        let mut inputs: Vec<Tensor3> = keys.iter().map(|k| encrypt(t, k)).collect();
        if plain {
            inputs.push(t.clone());
        }
        activation_signature(&decoder, &inputs)
    };
    let all_wrong: Vec<&StegoKey> = wrong.iter().collect();
    let mut everything = vec![&key];
    everything.extend(all_wrong.iter().copied());
    let x = stego.data();
    let mut out = Vec::new();

    let (_, g) = distortion_loss(&cover, &stego, &cost)?;
    out.push(LossCheck {
        name: "distortion",
        check: check_gradient(
            |v| (distortion_loss(&cover, &tensor(v), &cost).expect("shapes").0, vec![]),
            g.data(),
            x,
            FD_STEP,
            1e-10,
        ),
    });

    let logits = Tensor3::from_fn(Shape::new(1, 8, 8), |_, _, _| 3.0 * s.next_symmetric());
    let (_, g) = bce_with_logits(&logits, &msg)?;
    out.push(LossCheck {
        name: "bce",
        check: check_gradient(
            |v| {
                let z = Tensor3::from_vec(logits.shape(), v.to_vec()).expect("shape");
                (bce_with_logits(&z, &msg).expect("shapes").0, vec![])
            },
            g.data(),
            logits.data(),
            FD_STEP,
            1e-10,
        ),
    });

    let (_, g) = type1_loss(&stego, &key, &msg, &decoder)?;
    out.push(LossCheck {
        name: "type1",
        check: check_gradient(
            |v| {
                let t = tensor(v);
                let val = type1_loss(&t, &key, &msg, &decoder).expect("shapes").0;
                (val, sig(&t, &[&key], false))
            },
            g.data(),
            x,
            FD_STEP,
            1e-10,
        ),
    });

    let (_, g) = type2_loss(&stego, &msg, &decoder)?;
    out.push(LossCheck {
        name: "type2",
        check: check_gradient(
            |v| {
                let t = tensor(v);
                let val = type2_loss(&t, &msg, &decoder).expect("shapes").0;
                (val, sig(&t, &[], true))
            },
            g.data(),
            x,
            FD_STEP,
            1e-10,
        ),
    });

    let (_, g) = type3_loss(&stego, &wrong, &msg, &decoder)?;
    out.push(LossCheck {
        name: "type3",
        check: check_gradient(
            |v| {
                let t = tensor(v);
                let val = type3_loss(&t, &wrong, &msg, &decoder).expect("shapes").0;
                (val, sig(&t, &all_wrong, false))
            },
            g.data(),
            x,
            FD_STEP,
            1e-10,
        ),
    });

    for (name, stage) in [("total stage 1", Stage::One), ("total stage 2", Stage::Two)] {
        let total = |t: &Tensor3| {
            total_loss(&cover, t, &cost, &key, &wrong, &msg, &decoder, weights, stage)
        };
        let g = total(&stego)?.gradient;
        out.push(LossCheck {
            name,
            check: check_gradient(
                |v| {
                    let t = tensor(v);
                    let val = total(&t).expect("shapes").total;
                    let signature = match stage {
                        Stage::One => sig(&t, &[&key], false),
                        Stage::Two => sig(&t, &everything, true),
                    };
                    (val, signature)
                },
                g.data(),
                x,
                FD_STEP,
                1e-10,
            ),
        });
    }
    Ok(out)
}

/// Outcome of one built-in consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SelfCheck {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        SelfCheck {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Oracle comparisons and gradient checks runnable from an installed binary.
pub fn selftest() -> Result<Vec<SelfCheck>> {
    let mut out = Vec::new();
    let root = StegoKey::from_passphrase("selftest");

    let decoder = FixedDecoder::build_seeded(&root.derive("decoder"), 1)?;
    let mut s = root.derive("inputs").stream();
    let img = Tensor3::from_fn(Shape::new(3, 8, 8), |_, _, _| 2.0 * s.next_symmetric());
    let fast = decoder.forward(&img)?;
    let err = max_abs_difference(fast.data(), naive_decoder_forward(&decoder, &img).data());
    out.push(SelfCheck::new(
        "decoder forward vs nested loops",
        err <= 1e-9,
        format!("max |diff| {err:.3e}"),
    ));

    let cover = Tensor3::from_fn(Shape::new(3, 16, 16), |_, _, _| s.next_unit());
    let params = CostParams::default();
    let fast = hill_cost(&cover, &params)?;
    let err = max_abs_difference(fast.data(), naive_hill_cost(&cover, &params).data());
    out.push(SelfCheck::new(
        "perturbation cost vs nested loops",
        err <= 1e-9,
        format!("max |diff| {err:.3e}"),
    ));

    let mut pooled: Option<GradientCheck> = None;
    for i in 0..3 {
        for lc in loss_gradient_checks(&root.derive(&format!("gradients/{i}")))? {
            pooled = Some(match pooled {
                Some(p) => p.merge(&lc.check),
                None => lc.check,
            });
        }
    }
    let g = pooled.expect("at least one check");
    out.push(SelfCheck::new(
        "loss gradients vs central differences",
        g.max_relative_error < FD_TOLERANCE && g.coverage() >= FD_MIN_COVERAGE,
        format!(
            "max rel err {:.3e} over {} coordinates ({:.0}% clear of activation kinks)",
            g.max_relative_error,
            g.checked,
            100.0 * g.coverage()
        ),
    ));

    let target: Vec<f64> = (0..48).map(|_| s.next_symmetric()).collect();
    let start: Vec<f64> = (0..48).map(|_| 3.0 * s.next_symmetric()).collect();
    let quad = |x: &[f64]| {
        let f = x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        let g = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        Ok((f, g))
    };
    let opts = LbfgsOptions {
        steps: 50,
        alpha: 1.0,
        ..LbfgsOptions::default()
    };
    let res = lbfgs_minimize(quad, &start, &opts)?;
    let dist = max_abs_difference(&res.x, &target);
    out.push(SelfCheck::new(
        "L-BFGS on a quadratic",
        dist < 1e-8,
        format!("max |x - x*| {dist:.3e} after {} steps", res.steps),
    ));

    let q = QuantizedImage::from_vec(
        Shape::new(3, 4, 5),
        (0..60).map(|_| (s.next_u64() >> 56) as u8).collect(),
    )?;
    let back = decode_png(encode_png(&q)?.as_slice())?;
    out.push(SelfCheck::new(
        "PNG round trip",
        back == q,
        "3x4x5 random image".to_string(),
    ));
    Ok(out)
}

fn max_abs_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
