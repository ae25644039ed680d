//! Distortion and decoding losses, each with its gradient with respect to the
//! stego image.

use serde::{Deserialize, Serialize};

use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::fnn::{FixedDecoder, LogitTensor};
use crate::image::{ImageTensor, Tensor3};
use crate::keystream::{derive_mask, EncryptionMask, StegoKey};
use crate::message::MessageTensor;

/// Maximised BCE terms stop contributing (value and gradient) beyond this.
pub const MAXIMIZED_BCE_CEILING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 40.0,
            lambda_1: 5.0,
            lambda_2: 0.05,
            lambda_3: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_d, self.lambda_1, self.lambda_2, self.lambda_3];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// How the per-bit cross-entropies inside the decoding losses are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BceReduction {
    #[default]
    Mean,
    /// Mean times the bit count. The ceiling on maximised terms scales too.
    Sum,
}

/// Which objective an optimisation stage minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// `λd·Ld + λ1·L1`
    One,
    /// `λd·Ld + λ1·L1 − λ2·L2 − λ3·L3`
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub d: f64,
    pub type1: f64,
    /// After the ceiling; zero in stage one.
    pub type2: f64,
    /// After the ceiling; zero in stage one.
    pub type3: f64,
    pub gradient: Tensor3,
}

/// `sqrt(Σ w·(cover − stego)² / N)` and its gradient in `stego`.
pub fn distortion_loss(
    cover: &ImageTensor,
    stego: &ImageTensor,
    w: &CostMatrix,
) -> Result<(f64, Tensor3)> {
    cover.shape().expect(stego.shape())?;
    cover.shape().expect(w.shape())?;
    let n = cover.data().len() as f64;
    let weighted: f64 = cover
        .data()
        .iter()
        .zip(stego.data())
        .zip(w.data())
        .map(|((c, s), w)| w * (c - s) * (c - s))
        .sum();
    let value = (weighted / n).sqrt();
    let grad = if value > 0.0 {
        let scale = 1.0 / (n * value);
        Tensor3::from_vec(
            cover.shape(),
            cover
                .data()
                .iter()
                .zip(stego.data())
                .zip(w.data())
                .map(|((c, s), w)| scale * w * (s - c))
                .collect(),
        )?
    } else {
        Tensor3::zeros(cover.shape())
    };
    Ok((value, grad))
}

/// Mean binary cross-entropy of `sigmoid(logits)` against the bits, with its
/// gradient in the logits.
pub fn bce_with_logits(logits: &LogitTensor, target: &MessageTensor) -> Result<(f64, Tensor3)> {
    logits.shape().expect(target.shape())?;
    let n = logits.data().len() as f64;
    let mut sum = 0.0;
    let grad = logits
        .data()
        .iter()
        .zip(target.bits())
        .map(|(&z, &m)| {
            let m = f64::from(m);
            sum += z.max(0.0) - z * m + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - m) / n
        })
        .collect();
    Ok((sum / n, Tensor3::from_vec(logits.shape(), grad)?))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_depth(decoder: &FixedDecoder, msg: &MessageTensor, stego: &ImageTensor) -> Result<()> {
    if decoder.payload_depth() != msg.depth() {
        return Err(Error::shape(
            format!("message depth {}", decoder.payload_depth()),
            format!("depth {}", msg.depth()),
        ));
    }
    let s = stego.shape();
    let m = msg.shape();
    if (s.height, s.width) != (m.height, m.width) {
        return Err(Error::shape(
            format!("{}x{} message", s.height, s.width),
            format!("{}x{}", m.height, m.width),
        ));
    }
    Ok(())
}

/// BCE of `F(stego + mask)` against `msg`, differentiated back to `stego`. The additive mask has identity Jacobian.
fn masked_bce(
    decoder: &FixedDecoder,
    stego: &ImageTensor,
    mask: Option<&EncryptionMask>,
    msg: &MessageTensor,
) -> Result<(f64, Tensor3)> {
    check_depth(decoder, msg, stego)?;
    let input = match mask {
        Some(m) => stego.add(m.as_tensor())?,
        None => stego.clone(),
    };
    let (logits, tape) = decoder.forward_cached(&input)?;
    let (value, dlogits) = bce_with_logits(&logits, msg)?;
    Ok((value, decoder.backward(&tape, &dlogits)?))
}

/// Correct-key decoding loss.
pub fn type1_loss(
    stego: &ImageTensor,
    key: &StegoKey,
    msg: &MessageTensor,
    decoder: &FixedDecoder,
) -> Result<(f64, Tensor3)> {
    let mask = derive_mask(key, stego.shape());
    masked_bce(decoder, stego, Some(&mask), msg)
}

/// Keyless decoding loss (maximised by the embedder).
pub fn type2_loss(
    stego: &ImageTensor,
    msg: &MessageTensor,
    decoder: &FixedDecoder,
) -> Result<(f64, Tensor3)> {
    masked_bce(decoder, stego, None, msg)
}

/// Wrong-key decoding loss summed over the key set (maximised by the
/// embedder).
pub fn type3_loss(
    stego: &ImageTensor,
    wrong_keys: &[StegoKey],
    msg: &MessageTensor,
    decoder: &FixedDecoder,
) -> Result<(f64, Tensor3)> {
    let masks: Vec<_> = wrong_keys
        .iter()
        .map(|k| derive_mask(k, stego.shape()))
        .collect();
    summed_bce(decoder, stego, &masks, msg)
}

fn summed_bce(
    decoder: &FixedDecoder,
    stego: &ImageTensor,
    masks: &[EncryptionMask],
    msg: &MessageTensor,
) -> Result<(f64, Tensor3)> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("wrong-key set is empty".into()));
    }
    let mut total = 0.0;
    let mut grad = Tensor3::zeros(stego.shape());
    for m in masks {
        let (v, g) = masked_bce(decoder, stego, Some(m), msg)?;
        total += v;
        accumulate(&mut grad, &g, 1.0);
    }
    Ok((total, grad))
}

fn accumulate(acc: &mut Tensor3, g: &Tensor3, scale: f64) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += scale * b;
    }
}

/// Everything the total loss depends on except the stego iterate itself.
/// Masks are derived once up front.
pub struct LossProblem<'a> {
    cover: &'a ImageTensor,
    cost: &'a CostMatrix,
    msg: &'a MessageTensor,
    decoder: &'a FixedDecoder,
    weights: LossWeights,
    reduction: BceReduction,
    key_mask: EncryptionMask,
    wrong_masks: Vec<EncryptionMask>,
}

impl<'a> LossProblem<'a> {
    pub fn new(
        cover: &'a ImageTensor,
        cost: &'a CostMatrix,
        key: &StegoKey,
        wrong_keys: &[StegoKey],
        msg: &'a MessageTensor,
        decoder: &'a FixedDecoder,
        weights: LossWeights,
    ) -> Result<Self> {
        weights.validate()?;
        cover.shape().expect(cost.shape())?;
        check_depth(decoder, msg, cover)?;
        let shape = cover.shape();
        Ok(LossProblem {
            cover,
            cost,
            msg,
            decoder,
            weights,
            reduction: BceReduction::Mean,
            key_mask: derive_mask(key, shape),
            wrong_masks: wrong_keys.iter().map(|k| derive_mask(k, shape)).collect(),
        })
    }

    pub fn with_reduction(mut self, reduction: BceReduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn cover(&self) -> &ImageTensor {
        self.cover
    }

    pub fn cost(&self) -> &CostMatrix {
        self.cost
    }

    /// Value and gradient of the stage objective at `stego`.
    pub fn evaluate(&self, stego: &ImageTensor, stage: Stage) -> Result<LossReport> {
        let w = self.weights;
        let (d, gd) = distortion_loss(self.cover, stego, self.cost)?;
        let scale = match self.reduction {
            BceReduction::Mean => 1.0,
            BceReduction::Sum => self.msg.len() as f64,
        };
        let ceiling = MAXIMIZED_BCE_CEILING * scale;
        let (type1, g1) = masked_bce(self.decoder, stego, Some(&self.key_mask), self.msg)?;
        let type1 = type1 * scale;
        let mut gradient = gd.map(|v| w.lambda_d * v);
        accumulate(&mut gradient, &g1, w.lambda_1 * scale);
        let mut total = w.lambda_d * d + w.lambda_1 * type1;
        let (mut type2, mut type3) = (0.0, 0.0);
        if stage == Stage::Two {
            if w.lambda_2 > 0.0 {
                let (v, g) = masked_bce(self.decoder, stego, None, self.msg)?;
                let v = v * scale;
                type2 = v.min(ceiling);
                if v < ceiling {
                    accumulate(&mut gradient, &g, -w.lambda_2 * scale);
                }
            }
            if w.lambda_3 > 0.0 && !self.wrong_masks.is_empty() {
                let (v, g) = summed_bce(self.decoder, stego, &self.wrong_masks, self.msg)?;
                let v = v * scale;
                type3 = v.min(ceiling);
                if v < ceiling {
                    accumulate(&mut gradient, &g, -w.lambda_3 * scale);
                }
            }
            total -= w.lambda_2 * type2 + w.lambda_3 * type3;
        }
        Ok(LossReport {
            total,
            d,
            type1,
            type2,
            type3,
            gradient,
        })
    }
}

/// One-shot form of [`LossProblem::evaluate`].
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    cover: &ImageTensor,
    stego: &ImageTensor,
    w: &CostMatrix,
    key: &StegoKey,
    wrong_keys: &[StegoKey],
    msg: &MessageTensor,
    decoder: &FixedDecoder,
    weights: LossWeights,
    stage: Stage,
) -> Result<LossReport> {
    LossProblem::new(cover, w, key, wrong_keys, msg, decoder, weights)?.evaluate(stego, stage)
}
