//! Stego-image generation and secret extraction.
//!
//! Each epoch runs a block of L-BFGS steps on `λd·Ld + λ1·L1`, then a block
//! on the full signed objective, then projects the iterate back onto
//! `[0,1]` and (optionally) onto the 8-bit grid. Optimiser memory is reset at
//! every block boundary because the projection invalidates curvature pairs.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::cost::{hill_cost, CostMatrix, CostParams};
use crate::error::{Error, Result};
use crate::fnn::{decode_bits, FixedDecoder};
use crate::image::{clip01, quantize, ImageTensor, QuantizedImage, Tensor3};
use crate::keystream::{encrypt, wrong_key_set, StegoKey};
use crate::lbfgs::{lbfgs_minimize_with, LbfgsOptions};
use crate::losses::{BceReduction, LossProblem, LossWeights, Stage};
use crate::message::MessageTensor;
use crate::metrics::{ber, psnr, ssim};

/// Consecutive error-free quantized epochs required before stopping early.
pub const EARLY_EXIT_EPOCHS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    /// Initial line-search step.
    pub alpha: f64,
    pub epochs: usize,
    /// L-BFGS steps on the distortion + correct-key objective per epoch.
    pub st1: usize,
    /// L-BFGS steps on the full objective per epoch.
    pub st2: usize,
    pub lambda_d: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
    /// Size of the wrong-key set.
    pub n_wrong: usize,
    pub lbfgs_memory: usize,
    pub two_stage: bool,
    pub iterative_quantize: bool,
    /// Weight the distortion by the content-adaptive cost; otherwise uniform.
    pub use_cost: bool,
    pub early_exit: bool,
    pub bce_reduction: BceReduction,
    pub cost_threshold: f64,
    pub cost_cap: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let c = CostParams::default();
        EmbedConfig {
            alpha: 0.10,
            epochs: 100,
            st1: 15,
            st2: 15,
            lambda_d: w.lambda_d,
            lambda_1: w.lambda_1,
            lambda_2: w.lambda_2,
            lambda_3: w.lambda_3,
            n_wrong: 3,
            lbfgs_memory: 10,
            two_stage: true,
            iterative_quantize: true,
            use_cost: true,
            early_exit: true,
            bce_reduction: BceReduction::Mean,
            cost_threshold: c.threshold,
            cost_cap: c.cap,
        }
    }
}

impl EmbedConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_d: self.lambda_d,
            lambda_1: self.lambda_1,
            lambda_2: self.lambda_2,
            lambda_3: self.lambda_3,
        }
    }

    pub fn set_weights(&mut self, w: LossWeights) {
        self.lambda_d = w.lambda_d;
        self.lambda_1 = w.lambda_1;
        self.lambda_2 = w.lambda_2;
        self.lambda_3 = w.lambda_3;
    }

    pub fn cost_params(&self) -> CostParams {
        CostParams {
            threshold: self.cost_threshold,
            cap: self.cost_cap,
            ..CostParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if self.epochs == 0 || self.st1 == 0 || self.n_wrong == 0 || self.lbfgs_memory == 0 {
            return bad("epochs, st1, n_wrong and lbfgs_memory must be at least 1");
        }
        if self.st2 == 0 && self.two_stage {
            return bad("st2 may be 0 only when two_stage = false");
        }
        if !(self.cost_threshold > 0.0 && self.cost_cap >= self.cost_threshold) {
            return bad("cost_threshold must be positive and cost_cap >= cost_threshold");
        }
        self.weights().validate()
    }

    /// Parse `key = value` lines. Missing keys keep their defaults.
    pub fn from_config_str(s: &str) -> Result<Self> {
        let cfg: EmbedConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    /// Running count of accepted optimiser steps.
    pub iteration: usize,
    pub epoch: usize,
    pub stage: u8,
    pub total: f64,
    pub d: f64,
    pub type1: f64,
    pub type2: f64,
    pub type3: f64,
}

impl TraceRecord {
    pub const CSV_HEADER: &'static str = "iteration,stage,total,d,type1,type2,type3";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.stage, self.total, self.d, self.type1, self.type2, self.type3
        )
    }
}

/// BERs and image quality of a finished stego image.
#[derive(Debug, Clone, PartialEq)]
pub struct StegoEvaluation {
    pub ber_correct: f64,
    pub ber_nokey: f64,
    /// Mean over the wrong-key set.
    pub ber_wrong: f64,
    pub ber_wrong_per_key: Vec<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedResult {
    pub stego: QuantizedImage,
    pub evaluation: StegoEvaluation,
    pub trace: Vec<TraceRecord>,
    pub epochs_run: usize,
    pub cost: CostMatrix,
    pub wrong_keys: Vec<StegoKey>,
}

impl EmbedResult {
    pub fn ber_correct(&self) -> f64 {
        self.evaluation.ber_correct
    }

    pub fn ber_nokey(&self) -> f64 {
        self.evaluation.ber_nokey
    }

    pub fn ber_wrong(&self) -> f64 {
        self.evaluation.ber_wrong
    }

    pub fn psnr(&self) -> f64 {
        self.evaluation.psnr
    }

    pub fn ssim(&self) -> f64 {
        self.evaluation.ssim
    }
}

/// Decode the message from a stego image, with or without a key.
pub fn extract(
    stego: &QuantizedImage,
    key: Option<&StegoKey>,
    decoder: &FixedDecoder,
) -> Result<MessageTensor> {
    let img = stego.dequantize();
    let input = match key {
        Some(k) => encrypt(&img, k),
        None => img,
    };
    Ok(decode_bits(&decoder.forward(&input)?))
}

pub fn evaluate_stego(
    stego: &QuantizedImage,
    cover: &QuantizedImage,
    msg: &MessageTensor,
    key: &StegoKey,
    wrong_keys: &[StegoKey],
    decoder: &FixedDecoder,
) -> Result<StegoEvaluation> {
    let ber_correct = ber(&extract(stego, Some(key), decoder)?, msg)?;
    let ber_nokey = ber(&extract(stego, None, decoder)?, msg)?;
    let ber_wrong_per_key = wrong_keys
        .iter()
        .map(|k| ber(&extract(stego, Some(k), decoder)?, msg))
        .collect::<Result<Vec<_>>>()?;
    let ber_wrong = if ber_wrong_per_key.is_empty() {
        f64::NAN
    } else {
        ber_wrong_per_key.iter().sum::<f64>() / ber_wrong_per_key.len() as f64
    };
    Ok(StegoEvaluation {
        ber_correct,
        ber_nokey,
        ber_wrong,
        ber_wrong_per_key,
        psnr: psnr(cover, stego)?,
        ssim: ssim(cover, stego)?,
    })
}

pub fn embed(
    cover: &ImageTensor,
    msg: &MessageTensor,
    key: &StegoKey,
    decoder: &FixedDecoder,
    cfg: &EmbedConfig,
) -> Result<EmbedResult> {
    embed_with(cover, msg, key, decoder, cfg, |_| {})
}

/// [`embed`], streaming every trace record to `on_record` as it is produced.
pub fn embed_with(
    cover: &ImageTensor,
    msg: &MessageTensor,
    key: &StegoKey,
    decoder: &FixedDecoder,
    cfg: &EmbedConfig,
    mut on_record: impl FnMut(&TraceRecord),
) -> Result<EmbedResult> {
    cfg.validate()?;
    let shape = cover.shape();
    if shape.channels != 3 {
        return Err(Error::shape("3-channel cover", shape));
    }
    if decoder.payload_depth() != msg.depth() {
        return Err(Error::shape(
            format!("{}-bit-per-pixel message for this decoder", decoder.payload_depth()),
            format!("{} bits per pixel", msg.depth()),
        ));
    }
    let cover = clip01(cover);
    let cost = if cfg.use_cost {
        hill_cost(&cover, &cfg.cost_params())?
    } else {
        CostMatrix::uniform(shape, 1.0)
    };
    let wrong_keys = wrong_key_set(key, cfg.n_wrong);
    let problem = LossProblem::new(&cover, &cost, key, &wrong_keys, msg, decoder, cfg.weights())?
        .with_reduction(cfg.bce_reduction);

    let mut x = cover.clone();
    let mut trace = Vec::new();
    let mut clean_epochs = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        let blocks: &[(Stage, usize)] = if cfg.two_stage {
            &[(Stage::One, cfg.st1), (Stage::Two, cfg.st2)]
        } else {
            &[(Stage::Two, cfg.st1 + cfg.st2)]
        };
        let epoch_start = x.clone();
        for &(stage, steps) in blocks {
            if steps == 0 {
                continue;
            }
            x = run_block(&problem, &x, stage, steps, epoch, cfg, &mut trace, &mut on_record)?;
        }
        x = clip01(&x);
        if cfg.iterative_quantize {
            x = quantize(&x).dequantize();
        }
        epochs_run = epoch;

        let decoded = extract(&quantize(&x), Some(key), decoder)?;
        if ber(&decoded, msg)? == 0.0 {
            clean_epochs += 1;
        } else {
            clean_epochs = 0;
        }
        // a deterministic epoch that leaves the iterate unchanged repeats forever
        if cfg.early_exit && (clean_epochs >= EARLY_EXIT_EPOCHS || x == epoch_start) {
            break;
        }
    }

    let stego = quantize(&x);
    let evaluation = evaluate_stego(&stego, &quantize(&cover), msg, key, &wrong_keys, decoder)?;
    Ok(EmbedResult {
        stego,
        evaluation,
        trace,
        epochs_run,
        cost,
        wrong_keys,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_block(
    problem: &LossProblem,
    start: &Tensor3,
    stage: Stage,
    steps: usize,
    epoch: usize,
    cfg: &EmbedConfig,
    trace: &mut Vec<TraceRecord>,
    on_record: &mut impl FnMut(&TraceRecord),
) -> Result<Tensor3> {
    let shape = start.shape();
    let last = RefCell::new(None);
    let objective = |v: &[f64]| {
        let stego = Tensor3::from_vec(shape, v.to_vec())?;
        let r = problem.evaluate(&stego, stage)?;
        *last.borrow_mut() = Some((r.total, r.d, r.type1, r.type2, r.type3));
        Ok((r.total, r.gradient.into_vec()))
    };
    let opts = LbfgsOptions {
        steps,
        alpha: cfg.alpha,
        memory: cfg.lbfgs_memory,
        ..LbfgsOptions::default()
    };
    let outcome = lbfgs_minimize_with(objective, start.data(), &opts, |_| {
        let (total, d, type1, type2, type3) = last.borrow().expect("evaluated before step");
        let rec = TraceRecord {
            iteration: trace.len() + 1,
            epoch,
            stage: stage.number(),
            total,
            d,
            type1,
            type2,
            type3,
        };
        on_record(&rec);
        trace.push(rec);
    })
    .map_err(|e| match e {
        Error::NonFinite { value, context } => Error::NonFinite {
            value,
            context: format!(
                "{context}; epoch {epoch}, stage {}, after {} trace records",
                stage.number(),
                trace.len()
            ),
        },
        other => other,
    })?;
    Tensor3::from_vec(shape, outcome.x)
}
