//! Component ablations of the embedder, reported as mean BERs and quality
//! over a set of embedding cases.

use crate::embed::{embed, EmbedConfig, StegoEvaluation};
use crate::error::{Error, Result};
use crate::fnn::FixedDecoder;
use crate::image::ImageTensor;
use crate::keystream::StegoKey;
use crate::message::MessageTensor;

/// Which components a configuration keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    pub cost: bool,
    pub type2: bool,
    pub type3: bool,
    pub two_stage: bool,
    pub iterative_quantize: bool,
}

impl Components {
    pub const FULL: Components = Components {
        cost: true,
        type2: true,
        type3: true,
        two_stage: true,
        iterative_quantize: true,
    };

    /// `base` with the switched-off components disabled. Removed loss terms
    /// get a zero weight.
    pub fn apply(&self, base: &EmbedConfig) -> EmbedConfig {
        let mut cfg = base.clone();
        cfg.use_cost = self.cost;
        if !self.type2 {
            cfg.lambda_2 = 0.0;
        }
        if !self.type3 {
            cfg.lambda_3 = 0.0;
        }
        if !self.two_stage {
            cfg.two_stage = false;
        }
        cfg.iterative_quantize = self.iterative_quantize;
        cfg
    }
}

/// The six component rows: nothing, then each component removed in turn,
/// then everything.
pub fn component_rows() -> Vec<(&'static str, Components)> {
    let full = Components::FULL;
    vec![
        (
            "none",
            Components {
                cost: false,
                type2: false,
                type3: false,
                two_stage: false,
                ..full
            },
        ),
        ("no cost", Components { cost: false, ..full }),
        ("no type-II", Components { type2: false, ..full }),
        ("no type-III", Components { type3: false, ..full }),
        ("one-stage", Components { two_stage: false, ..full }),
        ("full", full),
    ]
}

/// One- and two-stage updates with quantization only at the end.
pub fn quantization_rows() -> Vec<(&'static str, Components)> {
    let end_only = Components {
        iterative_quantize: false,
        ..Components::FULL
    };
    vec![
        (
            "one-stage, final quantization",
            Components {
                two_stage: false,
                ..end_only
            },
        ),
        ("two-stage, final quantization", end_only),
    ]
}

pub struct AblationCase {
    pub cover: ImageTensor,
    pub msg: MessageTensor,
    pub key: StegoKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub components: Components,
    pub ber: f64,
    pub ber_nokey: f64,
    pub ber_wrong: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl AblationRow {
    fn from_evaluations(name: &str, components: Components, evals: &[StegoEvaluation]) -> Self {
        let mean = |f: fn(&StegoEvaluation) -> f64| {
            evals.iter().map(f).sum::<f64>() / evals.len() as f64
        };
        AblationRow {
            name: name.to_string(),
            components,
            ber: mean(|e| e.ber_correct),
            ber_nokey: mean(|e| e.ber_nokey),
            ber_wrong: mean(|e| e.ber_wrong),
            psnr: mean(|e| e.psnr),
            ssim: mean(|e| e.ssim),
        }
    }
}

/// Embed every case under each row's configuration.
pub fn run_ablation(
    cases: &[AblationCase],
    decoder: &FixedDecoder,
    base: &EmbedConfig,
    rows: &[(&str, Components)],
) -> Result<Vec<AblationRow>> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one case".into()));
    }
    rows.iter()
        .map(|(name, comp)| {
            let cfg = comp.apply(base);
            let evals = cases
                .iter()
                .map(|c| Ok(embed(&c.cover, &c.msg, &c.key, decoder, &cfg)?.evaluation))
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow::from_evaluations(name, *comp, &evals))
        })
        .collect()
}

/// Plain-text table with one check mark column per component.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { "-" };
    let mut out = format!(
        "{:<30} {:>4} {:>4} {:>4} {:>4} {:>4} {:>8} {:>8} {:>8} {:>8} {:>7}\n",
        "config", "cost", "II", "III", "2st", "iq", "BER%", "noKey%", "wrong%", "PSNR", "SSIM"
    );
    for r in rows {
        let c = r.components;
        out.push_str(&format!(
            "{:<30} {:>4} {:>4} {:>4} {:>4} {:>4} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>7.4}\n",
            r.name,
            mark(c.cost),
            mark(c.type2),
            mark(c.type3),
            mark(c.two_stage),
            mark(c.iterative_quantize),
            100.0 * r.ber,
            100.0 * r.ber_nokey,
            100.0 * r.ber_wrong,
            r.psnr,
            r.ssim
        ));
    }
    out
}
