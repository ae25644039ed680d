//! Run configuration: the embedder settings plus the payload and decoder
//! sources, stored as flat `key = value` lines.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use keystego::embed::EmbedConfig;
use keystego::fnn::FixedDecoder;
use keystego::keystream::StegoKey;

pub const DEFAULT_DECODER_SEED: &str = "keystego-decoder-v1";

const EXTRA_KEYS: [&str; 4] = ["bpp", "payload", "decoder_seed", "weights"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// Uniform random bits drawn from the key.
    Random,
    /// A framed file given with `--secret`.
    File,
}

impl PayloadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PayloadKind::Random => "random",
            PayloadKind::File => "file",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PayloadKind::Random),
            "file" => Ok(PayloadKind::File),
            other => bail!("payload must be `random` or `file`, got `{other}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub embed: EmbedConfig,
    /// Message bits per pixel.
    pub bpp: usize,
    pub payload: PayloadKind,
    /// Passphrase the decoder weights are generated from.
    pub decoder_seed: String,
    /// Weight file used instead of the generated decoder.
    pub weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            embed: EmbedConfig::default(),
            bpp: 1,
            payload: PayloadKind::Random,
            decoder_seed: DEFAULT_DECODER_SEED.to_string(),
            weights: None,
        }
    }
}

impl RunConfig {
    pub fn from_config_str(s: &str) -> Result<Self> {
        let table: toml::Table = s.parse().context("config is not `key = value` lines")?;
        Self::from_table(table)
    }

    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(v) = table.remove("bpp") {
            let d = v.as_integer().ok_or_else(|| anyhow!("bpp must be an integer"))?;
            cfg.bpp = usize::try_from(d)
                .ok()
                .filter(|&d| d >= 1)
                .ok_or_else(|| anyhow!("bpp must be at least 1"))?;
        }
        if let Some(v) = table.remove("payload") {
            cfg.payload = PayloadKind::parse(string_value("payload", &v)?)?;
        }
        if let Some(v) = table.remove("decoder_seed") {
            cfg.decoder_seed = string_value("decoder_seed", &v)?.to_string();
        }
        if let Some(v) = table.remove("weights") {
            cfg.weights = Some(PathBuf::from(string_value("weights", &v)?));
        }
        cfg.embed = EmbedConfig::from_config_str(&toml::to_string(&table)?)?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        let mut table = toml::Table::try_from(&self.embed).expect("flat config");
        table.insert("bpp".into(), toml::Value::Integer(self.bpp as i64));
        table.insert("payload".into(), self.payload.as_str().into());
        table.insert("decoder_seed".into(), self.decoder_seed.clone().into());
        if let Some(w) = &self.weights {
            table.insert("weights".into(), w.display().to_string().into());
        }
        table
    }

    pub fn to_config_string(&self) -> String {
        let table = self.to_table();
        let mut out = String::new();
        for key in EXTRA_KEYS {
            if let Some(v) = table.get(key) {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        for (key, v) in &table {
            if !EXTRA_KEYS.contains(&key.as_str()) {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        out
    }

    /// Apply `key=value` overrides. Values are read as TOML, falling back to
    /// a bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table = self.to_table();
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got `{item}`"))?;
            let (key, raw) = (key.trim(), raw.trim());
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        Self::from_table(table)
    }

    pub fn decoder(&self) -> Result<FixedDecoder> {
        let decoder = match &self.weights {
            Some(path) => FixedDecoder::load_weights(path)?,
            None => FixedDecoder::build_seeded(&StegoKey::from_passphrase(&self.decoder_seed), self.bpp)?,
        };
        if decoder.payload_depth() != self.bpp {
            bail!(
                "decoder emits {} bits per pixel but bpp = {}",
                decoder.payload_depth(),
                self.bpp
            );
        }
        Ok(decoder)
    }
}

fn string_value<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| anyhow!("{key} must be a string"))
}
