//! Command-line front end for key-controlled fixed-network steganography.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use keystego::embed::{embed_with, evaluate_stego, extract, EmbedConfig, TraceRecord};
use keystego::fnn::FixedDecoder;
use keystego::image::{load_png, load_png_quantized, save_gray_png, save_png, Shape};
use keystego::keystream::{random_message, wrong_key_set, StegoKey};
use keystego::message::{frame_payload, unframe_payload, MessageTensor};
use keystego::steganalysis::{analyze, lsb_replace_random, roc};
use keystego::synth::synthetic_cover;
use keystego::{cost, verify};

pub use config::{PayloadKind, RunConfig, DEFAULT_DECODER_SEED};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "keystego", version, about = "Hide bits in images with a key-controlled fixed decoder network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed a payload into a cover PNG.
    Embed(EmbedArgs),
    /// Decode the payload from a stego PNG.
    Extract(ExtractArgs),
    /// Embed random payloads into every PNG of a directory and write a CSV of
    /// BERs and image quality.
    Evaluate(EvaluateArgs),
    /// Write the perturbation cost of a cover as a grayscale PNG.
    CostMap(CostMapArgs),
    /// Score covers and stegos with the LSB detectors and write the ROC.
    Steganalyze(SteganalyzeArgs),
    /// Run the built-in oracle and gradient checks.
    Selftest,
    /// Write deterministic synthetic covers, optionally with LSB stegos.
    GenCovers(GenCoversArgs),
    /// Save the generated decoder weights to a file.
    ExportDecoder(ExportDecoderArgs),
}

#[derive(Args, Debug, Default)]
struct KeyArgs {
    /// Secret key as 64 hex digits.
    #[arg(long, env = "KEYSTEGO_KEY", hide_env_values = true, conflicts_with = "passphrase")]
    key: Option<String>,
    /// Secret passphrase, hashed to a key.
    #[arg(long, env = "KEYSTEGO_PASSPHRASE", hide_env_values = true)]
    passphrase: Option<String>,
}

impl KeyArgs {
    fn key(&self) -> Result<Option<StegoKey>> {
        match (&self.key, &self.passphrase) {
            (Some(hex), _) => Ok(Some(StegoKey::from_hex(hex)?)),
            (None, Some(p)) => Ok(Some(StegoKey::from_passphrase(p))),
            (None, None) => Ok(None),
        }
    }

    fn require(&self) -> Result<StegoKey> {
        self.key()?
            .ok_or_else(|| anyhow!("a key is required: pass --key, --passphrase, KEYSTEGO_KEY or KEYSTEGO_PASSPHRASE"))
    }
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reset every embedder setting to its published default, ignoring
    /// --config. Also disables the early exit.
    #[arg(long, value_parser = ["paper"])]
    preset: Option<String>,
    /// Override one config key, e.g. `--set epochs=30`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Message bits per pixel.
    #[arg(long)]
    bpp: Option<usize>,
    /// Passphrase the decoder weights are generated from.
    #[arg(long)]
    decoder_seed: Option<String>,
    /// Decoder weight file, instead of the generated decoder.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Run every epoch even after the message decodes cleanly.
    #[arg(long)]
    no_early_exit: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                RunConfig::from_config_str(&text)
                    .with_context(|| format!("in config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if self.preset.is_some() {
            cfg.embed = EmbedConfig {
                early_exit: false,
                ..EmbedConfig::default()
            };
        }
        let mut cfg = cfg.with_overrides(&self.overrides)?;
        if let Some(d) = self.bpp {
            if d == 0 {
                bail!("--bpp must be at least 1");
            }
            cfg.bpp = d;
        }
        if let Some(s) = &self.decoder_seed {
            cfg.decoder_seed = s.clone();
        }
        if let Some(w) = &self.weights {
            cfg.weights = Some(w.clone());
        }
        if self.no_early_exit {
            cfg.embed.early_exit = false;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    cover: PathBuf,
    /// Stego PNG to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// `random` bits from the key, or a `file` given with --secret.
    #[arg(long)]
    payload: Option<String>,
    /// File to hide when --payload file.
    #[arg(long)]
    secret: Option<PathBuf>,
    /// Write the per-step loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the embedded message bits, packed MSB first.
    #[arg(long)]
    message_out: Option<PathBuf>,
    /// Write the resolved configuration.
    #[arg(long)]
    save_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    stego: PathBuf,
    /// Where to write the recovered payload.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Write every decoded bit, packed MSB first, without removing framing.
    #[arg(long)]
    raw: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Directory of cover PNGs.
    #[arg(long)]
    covers: PathBuf,
    /// CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also save each stego here, under the cover's file name.
    #[arg(long)]
    stego_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct CostMapArgs {
    #[arg(long)]
    cover: PathBuf,
    /// Grayscale PNG of the channel-mean cost, scaled to its maximum.
    #[arg(long)]
    out: PathBuf,
    /// Raw dump of the full C×H×W cost as little-endian f64.
    #[arg(long)]
    raw: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct SteganalyzeArgs {
    #[arg(long)]
    covers: PathBuf,
    #[arg(long)]
    stegos: PathBuf,
    /// ROC curve CSV. A gnuplot `.dat` is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Per-image detector scores as CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenCoversArgs {
    /// Directory for the covers.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Seed label; the same label gives the same covers.
    #[arg(long, default_value = "covers")]
    label: String,
    /// Also write full-rate LSB replacement stegos of every cover here.
    #[arg(long)]
    lsb_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportDecoderArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    bpp: usize,
    #[arg(long, default_value = DEFAULT_DECODER_SEED)]
    decoder_seed: String,
}

/// Parse `argv` (program name first), run the command and return the exit
/// code: 0 on success, 1 on user error, 2 on internal error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// Failures of the numerics or the encoder are internal. Everything else
/// traces back to arguments or input files.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let internal = e.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<keystego::Error>(),
            Some(keystego::Error::NonFinite { .. } | keystego::Error::PngEncode(_))
        )
    });
    if internal {
        EXIT_INTERNAL
    } else {
        EXIT_USER
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Embed(a) => cmd_embed(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::CostMap(a) => cmd_cost_map(a),
        Command::Steganalyze(a) => cmd_steganalyze(a),
        Command::Selftest => cmd_selftest(),
        Command::GenCovers(a) => cmd_gen_covers(a),
        Command::ExportDecoder(a) => cmd_export_decoder(a),
    }
}

fn message_shape(cover: Shape, bpp: usize) -> Shape {
    Shape::new(bpp, cover.height, cover.width)
}

fn cmd_embed(a: EmbedArgs) -> Result<i32> {
    let mut cfg = a.config.resolve()?;
    if let Some(p) = &a.payload {
        cfg.payload = PayloadKind::parse(p)?;
    }
    let key = a.key.require()?;
    let decoder = cfg.decoder()?;
    let cover = load_png(&a.cover)?;
    let shape = message_shape(cover.shape(), cfg.bpp);
    let msg = match cfg.payload {
        PayloadKind::Random => random_message(&key.derive("payload"), shape),
        PayloadKind::File => {
            let path = a
                .secret
                .as_ref()
                .ok_or_else(|| anyhow!("--payload file needs --secret <path>"))?;
            let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
            frame_payload(&bytes, shape, &key.derive("payload-filler"))?
        }
    };

    let mut trace = match &a.trace {
        Some(path) => {
            let mut f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            writeln!(f, "{}", TraceRecord::CSV_HEADER)?;
            Some(std::io::BufWriter::new(f))
        }
        None => None,
    };
    let mut write_err = None;
    let result = embed_with(&cover, &msg, &key, &decoder, &cfg.embed, |r| {
        if let Some(w) = trace.as_mut() {
            if let Err(e) = writeln!(w, "{}", r.to_csv_row()) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("cannot write trace");
    }
    if let Some(mut w) = trace {
        w.flush()?;
    }
    save_png(&result.stego, &a.out)?;
    if let Some(path) = &a.message_out {
        fs::write(path, msg.to_packed()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &a.save_config {
        fs::write(path, cfg.to_config_string()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let e = &result.evaluation;
    println!(
        "wrote {}: BER {:.4} (no key {:.4}, wrong keys {:.4}), PSNR {:.2} dB, SSIM {:.4}, {} epochs",
        a.out.display(),
        e.ber_correct,
        e.ber_nokey,
        e.ber_wrong,
        e.psnr,
        e.ssim,
        result.epochs_run
    );
    Ok(EXIT_OK)
}

fn cmd_extract(a: ExtractArgs) -> Result<i32> {
    let cfg = a.config.resolve()?;
    let key = a.key.key()?;
    let decoder = cfg.decoder()?;
    let stego = load_png_quantized(&a.stego)?;
    let msg = extract(&stego, key.as_ref(), &decoder)?;
    let bytes = if a.raw { msg.to_packed() } else { unframe_payload(&msg) };
    fs::write(&a.out, &bytes).with_context(|| format!("cannot write {}", a.out.display()))?;
    if key.is_none() {
        eprintln!("warning: no key given; decoded without decryption");
    }
    println!("wrote {} bytes to {}", bytes.len(), a.out.display());
    Ok(EXIT_OK)
}

/// PNG files of `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG files in {}", dir.display());
    }
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub const EVALUATE_HEADER: &str = "image,bpp,ber_correct,ber_nokey,ber_wrong,psnr,ssim";

fn cmd_evaluate(a: EvaluateArgs) -> Result<i32> {
    let cfg = a.config.resolve()?;
    let key = a.key.require()?;
    let decoder = cfg.decoder()?;
    let files = list_pngs(&a.covers)?;
    if let Some(dir) = &a.stego_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .context("cannot start worker pool")?;
    let rows: Vec<Result<String>> = pool.install(|| {
        files
            .par_iter()
            .map(|path| evaluate_one(path, &cfg, &key, &decoder, a.stego_dir.as_deref()))
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut csv = format!("{EVALUATE_HEADER}\n");
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    fs::write(&a.out, csv).with_context(|| format!("cannot write {}", a.out.display()))?;
    println!("evaluated {} images into {}", rows.len(), a.out.display());
    Ok(EXIT_OK)
}

fn evaluate_one(
    path: &Path,
    cfg: &RunConfig,
    key: &StegoKey,
    decoder: &FixedDecoder,
    stego_dir: Option<&Path>,
) -> Result<String> {
    let name = file_name(path);
    let cover = load_png_quantized(path)?;
    let msg: MessageTensor = random_message(
        &key.derive(&format!("payload/{name}")),
        message_shape(cover.shape(), cfg.bpp),
    );
    let result = embed_with(&cover.dequantize(), &msg, key, decoder, &cfg.embed, |_| {})
        .with_context(|| format!("embedding into {}", path.display()))?;
    if let Some(dir) = stego_dir {
        save_png(&result.stego, dir.join(&name))?;
    }
    // score the decoded file, not the in-memory tensor
    let stego = keystego::image::decode_png(keystego::image::encode_png(&result.stego)?.as_slice())?;
    let e = evaluate_stego(&stego, &cover, &msg, key, &wrong_key_set(key, cfg.embed.n_wrong), decoder)?;
    Ok(format!(
        "{name},{},{},{},{},{},{}",
        cfg.bpp, e.ber_correct, e.ber_nokey, e.ber_wrong, e.psnr, e.ssim
    ))
}

fn cmd_cost_map(a: CostMapArgs) -> Result<i32> {
    let cfg = a.config.resolve()?;
    let cover = load_png(&a.cover)?;
    let w = cost::hill_cost(&cover, &cfg.embed.cost_params())?;
    let shape = w.shape();
    let plane = shape.plane_len();
    let mean: Vec<f64> = (0..plane)
        .map(|i| (0..shape.channels).map(|c| w.data()[c * plane + i]).sum::<f64>() / shape.channels as f64)
        .collect();
    let top = mean.iter().cloned().fold(0.0, f64::max);
    let gray: Vec<u8> = mean
        .iter()
        .map(|v| if top > 0.0 { (255.0 * v / top).round() as u8 } else { 0 })
        .collect();
    save_gray_png(&gray, shape.width, shape.height, &a.out)?;
    if let Some(path) = &a.raw {
        let bytes: Vec<u8> = w.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!("wrote {}x{} cost map to {}", shape.width, shape.height, a.out.display());
    Ok(EXIT_OK)
}

fn score_dir(dir: &Path) -> Result<Vec<(String, keystego::steganalysis::DetectorScore)>> {
    list_pngs(dir)?
        .par_iter()
        .map(|p| {
            let img = load_png_quantized(p)?;
            let s = analyze(&img).with_context(|| format!("scoring {}", p.display()))?;
            Ok((file_name(p), s))
        })
        .collect()
}

fn cmd_steganalyze(a: SteganalyzeArgs) -> Result<i32> {
    let covers = score_dir(&a.covers)?;
    let stegos = score_dir(&a.stegos)?;
    let fused = |v: &[(String, keystego::steganalysis::DetectorScore)]| -> Vec<f64> {
        v.iter().map(|(_, s)| s.fused).collect()
    };
    let curve = roc(&fused(&covers), &fused(&stegos))?;
    let mut csv = String::from("fpr,tpr\n");
    for (f, t) in &curve.points {
        csv.push_str(&format!("{f},{t}\n"));
    }
    fs::write(&a.out, csv).with_context(|| format!("cannot write {}", a.out.display()))?;
    let dat = a.out.with_extension("dat");
    fs::write(&dat, curve.to_gnuplot()).with_context(|| format!("cannot write {}", dat.display()))?;
    if let Some(path) = &a.scores {
        let mut csv = String::from("set,image,chi_square,rs,sample_pairs,fused\n");
        for (set, rows) in [("cover", &covers), ("stego", &stegos)] {
            for (name, s) in rows {
                csv.push_str(&format!(
                    "{set},{name},{:.6},{:.6},{:.6},{:.6}\n",
                    s.chi_square, s.rs, s.sample_pairs, s.fused
                ));
            }
        }
        fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!("AUC {:.6}", curve.auc);
    Ok(EXIT_OK)
}

fn cmd_selftest() -> Result<i32> {
    let checks = verify::selftest()?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_INTERNAL })
}

fn cmd_gen_covers(a: GenCoversArgs) -> Result<i32> {
    if a.count == 0 || a.height < 8 || a.width < 8 {
        bail!("need --count >= 1 and images of at least 8x8");
    }
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    if let Some(dir) = &a.lsb_out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    for i in 0..a.count {
        let seed = StegoKey::from_passphrase(&format!("{}/{i}", a.label));
        let cover = synthetic_cover(&seed, a.height, a.width);
        let name = format!("{:04}.png", i);
        save_png(&cover, a.out.join(&name))?;
        if let Some(dir) = &a.lsb_out {
            save_png(&lsb_replace_random(&cover, &seed.derive("lsb")), dir.join(&name))?;
        }
    }
    println!("wrote {} covers to {}", a.count, a.out.display());
    Ok(EXIT_OK)
}

fn cmd_export_decoder(a: ExportDecoderArgs) -> Result<i32> {
    if a.bpp == 0 {
        bail!("--bpp must be at least 1");
    }
    let decoder = FixedDecoder::build_seeded(&StegoKey::from_passphrase(&a.decoder_seed), a.bpp)?;
    decoder.save_weights(&a.out)?;
    println!("wrote decoder weights to {}", a.out.display());
    Ok(EXIT_OK)
}
