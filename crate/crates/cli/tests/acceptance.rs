//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are expected to fail with the
//! generated decoder and are reported but do not fail the run. Any other
//! failure, or a known failure that starts passing, is printed as such; only
//! unexpected failures make the process exit non-zero.

use std::fs;
use std::process::Command;
use std::time::Instant;

use keystego::ablation::{component_rows, format_table, run_ablation, AblationCase};
use keystego::cost::{hill_cost, CostParams};
use keystego::embed::{embed, evaluate_stego, EmbedConfig, EmbedResult};
use keystego::fnn::FixedDecoder;
use keystego::image::{load_png_quantized, save_png, QuantizedImage, Shape, Tensor3};
use keystego::keystream::{random_message, StegoKey};
use keystego::lbfgs::{lbfgs_minimize, LbfgsOptions};
use keystego::message::MessageTensor;
use keystego::metrics::{ber, psnr, ssim};
use keystego::steganalysis::{analyze, lsb_replace_random, roc};
use keystego::synth::{synthetic_corpus, synthetic_cover};
use keystego::verify::{loss_gradient_checks, naive_decoder_forward, naive_hill_cost, FD_TOLERANCE};
use keystego_cli::DEFAULT_DECODER_SEED;

const KNOWN_FAILURES: [usize; 2] = [4, 7];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, "");
    let (mut checked, mut total) = (0, 0);
    for i in 0..3 {
        for c in loss_gradient_checks(&StegoKey::from_passphrase(&format!("acceptance/grad/{i}"))).unwrap() {
            if c.check.max_relative_error >= worst.0 {
                worst = (c.check.max_relative_error, c.name);
            }
            checked += c.check.checked;
            total += c.check.checked + c.check.straddling_kink;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst.0 < FD_TOLERANCE && secs < 30.0,
        format!(
            "max relative error {:.2e} ({}), {checked}/{total} coordinates clear of activation kinks, {secs:.1} s",
            worst.0, worst.1
        ),
    )
}

fn oracles() -> Outcome {
    let mut s = StegoKey::from_passphrase("acceptance/oracle").stream();
    let img = Tensor3::from_fn(Shape::new(3, 16, 16), |_, _, _| s.next_unit());
    let p = CostParams::default();
    let cost_err = max_diff(hill_cost(&img, &p).unwrap().data(), naive_hill_cost(&img, &p).data());
    let dec = FixedDecoder::build_seeded(&StegoKey::from_passphrase(DEFAULT_DECODER_SEED), 1).unwrap();
    let x = Tensor3::from_fn(Shape::new(3, 8, 8), |_, _, _| 2.0 * s.next_symmetric());
    let fwd_err = max_diff(dec.forward(&x).unwrap().data(), naive_decoder_forward(&dec, &x).data());
    outcome(
        cost_err < 1e-9 && fwd_err < 1e-9,
        format!("cost max |diff| {cost_err:.1e}, decoder max |diff| {fwd_err:.1e}"),
    )
}

fn lbfgs() -> Outcome {
    let mut s = StegoKey::from_passphrase("acceptance/lbfgs").stream();
    let target: Vec<f64> = (0..48).map(|_| s.next_symmetric()).collect();
    let start: Vec<f64> = (0..48).map(|_| 3.0 * s.next_symmetric()).collect();
    let quad = |x: &[f64]| {
        let f = x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        let g = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        Ok((f, g))
    };
    let opts = |steps| LbfgsOptions {
        steps,
        alpha: 1.0,
        ..LbfgsOptions::default()
    };
    let q = lbfgs_minimize(quad, &start, &opts(50)).unwrap();
    let dist = q.x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let rosen = |x: &[f64]| {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        Ok((f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
    };
    let r = lbfgs_minimize(rosen, &[-1.2, 1.0], &opts(200)).unwrap();
    outcome(
        dist < 1e-8 && q.steps <= 50 && r.value < 1e-6 && r.steps <= 200,
        format!(
            "quadratic ‖x−x*‖ {dist:.1e} in {} steps, Rosenbrock f {:.1e} in {} steps",
            q.steps, r.value, r.steps
        ),
    )
}

struct Embedded {
    cover: QuantizedImage,
    msg: MessageTensor,
    key: StegoKey,
    result: EmbedResult,
}

fn security_cases() -> Vec<(QuantizedImage, MessageTensor, StegoKey)> {
    (0..10)
        .map(|i| {
            let cover = synthetic_cover(&StegoKey::from_passphrase(&format!("acceptance/cover/{i}")), 64, 64);
            let key = StegoKey::from_passphrase(&format!("acceptance/key/{i}"));
            let msg = random_message(&key.derive("payload"), Shape::new(1, 64, 64));
            (cover, msg, key)
        })
        .collect()
}

fn embed_all(decoder: &FixedDecoder, cfg: &EmbedConfig) -> Vec<Embedded> {
    security_cases()
        .into_iter()
        .map(|(cover, msg, key)| {
            let result = embed(&cover.dequantize(), &msg, &key, decoder, cfg).unwrap();
            Embedded { cover, msg, key, result }
        })
        .collect()
}

fn security(runs: &[Embedded], secs: f64) -> Outcome {
    let ber_c = mean(runs.iter().map(|r| r.result.ber_correct()));
    let ber_n = mean(runs.iter().map(|r| r.result.ber_nokey()));
    let per_key: Vec<f64> = (0..3)
        .map(|k| mean(runs.iter().map(|r| r.result.evaluation.ber_wrong_per_key[k])))
        .collect();
    let unchanged = runs.iter().filter(|r| r.result.stego == r.cover).count();
    outcome(
        ber_c <= 0.05 && ber_n >= 0.15 && per_key.iter().all(|&b| b >= 0.15) && secs <= 600.0,
        format!(
            "BER correct {:.2}%, no key {:.2}%, wrong keys {:.2}/{:.2}/{:.2}%, mean PSNR {:.2} dB, {unchanged}/10 stegos equal their cover, {secs:.0} s",
            100.0 * ber_c,
            100.0 * ber_n,
            100.0 * per_key[0],
            100.0 * per_key[1],
            100.0 * per_key[2],
            mean(runs.iter().map(|r| r.result.psnr())),
        ),
    )
}

fn quantization(runs: &[Embedded], decoder: &FixedDecoder) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut mismatches = 0;
    for (i, r) in runs.iter().enumerate() {
        let path = dir.path().join(format!("{i}.png"));
        save_png(&r.result.stego, &path).unwrap();
        let loaded = load_png_quantized(&path).unwrap();
        let e = evaluate_stego(&loaded, &r.cover, &r.msg, &r.key, &r.result.wrong_keys, decoder).unwrap();
        if e.ber_correct != r.result.ber_correct()
            || e.ber_nokey != r.result.ber_nokey()
            || e.ber_wrong_per_key != r.result.evaluation.ber_wrong_per_key
        {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches}/{} images changed BER after save/load", runs.len()),
    )
}

fn adaptivity(runs: &[Embedded], decoder: &FixedDecoder) -> Outcome {
    let mut violations = 0;
    let mut moved = 0;
    for r in runs {
        let cover = r.cover.dequantize();
        let w = hill_cost(&cover, &CostParams::default()).unwrap();
        let stego = r.result.stego.dequantize();
        let mut pairs: Vec<(f64, f64)> = w
            .data()
            .iter()
            .zip(stego.data().iter().zip(cover.data()))
            .map(|(&c, (s, x))| (c, (s - x).abs()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let q = pairs.len() / 4;
        let low = mean(pairs[..q].iter().map(|p| p.1));
        let high = mean(pairs[pairs.len() - q..].iter().map(|p| p.1));
        if low < high {
            violations += 1;
        }
        if r.result.stego != r.cover {
            moved += 1;
        }
    }
    let psnr40 = mean(runs.iter().map(|r| r.result.psnr()));
    let cfg160 = EmbedConfig {
        epochs: 30,
        lambda_d: 160.0,
        ..EmbedConfig::default()
    };
    let psnr160 = mean(embed_all(decoder, &cfg160).iter().map(|r| r.result.psnr()));
    outcome(
        violations == 0 && psnr160 >= psnr40,
        format!(
            "{violations}/10 images perturb high-cost pixels more; mean PSNR λd=40 {psnr40:.2} dB, λd=160 {psnr160:.2} dB; {moved}/10 stegos differ from their cover{}",
            if moved == 0 { " (holds trivially)" } else { "" }
        ),
    )
}

fn ablation(decoder: &FixedDecoder) -> Outcome {
    let cases: Vec<AblationCase> = security_cases()
        .into_iter()
        .map(|(cover, msg, key)| AblationCase {
            cover: cover.dequantize(),
            msg,
            key,
        })
        .collect();
    let base = EmbedConfig {
        epochs: 30,
        ..EmbedConfig::default()
    };
    let rows = run_ablation(&cases, decoder, &base, &component_rows()).unwrap();
    for line in format_table(&rows).lines() {
        println!("      {line}");
    }
    let find = |name: &str| rows.iter().find(|r| r.name == name).unwrap();
    let (full, no3) = (find("full"), find("no type-III"));
    outcome(
        rows.len() == 6 && no3.ber_wrong < full.ber_wrong,
        format!(
            "{} rows; wrong-key BER without type-III {:.2}% vs full {:.2}%",
            rows.len(),
            100.0 * no3.ber_wrong,
            100.0 * full.ber_wrong
        ),
    )
}

fn metrics() -> Outcome {
    let shape = Shape::new(3, 24, 20);
    let mut s = StegoKey::from_passphrase("acceptance/metrics").stream();
    let a = QuantizedImage::from_vec(shape, (0..shape.len()).map(|_| (s.next_u64() >> 56) as u8).collect()).unwrap();
    let b = QuantizedImage::from_vec(
        shape,
        a.data().iter().map(|&v| v.saturating_add((s.next_u64() >> 61) as u8)).collect(),
    )
    .unwrap();
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum::<f64>()
        / shape.len() as f64;
    let direct = 10.0 * (255.0f64 * 255.0 / mse).log10();
    let psnr_err = (psnr(&a, &b).unwrap() - direct).abs();

    // same image pair as the golden SSIM test; the reference value comes
    // from scikit-image with Gaussian weights and population covariance
    let mut pa = vec![0u8; shape.len()];
    let mut pb = vec![0u8; shape.len()];
    for c in 0..3 {
        for y in 0..24 {
            for x in 0..20 {
                let v = (c * 67 + y * 31 + x * 17 + ((x * y) % 23) * 5) % 256;
                let d = ((c * 13 + y * 7 + x * 3) % 9) as i64 - 4;
                pa[shape.index(c, y, x)] = v as u8;
                pb[shape.index(c, y, x)] = (v as i64 + 3 * d).clamp(0, 255) as u8;
            }
        }
    }
    let ssim_err = (ssim(
        &QuantizedImage::from_vec(shape, pa).unwrap(),
        &QuantizedImage::from_vec(shape, pb).unwrap(),
    )
    .unwrap()
        - 0.993785522664775)
        .abs();
    let msg = random_message(&StegoKey::from_passphrase("acceptance/bits"), Shape::new(2, 16, 16));
    let flipped = ber(&msg, &msg.complement()).unwrap();
    outcome(
        psnr_err < 1e-9 && ssim_err < 1e-6 && flipped == 1.0,
        format!("PSNR |diff| {psnr_err:.1e} dB, SSIM |diff| {ssim_err:.1e}, BER of complement {flipped}"),
    )
}

fn steganalysis() -> Outcome {
    let mut s = StegoKey::from_passphrase("acceptance/roc").stream();
    let same: Vec<f64> = (0..50).map(|_| s.next_unit()).collect();
    let auc_same = roc(&same, &same).unwrap().auc;
    let low: Vec<f64> = (0..50).map(|_| 0.4 * s.next_unit()).collect();
    let high: Vec<f64> = (0..50).map(|_| 0.6 + 0.4 * s.next_unit()).collect();
    let auc_sep = roc(&low, &high).unwrap().auc;
    let covers = synthetic_corpus("acceptance/steganalysis", 100, 64, 64);
    let key = StegoKey::from_passphrase("acceptance/lsb");
    let cover_scores: Vec<f64> = covers.iter().map(|c| analyze(c).unwrap().fused).collect();
    let stego_scores: Vec<f64> = covers.iter().map(|c| analyze(&lsb_replace_random(c, &key)).unwrap().fused).collect();
    let (mc, ms) = (mean(cover_scores.iter().copied()), mean(stego_scores.iter().copied()));
    let auc = roc(&cover_scores, &stego_scores).unwrap().auc;
    outcome(
        (auc_same - 0.5).abs() <= 1e-12 && auc_sep == 1.0 && ms > mc,
        format!(
            "AUC identical {auc_same}, separated {auc_sep}; mean fused score covers {mc:.3} vs LSB stegos {ms:.3} (AUC {auc:.3})"
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    save_png(&synthetic_cover(&StegoKey::from_passphrase("acceptance/determinism"), 48, 48), dir.path().join("c.png")).unwrap();
    let run = |out: &str, extra: &[&str]| {
        let status = Command::new(env!("CARGO_BIN_EXE_keystego"))
            .current_dir(dir.path())
            .args(["embed", "--cover", "c.png", "--out", out, "--passphrase", "determinism"])
            .args(extra)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        fs::read(dir.path().join(out)).unwrap()
    };
    let defaults = run("a.png", &[]) == run("b.png", &[]);
    let tuned = ["--set", "lambda_d=1", "--set", "epochs=5"];
    let moving = run("c1.png", &tuned) == run("c2.png", &tuned);
    outcome(
        defaults && moving,
        format!("default config identical: {defaults}; λd=1, 5 epochs identical: {moving}"),
    )
}

fn main() {
    let decoder = FixedDecoder::build_seeded(&StegoKey::from_passphrase(DEFAULT_DECODER_SEED), 1).unwrap();
    let t = Instant::now();
    let cfg = EmbedConfig {
        epochs: 30,
        ..EmbedConfig::default()
    };
    let runs = embed_all(&decoder, &cfg);
    let security_secs = t.elapsed().as_secs_f64();

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "gradient correctness", Box::new(gradients)),
        (2, "oracle equivalence", Box::new(oracles)),
        (3, "L-BFGS sanity", Box::new(lbfgs)),
        (4, "security property", Box::new(|| security(&runs, security_secs))),
        (5, "quantization awareness", Box::new(|| quantization(&runs, &decoder))),
        (6, "adaptivity", Box::new(|| adaptivity(&runs, &decoder))),
        (7, "ablation harness", Box::new(|| ablation(&decoder))),
        (8, "metrics fidelity", Box::new(metrics)),
        (9, "steganalysis plumbing", Box::new(steganalysis)),
        (10, "determinism", Box::new(determinism)),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in &criteria {
        let o = check();
        let known = KNOWN_FAILURES.contains(id);
        let note = match (o.passed, known) {
            (false, true) => " [known failure]",
            (true, true) => " [listed as a known failure but passed]",
            _ => "",
        };
        println!(
            "{} criterion {id:>2} {name}: {}{note}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed && !known {
            unexpected.push(*id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
