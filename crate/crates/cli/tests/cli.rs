use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use keystego::cost::{hill_cost, CostParams};
use keystego::image::load_png;
use keystego::message::unpack_bits;

fn keystego(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keystego"))
        .args(args)
        .current_dir(dir)
        .env_remove("KEYSTEGO_KEY")
        .env_remove("KEYSTEGO_PASSPHRASE")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn workspace(covers: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    ok(&keystego(
        &["gen-covers", "--out", "covers", "--count", &covers.to_string(), "--height", "24", "--width", "24", "--lsb-out", "lsb"],
        &path,
    ));
    (dir, path)
}

fn bit_error_rate(a: &[u8], b: &[u8]) -> f64 {
    let (a, b) = (unpack_bits(a), unpack_bits(b));
    assert_eq!(a.len(), b.len());
    a.iter().zip(&b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

const QUICK: [&str; 4] = ["--set", "lambda_d=1", "--set", "epochs=4"];

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = keystego(&["--help"], dir.path());
    assert!(ok(&out).contains("steganalyze"));
    let out = keystego(&["embed", "--help"], dir.path());
    assert!(ok(&out).contains("--passphrase"));
    let out = keystego(&["embed", "--nonsense"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(keystego(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn user_errors_exit_with_one() {
    let (_d, dir) = workspace(1);
    let cover = "covers/0000.png";
    // no key
    assert_eq!(keystego(&["embed", "--cover", cover, "--out", "s.png"], &dir).status.code(), Some(1));
    // malformed key
    let out = keystego(&["embed", "--cover", cover, "--out", "s.png", "--key", "abc"], &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid key"));
    // missing file, bad override, file payload without a file
    for extra in [
        vec!["--cover", "missing.png"],
        vec!["--cover", cover, "--set", "epochs=0"],
        vec!["--cover", cover, "--set", "no_such_key=1"],
        vec!["--cover", cover, "--payload", "file"],
    ] {
        let mut args = vec!["embed", "--out", "s.png", "--passphrase", "pw"];
        args.extend(extra);
        assert_eq!(keystego(&args, &dir).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn embed_then_extract() {
    let (_d, dir) = workspace(1);
    let mut args = vec![
        "embed", "--cover", "covers/0000.png", "--out", "s.png", "--passphrase", "pw",
        "--message-out", "msg.bin", "--trace", "trace.csv", "--save-config", "run.toml",
    ];
    args.extend(QUICK);
    let stdout = ok(&keystego(&args, &dir));
    let reported: f64 = stdout.split("BER ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();

    ok(&keystego(&["extract", "--stego", "s.png", "--passphrase", "pw", "--raw", "--out", "got.bin"], &dir));
    let msg = fs::read(dir.join("msg.bin")).unwrap();
    let got = fs::read(dir.join("got.bin")).unwrap();
    assert_eq!(msg.len(), 24 * 24 / 8);
    let ber = bit_error_rate(&msg, &got);
    assert!((ber - reported).abs() < 1e-4, "reported {reported}, measured {ber}");
    assert!(ber < 0.35, "ber {ber}");

    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,stage,total,d,type1,type2,type3\n"));
    assert!(trace.lines().count() > 1);

    // the saved config reproduces the stego byte for byte
    ok(&keystego(&["embed", "--cover", "covers/0000.png", "--out", "again.png", "--passphrase", "pw", "--config", "run.toml"], &dir));
    assert_eq!(fs::read(dir.join("s.png")).unwrap(), fs::read(dir.join("again.png")).unwrap());
}

#[test]
fn file_payloads_are_framed() {
    let (_d, dir) = workspace(1);
    fs::write(dir.join("secret.txt"), b"attack at dawn").unwrap();
    ok(&keystego(
        &["embed", "--cover", "covers/0000.png", "--out", "s.png", "--passphrase", "pw", "--payload", "file", "--secret", "secret.txt", "--message-out", "msg.bin"],
        &dir,
    ));
    let bits = unpack_bits(&fs::read(dir.join("msg.bin")).unwrap());
    let len = u32::from_be_bytes(keystego::message::pack_bits(&bits[..32]).try_into().unwrap());
    assert_eq!(len, 14);
    assert_eq!(keystego::message::pack_bits(&bits[32..32 + 14 * 8]), b"attack at dawn");

    let too_big = vec![7u8; 24 * 24 / 8];
    fs::write(dir.join("big.bin"), too_big).unwrap();
    let out = keystego(
        &["embed", "--cover", "covers/0000.png", "--out", "s.png", "--passphrase", "pw", "--payload", "file", "--secret", "big.bin"],
        &dir,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn key_from_environment() {
    let (_d, dir) = workspace(1);
    let run = |out: &str, env: Option<(&str, &str)>, flags: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_keystego"));
        cmd.current_dir(&dir)
            .env_remove("KEYSTEGO_KEY")
            .env_remove("KEYSTEGO_PASSPHRASE")
            .args(["embed", "--cover", "covers/0000.png", "--out", out])
            .args(QUICK)
            .args(flags);
        if let Some((k, v)) = env {
            cmd.env(k, v);
        }
        ok(&cmd.output().unwrap());
        fs::read(dir.join(out)).unwrap()
    };
    let hex = keystego::keystream::StegoKey::from_passphrase("pw").to_hex();
    let a = run("a.png", None, &["--passphrase", "pw"]);
    let b = run("b.png", Some(("KEYSTEGO_PASSPHRASE", "pw")), &[]);
    let c = run("c.png", Some(("KEYSTEGO_KEY", &hex)), &[]);
    let d = run("d.png", None, &["--key", &hex]);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a, d);
}

#[test]
fn exported_weights_match_the_generated_decoder() {
    let (_d, dir) = workspace(1);
    ok(&keystego(&["export-decoder", "--out", "dec.kfnn", "--decoder-seed", "alt"], &dir));
    let mut base = vec!["embed", "--cover", "covers/0000.png", "--passphrase", "pw"];
    base.extend(QUICK);
    let mut a = base.clone();
    a.extend(["--out", "a.png", "--decoder-seed", "alt"]);
    let mut b = base.clone();
    b.extend(["--out", "b.png", "--weights", "dec.kfnn"]);
    ok(&keystego(&a, &dir));
    ok(&keystego(&b, &dir));
    assert_eq!(fs::read(dir.join("a.png")).unwrap(), fs::read(dir.join("b.png")).unwrap());
    // depth disagreement between weights and --bpp
    b.extend(["--bpp", "2"]);
    assert_eq!(keystego(&b, &dir).status.code(), Some(1));
}

#[test]
fn cost_map_outputs() {
    let (_d, dir) = workspace(1);
    ok(&keystego(&["cost-map", "--cover", "covers/0000.png", "--out", "cost.png", "--raw", "cost.f64"], &dir));
    let raw = fs::read(dir.join("cost.f64")).unwrap();
    assert_eq!(raw.len(), 8 * 3 * 24 * 24);
    let values: Vec<f64> = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let expected = hill_cost(&load_png(dir.join("covers/0000.png")).unwrap(), &CostParams::default()).unwrap();
    assert_eq!(values, expected.data());
    let png = png::Decoder::new(fs::File::open(dir.join("cost.png")).unwrap());
    let info = png.read_info().unwrap().info().clone();
    assert_eq!((info.width, info.height, info.color_type), (24, 24, png::ColorType::Grayscale));
}

#[test]
fn steganalyze_separates_lsb_replacement() {
    let (_d, dir) = workspace(12);
    let stdout = ok(&keystego(
        &["steganalyze", "--covers", "covers", "--stegos", "lsb", "--out", "roc.csv", "--scores", "scores.csv"],
        &dir,
    ));
    let auc: f64 = stdout.trim().strip_prefix("AUC ").unwrap().parse().unwrap();
    assert!(auc > 0.9, "auc {auc}");
    let roc = fs::read_to_string(dir.join("roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr\n0,0\n"));
    assert!(roc.trim_end().ends_with("1,1"));
    assert!(fs::read_to_string(dir.join("roc.dat")).unwrap().starts_with("# fpr tpr"));
    assert_eq!(fs::read_to_string(dir.join("scores.csv")).unwrap().lines().count(), 25);
}

#[test]
fn evaluate_is_independent_of_worker_count() {
    let (_d, dir) = workspace(3);
    let mut one = vec!["evaluate", "--covers", "covers", "--passphrase", "pw", "--out", "one.csv", "--jobs", "1", "--stego-dir", "stegos"];
    one.extend(QUICK);
    let mut three = vec!["evaluate", "--covers", "covers", "--passphrase", "pw", "--out", "three.csv", "--jobs", "3"];
    three.extend(QUICK);
    ok(&keystego(&one, &dir));
    ok(&keystego(&three, &dir));
    let csv = fs::read_to_string(dir.join("one.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(dir.join("three.csv")).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,bpp,ber_correct,ber_nokey,ber_wrong,psnr,ssim");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0000.png,1,"));
    assert_eq!(fs::read_dir(dir.join("stegos")).unwrap().count(), 3);
}

#[test]
fn preset_restores_published_defaults() {
    let (_d, dir) = workspace(1);
    fs::write(dir.join("odd.toml"), "lambda_d = 1.0\nepochs = 2\nbpp = 1\n").unwrap();
    let out = keystego(
        &["embed", "--cover", "covers/0000.png", "--out", "s.png", "--passphrase", "pw", "--config", "odd.toml", "--preset", "paper", "--set", "epochs=2", "--save-config", "used.toml"],
        &dir,
    );
    ok(&out);
    let used = fs::read_to_string(dir.join("used.toml")).unwrap();
    assert!(used.contains("lambda_d = 40.0"));
    assert!(used.contains("early_exit = false"));
    assert!(used.contains("epochs = 2"));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&keystego(&["selftest"], dir.path()));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
