use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crvq::batch::Summary;
use crvq::save_matrix;
use crvq::synth::heavy_tailed_layer;

fn crvq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crvq")).args(args).env_remove("CRVQ_SEED").output().unwrap()
}

fn crvq_env(args: &[&str], seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crvq")).args(args).env("CRVQ_SEED", seed).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn layers(dir: &Path, n: usize, cols: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        save_matrix(&heavy_tailed_layer(16, cols, 1.0, i as u64), dir.join(format!("w{i}.crvqt"))).unwrap();
    }
}

fn summary(dir: &Path) -> Summary {
    serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn quantize_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
    layers(&input, 3, 64);
    let o = crvq(&["quantize", p(&input), p(&out), "--d", "8", "--e", "8", "--codebooks", "4", "--lambda", "0.02", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for i in 0..3 {
        assert!(out.join(format!("w{i}.crvqp")).exists());
    }
    let s = summary(&out);
    assert_eq!(s.layers.len(), 3);
    assert!(s.layers.iter().all(|l| l.seconds.is_none()));
}

#[test]
fn indivisible_width_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    fs::create_dir_all(&input).unwrap();
    save_matrix(&crvq_core::WeightMatrix::zeros(2, 4096), input.join("big.crvqt")).unwrap();
    let o = crvq(&["quantize", p(&input), p(&tmp.path().join("out")), "--d", "7"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("N not divisible by d"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    layers(&input, 2, 32);
    fs::write(input.join("w9.crvqt"), b"garbage").unwrap();
    let o = crvq(&["quantize", p(&input), p(&tmp.path().join("out")), "--e", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&tmp.path().join("out")).errors[0].file, "w9.crvqt");

    let o = crvq(&["quantize", p(&tmp.path().join("nope")), p(&tmp.path().join("o2"))]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(crvq(&["quantize", p(&input), p(&tmp.path().join("o3")), "--metric", "best"]).status.code(), Some(1));
    assert_eq!(crvq(&["quantize", p(&input), p(&tmp.path().join("o3")), "--e", "17"]).status.code(), Some(1));
    assert_eq!(crvq(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(crvq(&["--help"]).status.code(), Some(0));
    assert_eq!(crvq(&["decode", p(&tmp.path().join("none.crvqp")), p(&tmp.path().join("x.crvqt"))]).status.code(), Some(3));
    assert_eq!(crvq(&["inspect", p(&input.join("w0.crvqt"))]).status.code(), Some(1));
}

#[test]
fn config_file_and_seed_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    layers(&input, 1, 32);
    let cfg = tmp.path().join("q.cfg");
    fs::write(&cfg, "# small\ne = 4\ncodebooks = 2\nlambda = 0.25\nseed = 5\n").unwrap();
    let a = tmp.path().join("a");
    assert_eq!(crvq(&["quantize", p(&input), p(&a), "--config", p(&cfg)]).status.code(), Some(0));
    let b = tmp.path().join("b");
    let flags = ["quantize", p(&input), p(&b), "--e", "4", "--codebooks", "2", "--lambda", "0.25"];
    assert_eq!(crvq_env(&flags, "5").status.code(), Some(0));
    assert_eq!(fs::read(a.join("w0.crvqp")).unwrap(), fs::read(b.join("w0.crvqp")).unwrap());

    // flags beat the file
    let c = tmp.path().join("c");
    assert_eq!(crvq(&["quantize", p(&input), p(&c), "--config", p(&cfg), "--e", "3"]).status.code(), Some(0));
    let layer = crvq::load_quantized(c.join("w0.crvqp")).unwrap();
    assert_eq!((layer.params().code_bits, layer.params().num_codebooks, layer.params().seed), (3, 2, 5));

    fs::write(&cfg, "e = 4\ncolour = blue\n").unwrap();
    let o = crvq(&["quantize", p(&input), p(&tmp.path().join("d")), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key"));
}

#[test]
fn decode_and_inspect_agree_with_quantize() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
    layers(&input, 1, 128);
    let o = crvq(&["quantize", p(&input), p(&out), "--e", "6", "--codebooks", "4", "--lambda", "0.125", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let art = out.join("w0.crvqp");

    let o = crvq(&["decode", p(&art), p(&tmp.path().join("dec.crvqt")), "--reference", p(&input.join("w0.crvqt"))]);
    assert_eq!(o.status.code(), Some(0));
    let printed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(printed["frobenius_error"].as_f64().unwrap(), summary(&out).layers[0].frobenius_error);
    assert!(crvq::load_matrix(tmp.path().join("dec.crvqt")).is_ok());

    let o = crvq(&["inspect", p(&art)]);
    assert_eq!(o.status.code(), Some(0));
    let info: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let books = info["codebooks"].as_array().unwrap();
    assert_eq!(books.len(), 4);
    assert_eq!(books[0]["kind"], "basic");
    assert_eq!(info["important_cols"], 16);

    let o = crvq(&["bits", "--M", "16", "--N", "128", "--codebooks", "4", "--d", "8", "--e", "6", "--lambda", "0.125", "--storage", "disk"]);
    let predicted: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let predicted = predicted["avg_bits"].as_f64().unwrap();
    let measured = info["measured_bits_per_weight"].as_f64().unwrap();
    // a 16x128 layer: the 32-byte header alone adds 0.125 bits per weight
    assert!(measured >= predicted && measured <= predicted + 256.0 / 2048.0, "{measured} vs {predicted}");
}

#[test]
fn bits_command() {
    let o = crvq(&["bits", "--M", "4096", "--N", "4096", "--codebooks", "1", "--d", "8", "--e", "8"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["avg_bits"].as_f64().unwrap(), 1.001953125);

    let o = crvq(&["bits", "--sweep", "--d", "4,8,16", "--e", "6..16"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 3 * 11);
    assert!(text.starts_with("m,d,e,lambda,avg_bits"));

    let o = crvq(&["bits", "--sweep", "--codebooks", "4", "--d", "8", "--e", "8", "--lambda", "0,0.02,0.1"]);
    assert_eq!(stdout(&o).lines().count(), 4);

    assert_eq!(crvq(&["bits", "--lambda", "1.5"]).status.code(), Some(1));
    assert_eq!(crvq(&["bits", "--d", "4,8"]).status.code(), Some(1));
    assert_eq!(crvq(&["bits", "--e", "17"]).status.code(), Some(1));
}

#[test]
fn ablate_and_synth() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    let o = crvq(&["synth", p(&input), "--count", "2", "--rows", "16", "--cols", "64", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let csv_path = tmp.path().join("grid.csv");
    let args = ["ablate", p(&input), "--e", "4", "--lambda", "0,0.125", "--codebooks", "1,3", "--metric", "wa,random", "--seed", "2"];
    let o = crvq(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 2 * 8);
    let mut with_out = args.to_vec();
    with_out.extend(["--out", p(&csv_path), "--jobs", "3"]);
    assert_eq!(crvq(&with_out).status.code(), Some(0));
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), text);
}
