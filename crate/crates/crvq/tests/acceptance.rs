//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use crvq::format::{decode_layer_bytes, encode_layer};
use crvq::synth::heavy_tailed_layer;
use crvq_core::bitbudget::{avg_bits_crvq_with, avg_bits_vq, sweep_vq, RatioRounding, StorageWidths};
use crvq_core::importance::apply_permutation;
use crvq_core::vq::{encode, partition, ProxyProblem};
use crvq_core::{
    quantize_layer, CalibrationSet, Codebook, Direction, ImportanceMetric, QuantConfig, QuantReport,
    QuantizedLayer, WeightMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn gaussian_calib(n: usize, samples: usize, seed: u64) -> CalibrationSet {
    CalibrationSet::from_activations(WeightMatrix::gaussian(n, samples, seed ^ 0xCA11_B000))
}

fn quantize(w: &WeightMatrix, x: &CalibrationSet, cfg: &QuantConfig) -> (QuantizedLayer, QuantReport) {
    quantize_layer(w, x, cfg).expect("valid layer")
}

// 1. Bit-formula anchors.
fn bit_anchors() -> Verdict {
    let one = avg_bits_vq(4096, 4096, 1, 8, 8).avg_bits;
    let two = avg_bits_vq(4096, 4096, 2, 16, 8).avg_bits;
    // m·e/d + 2^e·m·d·16 / (M·N)
    let hand = 2.0 * 8.0 / 16.0 + (256.0 * 2.0 * 16.0 * 16.0) / (4096.0 * 4096.0);
    let rows = sweep_vq(4096, 4096, 1, &[8], &[12, 16]);
    let (e12, e16) = (rows[0].avg_bits, rows[1].avg_bits);
    let anchors = one == 1.001953125 && two == hand;
    let rise = e16 > 2.0 * e12;
    verdict(
        anchors && rise,
        format!(
            "vq(4096,4096,1,8,8)={one} (want 1.001953125); vq(4096,4096,2,16,8)={two} (hand {hand}); \
             sweep d=8 m=1: e=12 -> {e12}, e=16 -> {e16}, need e16 > 2*e12 = {}",
            2.0 * e12
        ),
    )
}

// 2. Encoding vs exhaustive search, ties included.
fn encoding_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 8;
    let mut entries: Vec<f32> = (0..256 * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    // duplicated entries make exact ties
    for (dup, src) in [(200usize, 10usize), (255, 0), (17, 3)] {
        entries.copy_within(src * dim..(src + 1) * dim, dup * dim);
    }
    let cb = Codebook::new(dim, 8, entries.clone()).unwrap();
    let mut data: Vec<f32> = (0..1000 * dim).map(|_| rng.random_range(-1.2f32..1.2)).collect();
    // some vectors sit exactly on (duplicated) entries, some halfway between two
    for i in 0..50 {
        let k = [10usize, 0, 3, 200, 255][i % 5];
        data[i * dim..(i + 1) * dim].copy_from_slice(&entries[k * dim..(k + 1) * dim]);
    }
    for i in 50..60 {
        for j in 0..dim {
            data[i * dim + j] = if j == 0 { 0.5 } else { 0.0 };
        }
    }
    let mut tied_entries = entries.clone();
    tied_entries[..dim].fill(0.0);
    tied_entries[dim..2 * dim].fill(0.0);
    tied_entries[dim] = 1.0;
    let tied = Codebook::new(dim, 8, tied_entries).unwrap();

    let w = WeightMatrix::new(1000, dim, data.clone()).unwrap();
    let set = partition(&w, dim).unwrap();
    let mut mismatches = 0;
    let mut ties = 0;
    for book in [&cb, &tied] {
        let (codes, _) = encode(&set, book).unwrap();
        for (i, &q) in codes.iter().enumerate() {
            let v = &data[i * dim..(i + 1) * dim];
            let dists: Vec<f64> = (0..256)
                .map(|k| {
                    let e = &book.entries()[k * dim..(k + 1) * dim];
                    v.iter().zip(e).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum()
                })
                .collect();
            let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = dists.iter().position(|&d| d == best).unwrap();
            ties += (dists.iter().filter(|&&d| d == best).count() > 1) as usize;
            mismatches += (q as usize != first) as usize;
        }
    }
    verdict(mismatches == 0, format!("2000 encodings (2 codebooks), {ties} exact ties, {mismatches} mismatches"))
}

// 3. Stage trace is non-increasing.
fn monotone_refinement() -> Verdict {
    let cfg = QuantConfig { vector_dim: 8, code_bits: 6, num_codebooks: 4, important_ratio: 0.1, ..QuantConfig::default() };
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        let w = WeightMatrix::gaussian(128, 128, seed);
        let x = gaussian_calib(128, 128, seed);
        let (_, report) = quantize(&w, &x, &QuantConfig { seed, ..cfg.clone() });
        let stages: Vec<String> = report.trace.iter().map(|(s, _)| s.to_string()).collect();
        for pair in report.trace.windows(2) {
            let (a, b) = (pair[0].1, pair[1].1);
            let rise = (b - a) / a.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rise);
            if rise > 1e-7 {
                failures.push(format!("seed {seed}: {} -> {} rose by {rise:e}", pair[0].0, pair[1].0));
            }
        }
        if seed == 0 {
            println!("    seed 0 stages: {}", stages.join(" > "));
        }
    }
    verdict(
        failures.is_empty(),
        format!("10 layers 128x128 d=8 e=6 m=4; largest relative rise {worst:e} (slack 1e-7) {failures:?}"),
    )
}

fn heavy_tailed_runs(metric_b: Option<ImportanceMetric>) -> Vec<(f64, f64)> {
    let base = QuantConfig {
        vector_dim: 8,
        code_bits: 6,
        num_codebooks: 4,
        important_ratio: 0.02,
        metric: ImportanceMetric::WeightActivation,
        ..QuantConfig::default()
    };
    (0..10u64)
        .map(|seed| {
            let w = heavy_tailed_layer(256, 512, 1.0, 100 + seed);
            let x = gaussian_calib(512, 512, 100 + seed);
            let a = QuantConfig { seed, ..base.clone() };
            let b = match metric_b {
                Some(metric) => QuantConfig { metric, ..a.clone() },
                None => QuantConfig { num_codebooks: 1, ..a.clone() },
            };
            (quantize(&w, &x, &a).1.proxy_loss_final, quantize(&w, &x, &b).1.proxy_loss_final)
        })
        .collect()
}

// 4. Extended codebooks beat the basic one alone.
fn relaxation_dominance() -> Verdict {
    let runs = heavy_tailed_runs(None);
    let wins = runs.iter().filter(|(crvq, vq)| crvq < vq).count();
    let mean: f64 = runs.iter().map(|(crvq, vq)| (vq - crvq) / vq).sum::<f64>() / runs.len() as f64;
    verdict(
        wins >= 9 && mean >= 0.10,
        format!("256x512 heavy-tailed d=8 e=6, m=4 lambda=0.02 wa vs m=1: {wins}/10 wins (need 9), mean improvement {:.2}% (need 10%)", 100.0 * mean),
    )
}

// 5. W-A ranking beats a random ranking.
fn reorder_trend() -> Verdict {
    let runs = heavy_tailed_runs(Some(ImportanceMetric::Random));
    let wins = runs.iter().filter(|(wa, random)| wa < random).count();
    let mean: f64 = runs.iter().map(|(wa, r)| (r - wa) / r).sum::<f64>() / runs.len() as f64;
    verdict(
        wins >= 8,
        format!("256x512 heavy-tailed d=8 e=6, m=4 lambda=0.02: wa beats random on {wins}/10 (need 8), mean gap {:.2}%", 100.0 * mean),
    )
}

// 6. File round trip and size.
fn round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut inexact = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20u64 {
        let d = [4usize, 8][rng.random_range(0..2)];
        let cfg = QuantConfig {
            vector_dim: d,
            code_bits: rng.random_range(3..=6),
            num_codebooks: rng.random_range(1..=4),
            important_ratio: [0.0, 0.02, 0.05, 0.1][rng.random_range(0..4)],
            metric: [ImportanceMetric::WeightActivation, ImportanceMetric::WeightOnly, ImportanceMetric::Random]
                [rng.random_range(0..3)],
            max_outer_iters: 1,
            seed: i,
            ..QuantConfig::default()
        };
        let (rows, cols) = (256, 256);
        let w = heavy_tailed_layer(rows, cols, 1.0, 600 + i);
        let x = CalibrationSet::synthetic(cols, 4 * d, i);
        let (layer, _) = quantize(&w, &x, &cfg);
        let bytes = encode_layer(&layer);
        let back = decode_layer_bytes(&bytes).expect("own output parses");
        let same = back.decode().data().iter().zip(layer.decode().data()).all(|(a, b)| a.to_bits() == b.to_bits());
        inexact += (!same) as usize;
        let measured = bytes.len() as f64 * 8.0 / (rows * cols) as f64;
        let predicted = avg_bits_crvq_with(
            rows,
            cols,
            cfg.num_codebooks,
            d,
            cfg.code_bits,
            cfg.important_ratio,
            StorageWidths::ON_DISK,
            RatioRounding::WholeVectors,
        )
        .avg_bits;
        worst = worst.max((measured - predicted) / predicted);
    }
    verdict(
        inexact == 0 && worst <= 0.01 && worst >= 0.0,
        format!("20 layers: {inexact} decode mismatches; measured bits exceed prediction by at most {:.4}% (limit +1%)", 100.0 * worst),
    )
}

// 7. Codebook gradient vs central differences.
fn gradient_check() -> Verdict {
    let w = WeightMatrix::gaussian(64, 64, 7);
    let x = gaussian_calib(64, 64, 7);
    let cfg = QuantConfig { code_bits: 4, num_codebooks: 3, important_ratio: 0.25, max_outer_iters: 1, ..QuantConfig::default() };
    let (layer, _) = quantize(&w, &x, &cfg);
    let perm = layer.permutation();
    let wp = apply_permutation(&w, perm, Direction::Forward).unwrap();
    let xp = CalibrationSet::from_gram(64, perm.apply_symmetric(x.gram(), Direction::Forward)).unwrap();
    let problem = ProxyProblem::new(&wp, &xp).unwrap();
    let tables: Vec<Vec<f64>> = layer.codebooks().iter().map(Codebook::to_f64).collect();
    let codes = layer.codes();
    let (_, grads) = problem.loss_and_gradient(&tables, codes, 8);

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-3;
    let mut worst = 0.0f64;
    let mut checked = Vec::new();
    while checked.len() < 5 {
        let t = rng.random_range(0..tables.len());
        let stream = codes.stream(t);
        let k = stream[rng.random_range(0..stream.len())] as usize;
        let j = rng.random_range(0..8);
        let idx = k * 8 + j;
        if checked.contains(&(t, idx)) {
            continue;
        }
        let mut plus = tables.clone();
        plus[t][idx] += h;
        let mut minus = tables.clone();
        minus[t][idx] -= h;
        let fd = (problem.loss(&plus, codes, 8) - problem.loss(&minus, codes, 8)) / (2.0 * h);
        let g = grads[t][idx];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        checked.push((t, idx));
    }
    verdict(worst <= 1e-3, format!("5 entries {checked:?} of a 64x64 layer, worst relative error {worst:e} (limit 1e-3)"))
}

// 8. Lossless capacity.
fn lossless_capacity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let patterns: Vec<Vec<f32>> = (0..64).map(|_| (0..8).map(|_| rng.random_range(-2.0f32..2.0)).collect()).collect();
    let picks: Vec<usize> = (0..64 * 16).map(|_| rng.random_range(0..64)).collect();
    let w = WeightMatrix::from_fn(64, 128, |r, c| patterns[picks[r * 16 + c / 8]][c % 8]);
    let x = gaussian_calib(128, 64, 8);
    let cfg = QuantConfig { code_bits: 6, num_codebooks: 1, ..QuantConfig::default() };
    let (layer, report) = quantize(&w, &x, &cfg);
    let direct = w.frobenius_distance(&layer.decode()).unwrap();
    verdict(
        report.frobenius_error == 0.0 && direct == 0.0,
        format!("64 distinct 8-vectors, e=6, m=1: Frobenius error {} (decoded {direct}), {} refinement rounds", report.frobenius_error, report.iterations_used),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_crvq")).args(args).env_remove("CRVQ_SEED").output().unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

// 9. CLI determinism.
fn cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (input, out1, out4) = (root.join("in"), root.join("q1"), root.join("q4"));
    let mut differing = Vec::new();
    let mut failed = Vec::new();

    let mut twice = |name: &str, args: Vec<String>, dir: Option<&Path>| {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (c1, o1) = cli(&args);
        let f1 = dir.map(snapshot);
        let (c2, o2) = cli(&args);
        let f2 = dir.map(snapshot);
        if c1 != 0 || c2 != 0 {
            failed.push(format!("{name} exited {c1}/{c2}"));
        }
        if o1 != o2 || f1 != f2 {
            differing.push(name.to_string());
        }
    };

    twice("synth", vec!["synth".into(), s(&input), "--count".into(), "3".into(), "--rows".into(), "64".into(), "--cols".into(), "128".into(), "--seed".into(), "9".into()], Some(&input));
    let quant = |out: &Path, jobs: &str| {
        vec!["quantize".into(), s(&input), s(out), "--e".into(), "6".into(), "--codebooks".into(), "4".into(), "--lambda".into(), "0.1".into(), "--seed".into(), "9".into(), "--jobs".into(), jobs.into()]
    };
    twice("quantize --jobs 1", quant(&out1, "1"), Some(&out1));
    twice("quantize --jobs 4", quant(&out4, "4"), Some(&out4));
    let art = out1.join("layer_000.crvqp");
    twice("decode", vec!["decode".into(), s(&art), s(&root.join("dec.crvqt")), "--reference".into(), s(&input.join("layer_000.crvqt"))], None);
    twice("inspect", vec!["inspect".into(), s(&art)], None);
    twice("bits", vec!["bits".into(), "--M".into(), "4096".into(), "--N".into(), "4096".into(), "--codebooks".into(), "4".into(), "--lambda".into(), "0.02".into()], None);
    twice("bits --sweep", vec!["bits".into(), "--sweep".into(), "--d".into(), "4,8,16".into(), "--e".into(), "6..16".into()], None);
    let ablate = |jobs: &str| {
        vec!["ablate".into(), s(&input), "--e".into(), "5".into(), "--lambda".into(), "0,0.1".into(), "--codebooks".into(), "1,4".into(), "--metric".into(), "wa,random".into(), "--seed".into(), "9".into(), "--jobs".into(), jobs.into()]
    };
    twice("ablate --jobs 1", ablate("1"), None);

    let jobs_equal = snapshot(&out1) == snapshot(&out4);
    let ab1 = cli(&ablate("1").iter().map(String::as_str).collect::<Vec<_>>()).1;
    let ab4 = cli(&ablate("4").iter().map(String::as_str).collect::<Vec<_>>()).1;
    if !jobs_equal {
        differing.push("quantize jobs 1 vs 4".into());
    }
    if ab1 != ab4 {
        differing.push("ablate jobs 1 vs 4".into());
    }
    verdict(
        differing.is_empty() && failed.is_empty(),
        format!("synth, quantize, decode, inspect, bits, ablate each run twice, plus --jobs 1 vs 4; differing: {differing:?}; failed: {failed:?}"),
    )
}

fn main() {
    let criteria: [(&str, Option<Duration>, fn() -> Verdict); 9] = [
        ("bit-formula anchors", Some(Duration::from_secs(1)), bit_anchors),
        ("encoding oracle", Some(Duration::from_secs(5)), encoding_oracle),
        ("monotone refinement", Some(Duration::from_secs(120)), monotone_refinement),
        ("relaxation dominance", Some(Duration::from_secs(300)), relaxation_dominance),
        ("reorder-strategy trend", Some(Duration::from_secs(300)), reorder_trend),
        ("round-trip exactness", Some(Duration::from_secs(60)), round_trip),
        ("gradient correctness", Some(Duration::from_secs(10)), gradient_check),
        ("lossless-capacity identity", Some(Duration::from_secs(1)), lossless_capacity),
        ("CLI determinism", None, cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = v.pass && in_time;
        failed += (!pass) as usize;
        println!(
            "{} {}. {name}: {} [{:.2}s, {}{}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            took.as_secs_f64(),
            limit.map_or("no time limit".to_string(), |l| format!("limit {}s", l.as_secs())),
            if in_time { "" } else { ", over time" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
