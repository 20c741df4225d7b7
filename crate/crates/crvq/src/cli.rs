//! The `crvq` command line.
//!
//! Exit codes: 0 success, 1 invalid arguments or input, 2 some layers failed,
//! 3 I/O error.

use std::ffi::OsString;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crvq_core::bitbudget::{
    avg_bits_crvq_with, avg_bits_vq_with, BitReport, RatioRounding, StorageWidths,
};
use crvq_core::{ImportanceForm, ImportanceMetric, QuantizedLayer, ReorderScope};

use crate::batch::{self, AblationGrid, BatchError, BatchOptions};
use crate::format::{self, FormatError};
use crate::settings::{parse_metric, CalibSource, Settings, SettingsError, SEED_ENV};
use crate::synth;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INVALID: i32 = 1;
    pub const PARTIAL: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "crvq", version, about = "Channel-relaxed vector quantization of weight matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize every .crvqt layer in a directory.
    Quantize(QuantizeArgs),
    /// Reconstruct a dense matrix from a .crvqp file.
    Decode(DecodeArgs),
    /// Print header and codebook statistics of a .crvqp file as JSON.
    Inspect(InspectArgs),
    /// Predict bits per weight for one configuration, or a CSV sweep.
    Bits(BitsArgs),
    /// Run a (lambda, m, metric) grid over a layer directory and print CSV.
    Ablate(AblateArgs),
    /// Write synthetic layers with heavy-tailed column scales.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormArg {
    Direct,
    Inverse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReorderArg {
    All,
    ImportantFirst,
}

/// Flags shared by `quantize` and `ablate`.
#[derive(Debug, Args)]
pub struct CommonFlags {
    /// Vector dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Bits per code.
    #[arg(long)]
    pub e: Option<u32>,
    /// Seed; falls back to $CRVQ_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop once the proxy loss drops below this.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Maximum fine-tune and beam rounds.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Adam steps per round.
    #[arg(long)]
    pub finetune_steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Importance formula for the wa metric.
    #[arg(long, value_enum)]
    pub importance_form: Option<FormArg>,
    /// Column order: sort every column by importance, or move only the
    /// important ones to the front and keep the rest in original order.
    #[arg(long, value_enum)]
    pub reorder: Option<ReorderArg>,
    /// `synthetic`, an N x O activation file, or a directory of <stem>.crvqt files.
    #[arg(long)]
    pub calib: Option<String>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl CommonFlags {
    fn settings(&self) -> Settings {
        Settings {
            d: self.d,
            e: self.e,
            seed: self.seed,
            epsilon: self.epsilon,
            beam_width: self.beam_width,
            max_iters: self.max_iters,
            finetune_steps: self.finetune_steps,
            learning_rate: self.learning_rate,
            importance_form: self.importance_form.map(|f| match f {
                FormArg::Direct => ImportanceForm::Direct,
                FormArg::Inverse => ImportanceForm::InverseHessian,
            }),
            reorder: self.reorder.map(|r| match r {
                ReorderArg::All => ReorderScope::All,
                ReorderArg::ImportantFirst => ReorderScope::ImportantFirst,
            }),
            calib: self.calib.as_deref().map(CalibSource::parse),
            jobs: self.jobs,
            ..Settings::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Total codebook count m (1 basic + m-1 extended).
    #[arg(long)]
    pub codebooks: Option<usize>,
    /// Fraction of input channels given extended codebooks.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// wa, wonly or random.
    #[arg(long)]
    pub metric: Option<String>,
    /// Record per-layer wall time in the summary.
    #[arg(long)]
    pub timings: bool,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Original matrix; prints the Frobenius error against it.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub input: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StorageArg {
    /// 16-bit codebook values and permutation indices.
    Compact,
    /// 32-bit values and indices, as written by `quantize`.
    Disk,
}

#[derive(Debug, Args)]
pub struct BitsArgs {
    #[arg(long = "M", default_value_t = 4096)]
    pub rows: usize,
    #[arg(long = "N", default_value_t = 4096)]
    pub cols: usize,
    #[arg(long, default_value_t = 1)]
    pub codebooks: usize,
    /// Vector dimension(s): `8`, `4,8,16` or `4..16`.
    #[arg(long, default_value = "8")]
    pub d: String,
    /// Code width(s), same syntax as --d.
    #[arg(long, default_value = "8")]
    pub e: String,
    /// Important-channel ratio(s); omit for plain VQ.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Emit CSV over all listed values.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_enum, default_value = "compact")]
    pub storage: StorageArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    pub input_dir: PathBuf,
    /// Ratios, e.g. `0,0.02,0.1`.
    #[arg(long, default_value = "0,0.02,0.1")]
    pub lambda: String,
    /// Codebook counts, e.g. `1,2,4`.
    #[arg(long, default_value = "1,2,4")]
    pub codebooks: String,
    /// Metrics, e.g. `wa,random`.
    #[arg(long, default_value = "wa")]
    pub metric: String,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub rows: usize,
    #[arg(long, default_value_t = 128)]
    pub cols: usize,
    /// Log-normal shape of the column scales.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// A failed command: message and exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: exit::INVALID, message: message.into() }
    }

    fn io(message: impl Into<String>) -> Self {
        Self { code: exit::IO, message: message.into() }
    }
}

impl From<SettingsError> for Failure {
    fn from(e: SettingsError) -> Self {
        match e {
            SettingsError::Io { .. } => Self::io(e.to_string()),
            _ => Self::invalid(e.to_string()),
        }
    }
}

impl From<BatchError> for Failure {
    fn from(e: BatchError) -> Self {
        match &e {
            BatchError::Io { .. } => Self::io(e.to_string()),
            BatchError::Calibration { source: FormatError::Io(_), .. } => Self::io(e.to_string()),
            _ => Self::invalid(e.to_string()),
        }
    }
}

fn format_failure(path: &Path, e: FormatError) -> Failure {
    let message = format!("{}: {e}", path.display());
    match e {
        FormatError::Io(_) => Failure::io(message),
        _ => Failure::invalid(message),
    }
}

/// Parses a list such as `4,8,16`, a closed range `6..16`, or a mix `2,6..8`.
pub fn parse_list<T>(s: &str) -> Result<Vec<T>, String>
where
    T: std::str::FromStr + Copy + PartialOrd + TryFrom<u64>,
    u64: TryFrom<T>,
{
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(|_| format!("bad range {part:?}"))?;
            let hi: u64 = hi.trim().parse().map_err(|_| format!("bad range {part:?}"))?;
            if lo > hi {
                return Err(format!("empty range {part:?}"));
            }
            for v in lo..=hi {
                out.push(T::try_from(v).map_err(|_| format!("{v} out of range"))?);
            }
        } else {
            out.push(part.parse().map_err(|_| format!("bad value {part:?}"))?);
        }
    }
    Ok(out)
}

fn parse_ratios(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad lambda {p:?}")))
        .collect()
}

fn check_ratio(r: f64) -> Result<(), Failure> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Failure::invalid(format!("lambda must be in [0, 1], got {r}")))
    }
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn batch_options(flags: &CommonFlags, extra: Settings) -> Result<BatchOptions, Failure> {
    let file = match &flags.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let settings = file.overridden_by(flags.settings()).overridden_by(extra);
    let config = settings.to_config(env_seed().as_deref())?;
    config.validate().map_err(|e| Failure::invalid(e.to_string()))?;
    let jobs = settings.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(Failure::invalid("jobs must be positive"));
    }
    Ok(BatchOptions { config, calib: settings.calib.unwrap_or_default(), jobs, timings: false })
}

/// Reads the dimensions of every readable input up front so that a bad `d`
/// is reported once as a usage error.
fn precheck_columns(dir: &Path, d: usize) -> Result<(), Failure> {
    let inputs = batch::list_inputs(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    for path in inputs {
        let mut head = [0u8; format::MATRIX_HEADER_LEN];
        let Ok(mut f) = std::fs::File::open(&path) else { continue };
        if f.read_exact(&mut head).is_err() {
            continue;
        }
        if let Ok((_, cols)) = format::peek_matrix_dims(&head) {
            if cols % d != 0 {
                return Err(Failure::invalid(format!(
                    "N not divisible by d: N={cols}, d={d} ({})",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn cmd_quantize(args: &QuantizeArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let metric = match &args.metric {
        Some(m) => Some(parse_metric(m).ok_or_else(|| Failure::invalid(format!("unknown metric {m:?}")))?),
        None => None,
    };
    let extra = Settings { codebooks: args.codebooks, lambda: args.lambda, metric, ..Settings::default() };
    let mut opts = batch_options(&args.common, extra)?;
    opts.timings = args.timings;
    precheck_columns(&args.input_dir, opts.config.vector_dim)?;
    let summary = batch::quantize_dir(&args.input_dir, &args.output_dir, &opts)?;
    for e in &summary.errors {
        eprintln!("{}: {}", e.file, e.error);
    }
    writeln!(
        out,
        "quantized {} layer(s), {} failed; summary in {}",
        summary.layers.len(),
        summary.errors.len(),
        args.output_dir.join(batch::SUMMARY_FILE).display()
    )
    .map_err(|e| Failure::io(e.to_string()))?;
    Ok(if summary.errors.is_empty() { exit::OK } else { exit::PARTIAL })
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    writeln!(out, "{text}").map_err(|e| Failure::io(e.to_string()))
}

fn cmd_decode(args: &DecodeArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let layer = format::load_quantized(&args.input).map_err(|e| format_failure(&args.input, e))?;
    let decoded = layer.decode();
    format::save_matrix(&decoded, &args.output).map_err(|e| format_failure(&args.output, e))?;
    let mut report = json!({
        "output": args.output.display().to_string(),
        "M": decoded.rows(),
        "N": decoded.cols(),
    });
    if let Some(path) = &args.reference {
        let original = format::load_matrix(path).map_err(|e| format_failure(path, e))?;
        let err = original.frobenius_distance(&decoded).map_err(|e| Failure::invalid(e.to_string()))?;
        report["frobenius_error"] = json!(err);
    }
    print_json(out, &report)?;
    Ok(exit::OK)
}

/// Shannon entropy in bits of a code histogram.
pub fn histogram_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Serialize)]
struct CodebookStats {
    index: usize,
    kind: &'static str,
    codes: usize,
    used_entries: usize,
    code_entropy_bits: f64,
    mean_entry_norm: f64,
    max_entry_norm: f64,
}

fn codebook_stats(layer: &QuantizedLayer) -> Vec<CodebookStats> {
    let p = layer.params();
    layer
        .codebooks()
        .iter()
        .zip(layer.codes().streams())
        .enumerate()
        .map(|(t, (cb, stream))| {
            let mut counts = vec![0u64; cb.len()];
            for &c in stream {
                counts[c as usize] += 1;
            }
            let norms: Vec<f64> = (0..cb.len())
                .map(|k| cb.entry(k).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
                .collect();
            CodebookStats {
                index: t,
                kind: if t == 0 { "basic" } else { "extended" },
                codes: stream.len(),
                used_entries: counts.iter().filter(|&&c| c > 0).count(),
                code_entropy_bits: histogram_entropy(&counts),
                mean_entry_norm: norms.iter().sum::<f64>() / norms.len() as f64,
                max_entry_norm: norms.iter().fold(0.0, |m: f64, &v| m.max(v)),
            }
        })
        .take(p.num_codebooks)
        .collect()
}

fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let bytes = std::fs::read(&args.input).map_err(|e| Failure::io(format!("{}: {e}", args.input.display())))?;
    let layer = format::decode_layer_bytes(&bytes).map_err(|e| format_failure(&args.input, e))?;
    let p = layer.params();
    let predicted = format::predicted_bits(p);
    let report = json!({
        "file": args.input.display().to_string(),
        "format": String::from_utf8_lossy(format::LAYER_MAGIC),
        "M": p.rows,
        "N": p.cols,
        "d": p.dim,
        "e": p.code_bits,
        "m": p.num_codebooks,
        "important_cols": p.important_cols,
        "seed": p.seed,
        "file_bytes": bytes.len(),
        "measured_bits_per_weight": format::measured_bits(p, bytes.len()),
        "predicted_bits_per_weight": predicted.avg_bits,
        "codebooks": codebook_stats(&layer),
    });
    print_json(out, &report)?;
    Ok(exit::OK)
}

#[derive(Debug, Serialize)]
struct BitsJson {
    #[serde(rename = "M")]
    rows: usize,
    #[serde(rename = "N")]
    cols: usize,
    m: usize,
    d: usize,
    e: u32,
    lambda: Option<f64>,
    codebook_value_bits: u32,
    permutation_index_bits: u32,
    avg_bits: f64,
    code_bits: f64,
    codebook_bits: f64,
    permutation_bits: f64,
}

fn cmd_bits(args: &BitsArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let dims: Vec<usize> = parse_list(&args.d).map_err(Failure::invalid)?;
    let bits: Vec<u32> = parse_list(&args.e).map_err(Failure::invalid)?;
    let ratios = match &args.lambda {
        Some(s) => Some(parse_ratios(s).map_err(Failure::invalid)?),
        None => None,
    };
    if args.rows == 0 || args.cols == 0 || args.codebooks == 0 {
        return Err(Failure::invalid("M, N and codebooks must be positive"));
    }
    if let Some(&bad) = dims.iter().find(|&&d| d == 0 || args.cols % d != 0) {
        return Err(Failure::invalid(format!("N not divisible by d: N={}, d={bad}", args.cols)));
    }
    if let Some(&bad) = bits.iter().find(|&&e| !(1..=16).contains(&e)) {
        return Err(Failure::invalid(format!("code bits must be in 1..=16, got {bad}")));
    }
    for &r in ratios.iter().flatten() {
        check_ratio(r)?;
    }
    let widths = match args.storage {
        StorageArg::Compact => StorageWidths::COMPACT,
        StorageArg::Disk => StorageWidths::ON_DISK,
    };
    let report = |d: usize, e: u32, r: Option<f64>| match r {
        None => avg_bits_vq_with(args.rows, args.cols, args.codebooks, d, e, widths),
        Some(r) => avg_bits_crvq_with(
            args.rows,
            args.cols,
            args.codebooks,
            d,
            e,
            r,
            widths,
            RatioRounding::WholeVectors,
        ),
    };
    let lambdas: Vec<Option<f64>> = match &ratios {
        Some(rs) => rs.iter().copied().map(Some).collect(),
        None => vec![None],
    };

    let w = |r: io::Result<()>| r.map_err(|e| Failure::io(e.to_string()));
    if args.sweep {
        w(writeln!(out, "{}", BitReport::CSV_HEADER))?;
        for &d in &dims {
            for &e in &bits {
                for &r in &lambdas {
                    w(writeln!(out, "{}", report(d, e, r).csv_row()))?;
                }
            }
        }
        return Ok(exit::OK);
    }
    if dims.len() != 1 || bits.len() != 1 || lambdas.len() != 1 {
        return Err(Failure::invalid("several values given; add --sweep for a CSV grid"));
    }
    let (d, e, r) = (dims[0], bits[0], lambdas[0]);
    let b = report(d, e, r);
    print_json(
        out,
        &BitsJson {
            rows: args.rows,
            cols: args.cols,
            m: args.codebooks,
            d,
            e,
            lambda: r,
            codebook_value_bits: widths.codebook_value_bits,
            permutation_index_bits: widths.permutation_index_bits,
            avg_bits: b.avg_bits,
            code_bits: b.code_bits,
            codebook_bits: b.codebook_bits,
            permutation_bits: b.permutation_bits,
        },
    )?;
    Ok(exit::OK)
}

fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let ratios = parse_ratios(&args.lambda).map_err(Failure::invalid)?;
    for &r in &ratios {
        check_ratio(r)?;
    }
    let codebooks: Vec<usize> = parse_list(&args.codebooks).map_err(Failure::invalid)?;
    let metrics = args
        .metric
        .split(',')
        .map(|m| parse_metric(m.trim()).ok_or_else(|| Failure::invalid(format!("unknown metric {m:?}"))))
        .collect::<Result<Vec<ImportanceMetric>, _>>()?;
    let opts = batch_options(&args.common, Settings::default())?;
    precheck_columns(&args.input_dir, opts.config.vector_dim)?;
    let grid = AblationGrid { ratios, codebooks, metrics };
    let result = batch::ablate_dir(&args.input_dir, &opts, &grid)?;
    for e in &result.errors {
        eprintln!("{}: {}", e.file, e.error);
    }
    let csv = result.to_csv();
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?,
        None => out.write_all(csv.as_bytes()).map_err(|e| Failure::io(e.to_string()))?,
    }
    Ok(if result.errors.is_empty() { exit::OK } else { exit::PARTIAL })
}

fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if args.rows == 0 || args.cols == 0 || !(args.sigma >= 0.0) {
        return Err(Failure::invalid("rows and cols must be positive, sigma non-negative"));
    }
    let seed = Settings { seed: args.seed, ..Settings::default() }.resolve_seed(env_seed().as_deref())?;
    std::fs::create_dir_all(&args.output_dir)
        .map_err(|e| Failure::io(format!("{}: {e}", args.output_dir.display())))?;
    for i in 0..args.count {
        let w = synth::heavy_tailed_layer(args.rows, args.cols, args.sigma, seed.wrapping_add(i as u64));
        let path = args.output_dir.join(format!("layer_{i:03}.{}", batch::MATRIX_EXT));
        format::save_matrix(&w, &path).map_err(|e| format_failure(&path, e))?;
        writeln!(out, "{}", path.display()).map_err(|e| Failure::io(e.to_string()))?;
    }
    Ok(exit::OK)
}

/// Runs a parsed command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    match &cli.command {
        Command::Quantize(a) => cmd_quantize(a, out),
        Command::Decode(a) => cmd_decode(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Bits(a) => cmd_bits(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

/// Parses `args` and runs the command; returns the exit code. Errors go to
/// stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::INVALID } else { exit::OK };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
