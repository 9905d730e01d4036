//! Command-line surface.
//!
//! Exit codes: 0 success, 1 verification failure, 2 argument errors (and a
//! missing file for `verify`), 3 data errors, 4 training divergence.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{parse_methods, run_bench, to_csv, to_markdown, BenchConfig, Suite};
use crate::btae::{
    load_decoder, load_model, save_model, Btae, DecoderKind, ModelConfig, RpeMode, DECODER_MAGIC,
    MODEL_MAGIC,
};
use crate::compressor::container::CONTAINER_MAGIC;
use crate::compressor::{
    compress, decompress, model_from_container, transfer_compress, CompressOptions, Compressed,
    Container, LossKind, Mode, TrainConfig,
};
use crate::data::{
    load_series, save_series, synthesize_polynomial, synthesize_random_walk, SeriesFormat,
    SyntheticSpec,
};
use crate::qel::QelParams;
use crate::quantizer::verify_maae;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_ARGUMENT: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "deepdict",
    version,
    about = "Error-bounded lossy time-series compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on the input and write a container.
    Compress(CompressArgs),
    /// Rebuild a series from a container.
    Decompress(DecompressArgs),
    /// Check a container against the original within its own eps.
    Verify(VerifyArgs),
    /// Generate a synthetic series.
    Synth(SynthArgs),
    /// Compare methods over a suite of datasets.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    F32,
}

impl From<FormatArg> for SeriesFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => SeriesFormat::Csv,
            FormatArg::F32 => SeriesFormat::F32Le,
        }
    }
}

fn format_for(path: &Path, explicit: Option<FormatArg>) -> SeriesFormat {
    explicit.map_or_else(|| SeriesFormat::from_path(path), SeriesFormat::from)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    L1,
    L2,
    Qel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Uni,
    Multi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecoderArg {
    Transformer,
    Ffn,
    Rnn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RpeArg {
    Literal,
    Learned,
}

/// Model and training flags shared by `compress` and `bench`.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Window length l.
    #[arg(long, default_value_t = 128)]
    window: usize,
    /// Latent code length |c|.
    #[arg(long = "latent-bits", default_value_t = 32)]
    latent_bits: usize,
    #[arg(long, value_enum, default_value = "qel")]
    loss: LossArg,
    /// QEL sharpness exponent.
    #[arg(long, default_value_t = 10)]
    b: u32,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "multi")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "transformer")]
    decoder: DecoderArg,
    /// Add the relative position term to attention logits.
    #[arg(long)]
    rpe: bool,
    /// Relative position variant used with --rpe.
    #[arg(long = "rpe-mode", value_enum, default_value = "literal")]
    rpe_mode: RpeArg,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    /// Train on a random subset of this many windows per epoch.
    #[arg(long = "windows-per-epoch")]
    windows_per_epoch: Option<usize>,
    /// Map each channel's range to [-1, 1] at the model boundary.
    #[arg(long)]
    prescale: bool,
}

impl ModelArgs {
    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_bits: self.latent_bits,
            l: self.window,
            decoder_kind: match self.decoder {
                DecoderArg::Transformer => DecoderKind::Transformer,
                DecoderArg::Ffn => DecoderKind::Ffn,
                DecoderArg::Rnn => DecoderKind::Rnn,
            },
            rpe: match (self.rpe, self.rpe_mode) {
                (false, _) => RpeMode::Off,
                (true, RpeArg::Literal) => RpeMode::Literal,
                (true, RpeArg::Learned) => RpeMode::Learned,
            },
            seed: self.seed,
            ..ModelConfig::default()
        }
    }

    fn train_config(&self, eps: f64) -> TrainConfig {
        TrainConfig {
            loss: match self.loss {
                LossArg::L1 => LossKind::L1,
                LossArg::L2 => LossKind::L2,
                LossArg::Qel => LossKind::Qel,
            },
            qel: QelParams::new(eps, self.b),
            batch_size: self.batch,
            lr: self.lr,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            windows_per_epoch: self.windows_per_epoch,
            ..TrainConfig::default()
        }
    }

    fn options(&self) -> CompressOptions {
        CompressOptions {
            mode: match self.mode {
                ModeArg::Uni => Mode::Uni,
                ModeArg::Multi => Mode::Multi,
            },
            prescale: self.prescale,
        }
    }
}

#[derive(Debug, Args)]
struct CompressArgs {
    input: PathBuf,
    output: PathBuf,
    /// Maximum absolute error.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[command(flatten)]
    model: ModelArgs,
    /// Pretrained model file, or a container whose decoder is reused.
    #[arg(long)]
    transfer: Option<PathBuf>,
    /// Write the JSON compression report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also save the trained model (usable with --transfer).
    #[arg(long = "save-model")]
    save_model: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct DecompressArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    original: PathBuf,
    container: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthKind {
    Poly,
    Walk,
}

#[derive(Debug, Args)]
struct SynthArgs {
    output: PathBuf,
    #[arg(long, value_enum, default_value = "poly")]
    kind: SynthKind,
    #[arg(long, default_value_t = 10_000)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    dims: usize,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long = "segment-len", default_value_t = 128)]
    segment_len: usize,
    #[arg(long = "t-low", default_value_t = -1.0, allow_hyphen_values = true)]
    t_low: f64,
    #[arg(long = "t-high", default_value_t = 1.0, allow_hyphen_values = true)]
    t_high: f64,
    /// Random-walk step bound.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Md,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// `synth` or a directory of .csv/.f32 files.
    #[arg(long, default_value = "synth")]
    suite: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value = "deepdict,ca,quantize-only")]
    methods: String,
    /// Table destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "table-format", value_enum, default_value = "csv")]
    table_format: TableFormat,
    #[command(flatten)]
    model: ModelArgs,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) | Error::Config(_) => EXIT_ARGUMENT,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::arg(format!(
            "--eps must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

fn load_pretrained(path: &Path) -> Result<Btae> {
    let bytes = std::fs::read(path)?;
    match bytes.get(..4) {
        Some(m) if m == MODEL_MAGIC => load_model(&bytes),
        Some(m) if m == DECODER_MAGIC => load_decoder(&bytes),
        Some(m) if m == CONTAINER_MAGIC => model_from_container(&Container::from_bytes(&bytes)?),
        _ => Err(Error::arg(format!(
            "{} is not a model or container",
            path.display()
        ))),
    }
}

fn cmd_compress(a: &CompressArgs) -> Result<i32> {
    check_eps(a.eps)?;
    let series = load_series(&a.input, format_for(&a.input, a.format))?;
    let train = a.model.train_config(a.eps);
    let opts = a.model.options();
    let out: Compressed = match &a.transfer {
        Some(p) => {
            let pre = load_pretrained(p)?;
            transfer_compress(&series, &pre, a.eps, &train, &opts, Some(a.model.window))?
        }
        None => compress(&series, a.eps, &a.model.model_config(), &train, &opts)?,
    };
    std::fs::write(&a.output, &out.bytes)?;
    if let Some(p) = &a.report {
        std::fs::write(
            p,
            serde_json::to_string_pretty(&out.report).expect("report serializes"),
        )?;
    }
    if let (Some(p), Some(m)) = (&a.save_model, &out.model) {
        std::fs::write(p, save_model(m))?;
    }
    println!(
        "ratio={:.4} compressed_bytes={} max_abs_err={:e} eps={}",
        out.report.ratio, out.report.compressed_bytes, out.report.max_abs_err, a.eps
    );
    Ok(EXIT_OK)
}

fn cmd_decompress(a: &DecompressArgs) -> Result<i32> {
    let bytes = std::fs::read(&a.input)?;
    let series = decompress(&Container::from_bytes(&bytes)?)?;
    save_series(&series, &a.output, format_for(&a.output, a.format))?;
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    for p in [&a.original, &a.container] {
        if !p.exists() {
            eprintln!("error: {} does not exist", p.display());
            return Ok(EXIT_ARGUMENT);
        }
    }
    let original = load_series(&a.original, format_for(&a.original, a.format))?;
    let container = Container::from_bytes(&std::fs::read(&a.container)?)?;
    let recon = decompress(&container)?;
    let report = verify_maae(&original, &recon, container.eps)?;
    println!(
        "max_abs_err={:e} eps={} pass={}",
        report.max_abs_err, container.eps, report.pass
    );
    Ok(if report.pass {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let series = match a.kind {
        SynthKind::Poly => synthesize_polynomial(&SyntheticSpec {
            l_total: a.length,
            d: a.dims,
            degree: a.degree,
            t_low: a.t_low,
            t_high: a.t_high,
            segment_len: a.segment_len,
            seed: a.seed,
        })?,
        SynthKind::Walk => synthesize_random_walk(a.length, a.dims, a.step, a.seed)?,
    };
    save_series(&series, &a.output, format_for(&a.output, a.format))?;
    Ok(EXIT_OK)
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    check_eps(a.eps)?;
    let cfg = BenchConfig {
        suite: Suite::parse(&a.suite),
        eps: a.eps,
        methods: parse_methods(&a.methods)?,
        seed: a.model.seed,
        model: a.model.model_config(),
        train: a.model.train_config(a.eps),
        options: a.model.options(),
    };
    let cells = run_bench(&cfg)?;
    for c in cells.iter().filter(|c| !c.ok()) {
        eprintln!(
            "{} on {}: {}",
            c.method,
            c.dataset,
            c.error.as_deref().unwrap_or("")
        );
    }
    let table = match a.table_format {
        TableFormat::Csv => to_csv(&cells),
        TableFormat::Md => to_markdown(&cells),
    };
    match &a.out {
        Some(p) => std::fs::write(p, table)?,
        None => print!("{table}"),
    }
    Ok(if cells.iter().any(|c| c.ok()) {
        EXIT_OK
    } else {
        EXIT_DATA
    })
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_ARGUMENT
            } else {
                EXIT_OK
            };
        }
    };
    let result = match &cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
