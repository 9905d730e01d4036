//! End-to-end compression: per-input training, residual correction,
//! container assembly, decompression, transfer and the baselines.
//!
//! The reconstruction is `x_hat + r_q` where `x_hat` comes from the
//! half-precision decoder stored in the container. Compression predicts with
//! exactly those weights through [`train::predict`], the same function
//! decompression uses, so the bound `|x - x_recon| <= eps` is enforced on the
//! values the reader will actually compute.

pub mod ca;
pub mod container;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::btae::params::ParamGroup;
use crate::btae::{load_decoder, serialize_decoder, Btae, ModelConfig};
use crate::data::{flatten_multivariate, window, TimeSeries, WindowBatch};
use crate::entropy::{
    decode_symbols, encode_symbols, pack_bits, sequence_bound_bits, unpack_bits, EncodedStream,
};
use crate::qel::QelParams;
use crate::quantizer::{quantize_against, reconstruct, verify_maae};
use crate::{par, Error, Result};
pub use ca::{ca_compress, ca_decompress};
pub use container::{Container, ContainerKind, PartSizes};
pub use train::{fit, EpochRecord, TrainOutcome};

use container::{CONTAINER_VERSION, FLAG_LATENT_CODED, FLAG_PRESCALE, FLAG_RPE, FLAG_UNI};

/// Version of the JSON report schema.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
    #[default]
    Qel,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::Qel => "qel",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "qel" => Ok(Self::Qel),
            other => Err(Error::arg(format!("unknown loss {other:?}"))),
        }
    }
}

/// Univariate mode interleaves channels into one before windowing;
/// multivariate mode feeds `l x d` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Uni,
    #[default]
    Multi,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uni => "uni",
            Self::Multi => "multi",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uni" => Ok(Self::Uni),
            "multi" => Ok(Self::Multi),
            other => Err(Error::arg(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// `qel.eps` is also the quantization step used for checkpoint selection.
    pub qel: QelParams,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Zero keeps the initial model.
    pub max_epochs: usize,
    /// Epochs without a new best checkpoint before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Train on a fresh random subset of this many windows per epoch.
    pub windows_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Qel,
            qel: QelParams::new(0.1, 10),
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            max_epochs: 150,
            patience: 20,
            seed: 0,
            windows_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.qel.validate()?;
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::arg("patience must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::arg(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::arg("weight decay must be >= 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::arg(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.windows_per_epoch == Some(0) {
            return Err(Error::arg("windows_per_epoch must be >= 1"));
        }
        Ok(())
    }
}

/// Per-channel affine map applied to model inputs and outputs only;
/// residuals stay in source units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prescale {
    /// `(offset, scale)` per model channel.
    pub params: Vec<(f64, f64)>,
}

impl Prescale {
    pub fn identity(d: usize) -> Self {
        Self {
            params: vec![(0.0, 1.0); d],
        }
    }

    /// Maps each channel's range onto `[-1, 1]`.
    pub fn fit(values: &[f64], d: usize) -> Self {
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for (i, &v) in values.iter().enumerate() {
            lo[i % d] = lo[i % d].min(v);
            hi[i % d] = hi[i % d].max(v);
        }
        let params = lo
            .into_iter()
            .zip(hi)
            .map(|(a, b)| {
                if !a.is_finite() {
                    return (0.0, 1.0);
                }
                let half = (b - a) / 2.0;
                (
                    (a + b) / 2.0,
                    if half > 0.0 && half.is_finite() {
                        half
                    } else {
                        1.0
                    },
                )
            })
            .collect();
        Self { params }
    }

    fn d(&self) -> usize {
        self.params.len()
    }

    pub fn to_input(&self, x: &[f64]) -> Vec<f32> {
        let d = self.d();
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (o, s) = self.params[i % d];
                ((v - o) / s) as f32
            })
            .collect()
    }

    pub fn from_output(&self, y: &[f32]) -> Vec<f64> {
        let d = self.d();
        y.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (o, s) = self.params[i % d];
                v as f64 * s + o
            })
            .collect()
    }

    /// Gradient w.r.t. model outputs given the gradient w.r.t. predictions.
    pub fn output_grad(&self, dpred: &[f64]) -> Vec<f32> {
        let d = self.d();
        dpred
            .iter()
            .enumerate()
            .map(|(i, &g)| (g * self.params[i % d].1) as f32)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CompressOptions {
    pub mode: Mode,
    pub prescale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferKind {
    /// Same channel count: the whole model is reused and fine-tuned.
    Full,
    /// Different channel count: lift and blocks are copied and frozen.
    FrozenCore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub schema_version: u32,
    pub method: String,
    pub original_bytes: u64,
    pub compressed_bytes: u64,
    pub ratio: f64,
    pub header_bytes: u64,
    pub decoder_bytes: u64,
    pub latent_bytes: u64,
    pub residual_bytes: u64,
    pub tail_bytes: u64,
    pub max_abs_err: f64,
    pub eps: f64,
    pub train_time_s: f64,
    /// Entropy bound of the residual symbols.
    pub entropy_bound_bits: f64,
    pub n_windows: u64,
    pub mode: Mode,
    pub loss: LossKind,
    pub b: u32,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub transfer: Option<TransferKind>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub history: Vec<EpochRecord>,
}

/// Original float32 bytes over container bytes.
pub fn compression_ratio(report: &CompressionReport) -> f64 {
    report.original_bytes as f64 / report.compressed_bytes as f64
}

#[derive(Debug, Clone)]
pub struct Compressed {
    pub container: Container,
    pub bytes: Vec<u8>,
    pub report: CompressionReport,
    /// Trained model (single precision); `None` when the series is shorter
    /// than one window.
    pub model: Option<Btae>,
}

/// Trains a model on `series` (channel count must match `model_config.d`).
pub fn train(
    series: &TimeSeries,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome> {
    if series.d() != model_config.d {
        return Err(Error::Config(format!(
            "series has {} channels, model expects {}",
            series.d(),
            model_config.d
        )));
    }
    let windows = window(series, model_config.l)?;
    let model = Btae::new(model_config.clone())?;
    fit(
        model,
        &windows,
        &Prescale::identity(model_config.d),
        train_config,
        None,
    )
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::arg(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    Ok(())
}

struct Prepared {
    model_series: TimeSeries,
    windows: WindowBatch,
    prescale: Prescale,
    train: TrainConfig,
}

fn prepare(
    series: &TimeSeries,
    eps: f64,
    l: usize,
    train_config: &TrainConfig,
    opts: &CompressOptions,
) -> Result<Prepared> {
    check_eps(eps)?;
    if series.d() > u16::MAX as usize {
        return Err(Error::arg("too many channels for the container header"));
    }
    let model_series = match opts.mode {
        Mode::Uni => flatten_multivariate(series),
        Mode::Multi => series.clone(),
    };
    let windows = window(&model_series, l)?;
    let prescale = if opts.prescale {
        Prescale::fit(model_series.values(), model_series.d())
    } else {
        Prescale::identity(model_series.d())
    };
    let mut train = train_config.clone();
    train.qel.eps = eps;
    train.validate()?;
    Ok(Prepared {
        model_series,
        windows,
        prescale,
        train,
    })
}

pub fn compress(
    series: &TimeSeries,
    eps: f64,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    opts: &CompressOptions,
) -> Result<Compressed> {
    let prep = prepare(series, eps, model_config.l, train_config, opts)?;
    let cfg = ModelConfig {
        d: prep.model_series.d(),
        ..model_config.clone()
    };
    cfg.validate()?;
    let outcome = if prep.windows.n_windows == 0 {
        None
    } else {
        Some(fit(
            Btae::new(cfg.clone())?,
            &prep.windows,
            &prep.prescale,
            &prep.train,
            None,
        )?)
    };
    assemble(series, &prep, &cfg, opts, outcome, None)
}

/// Compresses with a pretrained model. With the same channel count the whole
/// model is fine-tuned; otherwise the latent lift and decoder blocks are
/// copied and frozen while the encoder and output projection train from
/// scratch. `train_config.max_epochs = 0` reuses the model as is.
pub fn transfer_compress(
    series: &TimeSeries,
    pretrained: &Btae,
    eps: f64,
    train_config: &TrainConfig,
    opts: &CompressOptions,
    requested_l: Option<usize>,
) -> Result<Compressed> {
    let pc = pretrained.config();
    if let Some(l) = requested_l.filter(|&l| l != pc.l) {
        return Err(Error::Config(format!(
            "pretrained model uses windows of {}, request asks for {l}",
            pc.l
        )));
    }
    let prep = prepare(series, eps, pc.l, train_config, opts)?;
    let target_d = prep.model_series.d();
    let (model, frozen, kind) = if target_d == pc.d {
        (pretrained.clone(), None, TransferKind::Full)
    } else {
        let mut m = Btae::new(ModelConfig {
            d: target_d,
            ..pc.clone()
        })?;
        let core = [ParamGroup::Lift, ParamGroup::Blocks];
        m.params_mut().copy_groups_from(pretrained.params(), &core);
        let mask = m.params().group_mask(&core);
        (m, Some(mask), TransferKind::FrozenCore)
    };
    let cfg = model.config().clone();
    let outcome = if prep.windows.n_windows == 0 {
        None
    } else {
        Some(fit(
            model,
            &prep.windows,
            &prep.prescale,
            &prep.train,
            frozen.as_deref(),
        )?)
    };
    assemble(series, &prep, &cfg, opts, outcome, Some(kind))
}

fn assemble(
    series: &TimeSeries,
    prep: &Prepared,
    cfg: &ModelConfig,
    opts: &CompressOptions,
    outcome: Option<TrainOutcome>,
    transfer: Option<TransferKind>,
) -> Result<Compressed> {
    let eps = prep.train.qel.eps;
    let mut flags = 0u16;
    if opts.mode == Mode::Uni {
        flags |= FLAG_UNI;
    }
    if cfg.use_rpe() {
        flags |= FLAG_RPE;
    }
    if opts.prescale {
        flags |= FLAG_PRESCALE;
    }
    let (decoder_bytes, latent_bytes, symbols, tail) = match &outcome {
        Some(o) => {
            let eval = train::evaluate(&o.model, &prep.windows, &prep.prescale, eps)?;
            let packed = pack_bits(&eval.latents);
            let coded =
                encode_symbols(&packed.iter().map(|&b| b as i64).collect::<Vec<_>>()).to_bytes();
            let latents = if coded.len() < packed.len() {
                flags |= FLAG_LATENT_CODED;
                coded
            } else {
                packed
            };
            (
                serialize_decoder(&o.model),
                latents,
                eval.symbols,
                prep.windows.tail.clone(),
            )
        }
        None => {
            // No full window: every value is quantized against a zero prediction.
            let k = series
                .values()
                .iter()
                .map(|&x| quantize_against(x, 0.0, eps))
                .collect::<Result<Vec<_>>>()?;
            (Vec::new(), Vec::new(), k, Vec::new())
        }
    };
    let container = Container {
        version: CONTAINER_VERSION,
        kind: ContainerKind::DeepDict,
        eps,
        l: cfg.l as u32,
        d: series.d() as u16,
        l_total: series.l_total() as u64,
        flags,
        seed: cfg.seed,
        prescale: if opts.prescale {
            prep.prescale.params.clone()
        } else {
            Vec::new()
        },
        decoder_bytes,
        latent_bytes,
        residuals: encode_symbols(&symbols),
        tail,
    };
    let bytes = container.to_bytes();
    let recon = decompress(&container)?;
    let maae = verify_maae(series, &recon, eps)?;
    if !maae.pass {
        return Err(Error::Validation(format!(
            "internal error: reconstruction error {} exceeds eps {eps}",
            maae.max_abs_err
        )));
    }
    let parts = container.part_sizes();
    let mut report = CompressionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: "deepdict".into(),
        original_bytes: series.float32_bytes(),
        compressed_bytes: bytes.len() as u64,
        ratio: 0.0,
        header_bytes: parts.header as u64,
        decoder_bytes: parts.decoder as u64,
        latent_bytes: parts.latents as u64,
        residual_bytes: parts.residuals as u64,
        tail_bytes: parts.tail as u64,
        max_abs_err: maae.max_abs_err,
        eps,
        train_time_s: outcome.as_ref().map_or(0.0, |o| o.train_time_s),
        entropy_bound_bits: sequence_bound_bits(&symbols),
        n_windows: prep.windows.n_windows as u64,
        mode: opts.mode,
        loss: prep.train.loss,
        b: prep.train.qel.b,
        epochs_run: outcome.as_ref().map_or(0, |o| o.epochs_run),
        best_epoch: outcome.as_ref().map_or(0, |o| o.best_epoch),
        transfer,
        model: Some(cfg.clone()),
        train: Some(prep.train.clone()),
        history: outcome
            .as_ref()
            .map(|o| o.history.clone())
            .unwrap_or_default(),
    };
    report.ratio = compression_ratio(&report);
    Ok(Compressed {
        container,
        bytes,
        report,
        model: outcome.map(|o| o.model),
    })
}

/// Rebuilds the series from a container of either kind.
pub fn decompress(container: &Container) -> Result<TimeSeries> {
    match container.kind {
        ContainerKind::CriticalAperture => ca_decompress(container),
        ContainerKind::DeepDict => decompress_model(container),
    }
}

pub fn decompress_bytes(bytes: &[u8]) -> Result<TimeSeries> {
    decompress(&Container::from_bytes(bytes)?)
}

fn decompress_model(c: &Container) -> Result<TimeSeries> {
    let d = c.d as usize;
    let n_values = (c.l_total as usize)
        .checked_mul(d)
        .ok_or_else(|| Error::decode("container: l_total * d overflows"))?;
    let symbols = decode_symbols(&c.residuals)?;
    if c.decoder_bytes.is_empty() {
        if symbols.len() != n_values || !c.tail.is_empty() {
            return Err(Error::decode(
                "model-free container: symbol count does not match the series",
            ));
        }
        let values = symbols
            .iter()
            .map(|&k| reconstruct(0.0, k, c.eps))
            .collect();
        return TimeSeries::new(values, d.max(1), "decompressed");
    }
    let model = load_decoder(&c.decoder_bytes)?;
    let model_d = if c.has_flag(FLAG_UNI) { 1 } else { d };
    let cfg = model.config();
    if cfg.l != c.l as usize || cfg.d != model_d {
        return Err(Error::Config(format!(
            "decoder is {}x{}, container declares windows of {}x{model_d}",
            cfg.l, cfg.d, c.l
        )));
    }
    let wl = cfg.window_len();
    let n_windows = n_values / wl;
    if symbols.len() != n_windows * wl || c.tail.len() != n_values - n_windows * wl {
        return Err(Error::decode(
            "container: residual or tail length does not match the series",
        ));
    }
    let n_bits = n_windows * cfg.latent_bits;
    let packed = if c.has_flag(FLAG_LATENT_CODED) {
        decode_symbols(&EncodedStream::from_bytes(&c.latent_bytes)?)?
            .into_iter()
            .map(|v| u8::try_from(v).map_err(|_| Error::decode("latent byte out of range")))
            .collect::<Result<Vec<_>>>()?
    } else {
        c.latent_bytes.clone()
    };
    let latents = unpack_bits(&packed, n_bits)?;
    let prescale = if c.has_flag(FLAG_PRESCALE) {
        if c.prescale.len() != model_d {
            return Err(Error::decode(
                "container: prescale block does not match the channel count",
            ));
        }
        Prescale {
            params: c.prescale.clone(),
        }
    } else {
        Prescale::identity(model_d)
    };
    let bits = cfg.latent_bits;
    let windows = par::map_range(n_windows, |i| -> Result<Vec<f64>> {
        let pred = train::predict(&model, &latents[i * bits..(i + 1) * bits], &prescale)?;
        Ok(pred
            .iter()
            .zip(&symbols[i * wl..(i + 1) * wl])
            .map(|(&p, &k)| reconstruct(p, k, c.eps))
            .collect())
    });
    let mut values = Vec::with_capacity(n_values);
    for w in windows {
        values.extend(w?);
    }
    values.extend_from_slice(&c.tail);
    TimeSeries::new(values, d, "decompressed")
}

/// Size and error of the model-free floor: quantize `x` against zero and
/// entropy-code the indices, in the same container layout.
pub fn quantize_only(series: &TimeSeries, eps: f64) -> Result<Compressed> {
    let cfg = ModelConfig {
        l: series.l_total() + 1,
        d: series.d(),
        ..ModelConfig::default()
    };
    let opts = CompressOptions::default();
    let prep = prepare(series, eps, cfg.l, &TrainConfig::default(), &opts)?;
    let mut out = assemble(series, &prep, &cfg, &opts, None, None)?;
    out.report.method = "quantize-only".into();
    out.report.model = None;
    out.report.train = None;
    Ok(out)
}

/// Report for a critical-aperture container.
pub fn ca_report(series: &TimeSeries, eps: f64) -> Result<(Container, CompressionReport)> {
    let start = std::time::Instant::now();
    let container = ca_compress(series, eps)?;
    let bytes = container.to_bytes();
    let recon = ca_decompress(&container)?;
    let maae = verify_maae(series, &recon, eps)?;
    let parts = container.part_sizes();
    let mut report = CompressionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: "ca".into(),
        original_bytes: series.float32_bytes(),
        compressed_bytes: bytes.len() as u64,
        ratio: 0.0,
        header_bytes: parts.header as u64,
        decoder_bytes: 0,
        latent_bytes: 0,
        residual_bytes: parts.residuals as u64,
        tail_bytes: 0,
        max_abs_err: maae.max_abs_err,
        eps,
        train_time_s: start.elapsed().as_secs_f64(),
        entropy_bound_bits: 0.0,
        n_windows: 0,
        mode: Mode::Multi,
        loss: LossKind::Qel,
        b: 0,
        epochs_run: 0,
        best_epoch: 0,
        transfer: None,
        model: None,
        train: None,
        history: Vec::new(),
    };
    report.ratio = compression_ratio(&report);
    Ok((container, report))
}

/// Model carried by a container's decoder (encoder freshly initialized).
pub fn model_from_container(container: &Container) -> Result<Btae> {
    if container.kind != ContainerKind::DeepDict || container.decoder_bytes.is_empty() {
        return Err(Error::arg("container holds no model"));
    }
    load_decoder(&container.decoder_bytes)
}
