//! Per-input training with checkpoint selection by estimated compressed size.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossKind, Prescale, TrainConfig};
use crate::btae::{serialize_decoder, Btae, ForwardCache};
use crate::data::WindowBatch;
use crate::entropy::sequence_bound_bits;
use crate::qel::{qel_prepare, regression_grad, regression_loss, RegressionKind};
use crate::quantizer::quantize_against;
use crate::{par, Error, Result};

/// One row of the training history. Epoch 0 is the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss; `None` for epoch 0.
    pub train_loss: Option<f64>,
    /// Latent bits + decoder bits + residual entropy bound.
    pub estimated_bits: f64,
    pub residual_bound_bits: f64,
    /// Whether this epoch became the best checkpoint.
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best checkpoint, single precision.
    pub model: Btae,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_time_s: f64,
}

/// Latents and residual symbols of every window under the half-precision
/// decoder: exactly what the container stores.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `n_windows * latent_bits` codes.
    pub latents: Vec<i8>,
    pub symbols: Vec<i64>,
    pub residual_bound_bits: f64,
    pub decoder_bytes: usize,
}

impl Evaluation {
    pub fn estimated_bits(&self) -> f64 {
        self.latents.len() as f64 + 8.0 * self.decoder_bytes as f64 + self.residual_bound_bits
    }
}

/// Prediction of one window in source units. Compression and decompression
/// both go through this function.
pub fn predict(model: &Btae, c: &[i8], prescale: &Prescale) -> Result<Vec<f64>> {
    let out = model.decode(c)?;
    Ok(prescale.from_output(&out))
}

pub fn evaluate(
    model: &Btae,
    windows: &WindowBatch,
    prescale: &Prescale,
    eps: f64,
) -> Result<Evaluation> {
    let half = model.half_precision();
    let per_window = par::map_range(windows.n_windows, |i| -> Result<(Vec<i8>, Vec<i64>)> {
        let x = windows.window(i);
        let code = model.encode(&prescale.to_input(x))?;
        let pred = predict(&half, &code.c, prescale)?;
        let k = x
            .iter()
            .zip(&pred)
            .map(|(&xv, &p)| quantize_against(xv, p, eps))
            .collect::<Result<Vec<_>>>()?;
        Ok((code.c, k))
    });
    let mut latents = Vec::with_capacity(windows.n_windows * model.config().latent_bits);
    let mut symbols = Vec::with_capacity(windows.windows.len());
    for r in per_window {
        let (c, k) = r?;
        latents.extend(c);
        symbols.extend(k);
    }
    Ok(Evaluation {
        residual_bound_bits: sequence_bound_bits(&symbols),
        latents,
        symbols,
        decoder_bytes: serialize_decoder(model).len(),
    })
}

/// Adam with decoupled weight decay (`theta -= lr * wd * theta`).
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(
        &mut self,
        theta: &mut [f32],
        grad: &[f32],
        frozen: Option<&[bool]>,
        cfg: &TrainConfig,
    ) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let lr = cfg.lr as f32;
        let wd = cfg.weight_decay as f32;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..theta.len() {
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= lr * (mh / (vh.sqrt() + 1e-8) + wd * theta[i]);
        }
    }
}

/// Batch loss and its gradient w.r.t. the (source-unit) predictions.
fn batch_loss(pred: &[f64], target: &[f64], cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    match cfg.loss {
        LossKind::L1 | LossKind::L2 => {
            let kind = if cfg.loss == LossKind::L1 {
                RegressionKind::L1
            } else {
                RegressionKind::L2
            };
            Ok((
                regression_loss(pred, target, kind)?,
                regression_grad(pred, target, kind)?,
            ))
        }
        LossKind::Qel => {
            let r: Vec<f64> = target.iter().zip(pred).map(|(t, p)| t - p).collect();
            if r.iter().any(|v| !v.is_finite()) {
                return Ok((f64::NAN, Vec::new()));
            }
            let ws = qel_prepare(&r, &cfg.qel)?;
            // r = x - x_hat, so dL/dx_hat = -dL/dr.
            let grad = ws.backward(&r)?.into_iter().map(|g| -g).collect();
            Ok((ws.entropy(), grad))
        }
    }
}

/// Trains `model` on `windows`; parameters with `frozen[i]` never change.
pub fn fit(
    model: Btae,
    windows: &WindowBatch,
    prescale: &Prescale,
    cfg: &TrainConfig,
    frozen: Option<&[bool]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if windows.n_windows == 0 {
        return Err(Error::Validation(format!(
            "series too short for one window of {} samples",
            windows.l
        )));
    }
    if windows.window_len() != model.config().window_len() {
        return Err(Error::Config(format!(
            "windows hold {} values, model expects {}",
            windows.window_len(),
            model.config().window_len()
        )));
    }
    let start = Instant::now();
    let eps = cfg.qel.eps;
    let inputs: Vec<Vec<f32>> = (0..windows.n_windows)
        .map(|i| prescale.to_input(windows.window(i)))
        .collect();
    let n_params = model.params().len();
    let mut model = model;
    let mut adam = Adam::new(n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..windows.n_windows).collect();

    let initial = evaluate(&model, windows, prescale, eps)?;
    let mut best_bits = initial.estimated_bits();
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        estimated_bits: best_bits,
        residual_bound_bits: initial.residual_bound_bits,
        best: true,
    }];
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let used = cfg
            .windows_per_epoch
            .map_or(order.len(), |n| n.min(order.len()));
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (step, batch) in order[..used].chunks(cfg.batch_size).enumerate() {
            let fw: Vec<Result<(Vec<f32>, ForwardCache)>> =
                par::map(batch, |&i| model.forward(&inputs[i]));
            let fw = fw.into_iter().collect::<Result<Vec<_>>>()?;
            let mut pred = Vec::with_capacity(batch.len() * windows.window_len());
            let mut target = Vec::with_capacity(pred.capacity());
            for (&i, (xhat, _)) in batch.iter().zip(&fw) {
                pred.extend(prescale.from_output(xhat));
                target.extend_from_slice(windows.window(i));
            }
            let (loss, dpred) = batch_loss(&pred, &target, cfg)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            let wl = windows.window_len();
            let grads = par::map_range(batch.len(), |b| -> Result<Vec<f32>> {
                let dx = prescale.output_grad(&dpred[b * wl..(b + 1) * wl]);
                let mut g = vec![0.0f32; n_params];
                model.backward(&fw[b].1, &dx, &mut g, false)?;
                Ok(g)
            });
            let mut total = vec![0.0f32; n_params];
            for g in grads {
                for (t, v) in total.iter_mut().zip(g?) {
                    *t += v;
                }
            }
            if total.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            adam.step(&mut model.params_mut().values, &total, frozen, cfg);
            loss_sum += loss;
            n_batches += 1;
        }
        epochs_run = epoch;
        let eval = evaluate(&model, windows, prescale, eps)?;
        let bits = eval.estimated_bits();
        let improved = bits < best_bits;
        if improved {
            best_bits = bits;
            best_model = model.clone();
            best_epoch = epoch;
        }
        history.push(EpochRecord {
            epoch,
            train_loss: Some(loss_sum / n_batches.max(1) as f64),
            estimated_bits: bits,
            residual_bound_bits: eval.residual_bound_bits,
            best: improved,
        });
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        epochs_run,
        train_time_s: start.elapsed().as_secs_f64(),
    })
}
