//! Training losses: L1, L2 and the quantized entropy loss (QEL).
//!
//! QEL's forward value is the Shannon entropy (nats) of the hard-quantized
//! residual symbols. Its backward pass replaces the non-differentiable
//! histogram with a smooth bin indicator, giving for each residual `r_i`
//!
//! ```text
//! dH/dr_i = sum_j [1 + ln p(s_j)] * R(r_i - s_j)
//! R(d)    = b / (|r| eps) * sign(u) |u|^(b-1) / (|u|^b + 1)^2,   u = d / eps
//! ```
//!
//! Working in `u` avoids forming `eps^b`, which underflows long before the
//! ratio does. Using `|u|` keeps odd `b` free of the pole at `u = -1` and is
//! identical to the plain power form for even `b`.

use serde::{Deserialize, Serialize};

use crate::entropy::EntropyModel;
use crate::quantizer::{dequantize_value, quantize_value};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QelParams {
    pub eps: f64,
    /// Sharpness exponent of the smooth bin indicator.
    pub b: u32,
    /// Contributions with `|u| > clamp_u` are dropped (widened for small `b`,
    /// see [`QelParams::cutoff`]).
    pub clamp_u: f64,
}

impl QelParams {
    pub fn new(eps: f64, b: u32) -> Self {
        Self {
            eps,
            b,
            clamp_u: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::arg(format!(
                "QEL eps must be positive, got {}",
                self.eps
            )));
        }
        if self.b < 1 {
            return Err(Error::arg("QEL b must be >= 1"));
        }
        if !(self.clamp_u > 0.0) {
            return Err(Error::arg("QEL clamp_u must be positive"));
        }
        Ok(())
    }

    /// Effective `|u|` cutoff. The kernel tail decays like `|u|^-(b+1)`, so for
    /// small `b` the fixed clamp is widened until dropped terms sit below
    /// 1e-16 of the peak.
    pub fn cutoff(&self) -> f64 {
        self.clamp_u.max(10f64.powf(16.0 / (self.b as f64 + 1.0)))
    }
}

/// `R(d)` for one residual/symbol distance, `n = |r|`.
#[inline]
pub fn surrogate_kernel(d: f64, eps: f64, b: u32, n: usize) -> f64 {
    let u = d / eps;
    let au = u.abs();
    if au == 0.0 {
        return 0.0;
    }
    let num = au.powi(b as i32 - 1);
    let den = au.powi(b as i32) + 1.0;
    let mag = (b as f64 / (n as f64 * eps)) * num / (den * den);
    if u < 0.0 {
        -mag
    } else {
        mag
    }
}

/// State cached by the forward pass for the backward pass: the symbol set,
/// its probabilities and the per-symbol weights `1 + ln p(s_j)`.
#[derive(Debug, Clone)]
pub struct QelWorkspace {
    pub params: QelParams,
    pub model: EntropyModel,
    /// Symbol values `s_j = 2 eps k_j`.
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub n: usize,
}

impl QelWorkspace {
    pub fn entropy(&self) -> f64 {
        self.model.entropy_nats()
    }

    /// Dense distance matrix `D[i][j] = r_i - s_j` (|r| x |S|), for inspection.
    pub fn distance_matrix(&self, r: &[f64]) -> Vec<Vec<f64>> {
        r.iter()
            .map(|&ri| self.centers.iter().map(|&s| ri - s).collect())
            .collect()
    }

    pub fn gradient_at(&self, ri: f64) -> f64 {
        let QelParams { eps, b, .. } = self.params;
        let reach = self.params.cutoff() * eps;
        // Centers are sorted: scan only those within reach of r_i.
        let lo = ri - reach;
        let hi = ri + reach;
        let start = self.centers.partition_point(|&s| s < lo);
        let mut g = 0.0;
        for j in start..self.centers.len() {
            let s = self.centers[j];
            if s > hi {
                break;
            }
            g += self.weights[j] * surrogate_kernel(ri - s, eps, b, self.n);
        }
        g
    }

    pub fn backward(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.n {
            return Err(Error::arg(format!(
                "backward on {} residuals, forward saw {}",
                r.len(),
                self.n
            )));
        }
        Ok(r.iter().map(|&ri| self.gradient_at(ri)).collect())
    }
}

/// Runs the forward pass and keeps what the backward pass needs.
pub fn qel_prepare(r: &[f64], params: &QelParams) -> Result<QelWorkspace> {
    params.validate()?;
    if r.is_empty() {
        return Err(Error::arg("QEL of an empty residual"));
    }
    let k = r
        .iter()
        .map(|&v| {
            if v.is_finite() {
                quantize_value(v, params.eps)
            } else {
                Err(Error::Validation("non-finite residual in QEL".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let model = EntropyModel::from_symbols(&k);
    let centers = model
        .symbols
        .iter()
        .map(|&s| dequantize_value(s, params.eps))
        .collect();
    let weights = model.probabilities().iter().map(|p| 1.0 + p.ln()).collect();
    Ok(QelWorkspace {
        params: *params,
        model,
        centers,
        weights,
        n: r.len(),
    })
}

/// Entropy (nats) of the quantized residual distribution.
pub fn qel_forward(r: &[f64], params: &QelParams) -> Result<f64> {
    Ok(qel_prepare(r, params)?.entropy())
}

/// Surrogate gradient of [`qel_forward`] with respect to each residual.
pub fn qel_backward(r: &[f64], params: &QelParams) -> Result<Vec<f64>> {
    qel_prepare(r, params)?.backward(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionKind {
    L1,
    L2,
}

fn check_shapes(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::arg(format!(
            "shape mismatch: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("regression loss of empty tensors"));
    }
    Ok(())
}

/// Mean absolute (L1) or mean squared (L2) error.
pub fn regression_loss(pred: &[f64], target: &[f64], kind: RegressionKind) -> Result<f64> {
    check_shapes(pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| match kind {
            RegressionKind::L1 => (p - t).abs(),
            RegressionKind::L2 => (p - t) * (p - t),
        })
        .sum();
    Ok(sum / n)
}

/// Gradient of [`regression_loss`] with respect to `pred`.
pub fn regression_grad(pred: &[f64], target: &[f64], kind: RegressionKind) -> Result<Vec<f64>> {
    check_shapes(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| match kind {
            RegressionKind::L1 => {
                let d = p - t;
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            }
            RegressionKind::L2 => 2.0 * (p - t) / n,
        })
        .collect())
}
