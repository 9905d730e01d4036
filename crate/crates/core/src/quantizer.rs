//! Uniform residual quantization with a hard maximum-absolute-error bound.
//!
//! `k = round(r / 2eps)` with halves rounded away from zero, `r_q = 2eps * k`.
//! All residual arithmetic is f64 regardless of model precision.

use crate::data::TimeSeries;
use crate::{Error, Result};

/// Largest admissible `|r / 2eps|`.
pub const MAX_INDEX_MAGNITUDE: f64 = (1u64 << 62) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub r: Vec<f64>,
    pub k: Vec<i64>,
    pub r_q: Vec<f64>,
    pub eps: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "eps must be positive and finite, got {eps}"
        )))
    }
}

/// Round half away from zero. `f64::round` has exactly these semantics and,
/// unlike `floor(|x| + 0.5)`, does not misround 0.49999999999999994.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

#[inline]
pub fn quantize_value(r: f64, eps: f64) -> Result<i64> {
    let ratio = r / (2.0 * eps);
    if !(ratio.abs() <= MAX_INDEX_MAGNITUDE) {
        return Err(Error::Overflow { ratio: ratio.abs() });
    }
    Ok(round_half_away(ratio) as i64)
}

#[inline]
pub fn dequantize_value(k: i64, eps: f64) -> f64 {
    (2.0 * eps) * k as f64
}

pub fn quantize(r: &[f64], eps: f64) -> Result<ResidualBlock> {
    check_eps(eps)?;
    if let Some(i) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite residual at index {i}"
        )));
    }
    let k = r
        .iter()
        .map(|&v| quantize_value(v, eps))
        .collect::<Result<Vec<_>>>()?;
    let r_q = dequantize(&k, eps);
    Ok(ResidualBlock {
        r: r.to_vec(),
        k,
        r_q,
        eps,
    })
}

pub fn dequantize(k: &[i64], eps: f64) -> Vec<f64> {
    k.iter().map(|&k| dequantize_value(k, eps)).collect()
}

/// The one reconstruction expression shared by compression and decompression.
#[inline]
pub fn reconstruct(prediction: f64, k: i64, eps: f64) -> f64 {
    prediction + dequantize_value(k, eps)
}

/// Quantization index for `x` given a prediction, such that
/// `|x - reconstruct(prediction, k, eps)| <= eps` holds in floating point,
/// not just in exact arithmetic. At a rounding boundary the neighbouring
/// index is used if the nominal one lands an ulp outside the bound.
pub fn quantize_against(x: f64, prediction: f64, eps: f64) -> Result<i64> {
    let k = quantize_value(x - prediction, eps)?;
    if (x - reconstruct(prediction, k, eps)).abs() <= eps {
        return Ok(k);
    }
    for alt in [k - 1, k + 1] {
        if (x - reconstruct(prediction, alt, eps)).abs() <= eps {
            return Ok(alt);
        }
    }
    Err(Error::Validation(format!(
        "cannot represent {x} within eps={eps} of prediction {prediction}: eps below float resolution"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaaeReport {
    pub max_abs_err: f64,
    pub pass: bool,
}

/// Checks `max |x - x_recon| <= eps`, allowing 4 ulp of float round-off at
/// each sample's magnitude.
pub fn verify_maae(x: &TimeSeries, x_recon: &TimeSeries, eps: f64) -> Result<MaaeReport> {
    if x.d() != x_recon.d() || x.l_total() != x_recon.l_total() {
        return Err(Error::arg(format!(
            "shape mismatch: {}x{} vs {}x{}",
            x.l_total(),
            x.d(),
            x_recon.l_total(),
            x_recon.d()
        )));
    }
    let mut max_abs_err = 0.0f64;
    let mut pass = true;
    for (&a, &b) in x.values().iter().zip(x_recon.values()) {
        let err = (a - b).abs();
        max_abs_err = max_abs_err.max(err);
        if !(err <= eps + 4.0 * ulp(a.abs().max(eps))) {
            pass = false;
        }
    }
    Ok(MaaeReport { max_abs_err, pass })
}

fn ulp(v: f64) -> f64 {
    let next = f64::from_bits(v.to_bits() + 1);
    next - v
}
