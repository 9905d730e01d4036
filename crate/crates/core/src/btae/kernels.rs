//! Single-precision building blocks with hand-written backward passes.
//!
//! Every reduction runs in a fixed order and no fused multiply-add is used,
//! so a given binary produces bit-identical results on every call. Transcend-
//! entals come from `libm` rather than the platform C library.

use super::params::Linear;

const LN_EPS: f32 = 1e-5;

/// Dot product with four interleaved accumulators combined in a fixed order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f32, x: &[f32], y: &mut [f32]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y[rows x out] = x[rows x in] W + b`
pub fn linear_forward(p: &[f32], lin: &Linear, x: &[f32], rows: usize, y: &mut [f32]) {
    let (n_in, n_out) = (lin.n_in, lin.n_out);
    debug_assert_eq!(x.len(), rows * n_in);
    debug_assert_eq!(y.len(), rows * n_out);
    let w = &p[lin.w..lin.w + n_in * n_out];
    let b = &p[lin.b..lin.b + n_out];
    for r in 0..rows {
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        yr.copy_from_slice(b);
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (i, &a) in xr.iter().enumerate() {
            axpy(a, &w[i * n_out..(i + 1) * n_out], yr);
        }
    }
}

/// Accumulates weight/bias gradients into `g` and, if requested, writes the
/// input gradient into `dx`.
pub fn linear_backward(
    p: &[f32],
    lin: &Linear,
    x: &[f32],
    dy: &[f32],
    rows: usize,
    dx: Option<&mut [f32]>,
    g: &mut [f32],
) {
    let (n_in, n_out) = (lin.n_in, lin.n_out);
    {
        let gw = &mut g[lin.w..lin.w + n_in * n_out];
        for r in 0..rows {
            let xr = &x[r * n_in..(r + 1) * n_in];
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            for (i, &a) in xr.iter().enumerate() {
                axpy(a, dyr, &mut gw[i * n_out..(i + 1) * n_out]);
            }
        }
    }
    {
        let gb = &mut g[lin.b..lin.b + n_out];
        for r in 0..rows {
            axpy(1.0, &dy[r * n_out..(r + 1) * n_out], gb);
        }
    }
    if let Some(dx) = dx {
        let w = &p[lin.w..lin.w + n_in * n_out];
        for r in 0..rows {
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for (i, d) in dxr.iter_mut().enumerate() {
                *d = dot(dyr, &w[i * n_out..(i + 1) * n_out]);
            }
        }
    }
}

const FRAC_1_SQRT_2: f32 = std::f32::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f32 = 0.398_942_3;

/// GeLU in its erf form, `x * Phi(x)`.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    cdf + x * INV_SQRT_2PI * exp(-0.5 * x * x)
}

pub fn gelu_inplace(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = gelu(*v));
}

/// `dx = dy * gelu'(pre)`, in place on `dy`.
pub fn gelu_backward(pre: &[f32], dy: &mut [f32]) {
    for (d, &x) in dy.iter_mut().zip(pre) {
        *d *= gelu_grad(x);
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

#[inline]
pub fn tanh(x: f32) -> f32 {
    libm::tanhf(x)
}

/// Row-wise layer norm. Returns the normalized rows (before gain/bias) and
/// reciprocal standard deviations needed by the backward pass.
pub fn layer_norm_forward(
    p: &[f32],
    gain: usize,
    bias: usize,
    x: &[f32],
    width: usize,
    y: &mut [f32],
    xhat: &mut [f32],
    rstd: &mut [f32],
) {
    let gamma = &p[gain..gain + width];
    let beta = &p[bias..bias + width];
    let inv_w = 1.0 / width as f32;
    for (r, rs) in rstd.iter_mut().enumerate() {
        let xr = &x[r * width..(r + 1) * width];
        let mean = xr.iter().sum::<f32>() * inv_w;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() * inv_w;
        let s = 1.0 / (var + LN_EPS).sqrt();
        *rs = s;
        let xh = &mut xhat[r * width..(r + 1) * width];
        let yr = &mut y[r * width..(r + 1) * width];
        for k in 0..width {
            xh[k] = (xr[k] - mean) * s;
            yr[k] = xh[k] * gamma[k] + beta[k];
        }
    }
}

pub fn layer_norm_backward(
    p: &[f32],
    gain: usize,
    bias: usize,
    xhat: &[f32],
    rstd: &[f32],
    dy: &[f32],
    width: usize,
    dx: &mut [f32],
    g: &mut [f32],
) {
    let inv_w = 1.0 / width as f32;
    for (r, &s) in rstd.iter().enumerate() {
        let xh = &xhat[r * width..(r + 1) * width];
        let dyr = &dy[r * width..(r + 1) * width];
        let mut sum_d = 0.0f32;
        let mut sum_dx = 0.0f32;
        for k in 0..width {
            let dxh = dyr[k] * p[gain + k];
            sum_d += dxh;
            sum_dx += dxh * xh[k];
            g[gain + k] += dyr[k] * xh[k];
            g[bias + k] += dyr[k];
        }
        let mean_d = sum_d * inv_w;
        let mean_dx = sum_dx * inv_w;
        let dxr = &mut dx[r * width..(r + 1) * width];
        for k in 0..width {
            let dxh = dyr[k] * p[gain + k];
            dxr[k] = s * (dxh - mean_d - xh[k] * mean_dx);
        }
    }
}

const LOG2E: f32 = std::f32::consts::LOG2_E;
const LN2_HI: f32 = 0.693_145_75;
const LN2_LO: f32 = 1.428_606_8e-6;
/// Adding and subtracting 1.5 * 2^23 rounds to the nearest integer.
const ROUND_MAGIC: f32 = 12_582_912.0;

/// `e^x` from basic IEEE operations only: Cody-Waite reduction to
/// `|r| <= ln2 / 2`, a degree-6 Taylor polynomial and an exponent splice.
/// Relative error stays below 4e-7 on `[-87, 88]`; inputs are clamped there.
#[inline]
pub fn exp(x: f32) -> f32 {
    let x = x.clamp(-87.0, 88.0);
    let shifted = x * LOG2E + ROUND_MAGIC;
    let n = shifted - ROUND_MAGIC;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    // The low mantissa bits of `shifted` hold n; integer ops keep this vectorizable.
    let e = shifted
        .to_bits()
        .wrapping_sub(ROUND_MAGIC.to_bits())
        .wrapping_add(127)
        << 23;
    p * f32::from_bits(e)
}

/// Error function from a Chebyshev fit of `erfc` (fractional error
/// below 1.2e-7), branch-free so loops over it vectorize.
#[inline]
pub fn erf(x: f32) -> f32 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -1.265_512_2
        + t * (1.000_023_7
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_204
                                + t * (1.488_515_9 + t * (-0.822_152_2 + t * 0.170_872_77))))))));
    let erfc = t * exp(-z * z + poly);
    (1.0 - erfc).copysign(x)
}

/// Sum with four interleaved accumulators combined in a fixed order.
#[inline]
pub fn sum(a: &[f32]) -> f32 {
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i];
        acc[1] += a[i + 1];
        acc[2] += a[i + 2];
        acc[3] += a[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for &v in &a[chunks * 4..] {
        s += v;
    }
    s
}

#[inline]
fn max(a: &[f32]) -> f32 {
    let mut acc = [f32::NEG_INFINITY; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            let v = a[c * 4 + k];
            acc[k] = if v > acc[k] { v } else { acc[k] };
        }
    }
    let mut m = acc
        .into_iter()
        .fold(f32::NEG_INFINITY, |m, v| if v > m { v } else { m });
    for &v in &a[chunks * 4..] {
        m = if v > m { v } else { m };
    }
    m
}

/// In-place numerically stable softmax of one row.
pub fn softmax_row(row: &mut [f32]) {
    let m = max(row);
    for v in row.iter_mut() {
        *v = exp(*v - m);
    }
    let inv = 1.0 / sum(row);
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Gradient through a softmax row: `ds = a * (da - <da, a>)`, in place on `da`.
pub fn softmax_row_backward(a: &[f32], da: &mut [f32]) {
    let inner = dot(a, da);
    for (d, &ai) in da.iter_mut().zip(a) {
        *d = ai * (*d - inner);
    }
}
