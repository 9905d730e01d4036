//! Critical-aperture baseline: keep a sample only when linear interpolation
//! from the previous kept sample would break the error bound.
//!
//! Kept samples are stored exactly, so endpoints carry no error. Each channel
//! becomes `count, index deltas, (tag, 16-bit chunks)` symbols in one
//! entropy-coded stream; tag 0 marks an exact single-precision value (two
//! chunks), tag 1 a double (four chunks).

use super::container::{Container, ContainerKind, CONTAINER_VERSION};
use crate::data::TimeSeries;
use crate::entropy::{decode_symbols, encode_symbols};
use crate::{Error, Result};

/// Linear interpolation between two kept samples. Decompression uses the
/// same expression.
#[inline]
fn interpolate(s: usize, vs: f64, e: usize, ve: f64, j: usize) -> f64 {
    vs + (ve - vs) * ((j - s) as f64 / (e - s) as f64)
}

/// Greedy slope-window selection of kept indices; always keeps the first
/// and last sample.
fn greedy(x: &[f64], eps: f64) -> Vec<usize> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut kept = vec![0];
    let mut s = 0;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut e = 1;
    while e < n {
        let dt = (e - s) as f64;
        let slope = (x[e] - x[s]) / dt;
        if slope < lo || slope > hi {
            s = e - 1;
            kept.push(s);
            lo = f64::NEG_INFINITY;
            hi = f64::INFINITY;
            continue;
        }
        lo = lo.max((x[e] - eps - x[s]) / dt);
        hi = hi.min((x[e] + eps - x[s]) / dt);
        e += 1;
    }
    if *kept.last().unwrap() != n - 1 {
        kept.push(n - 1);
    }
    kept
}

/// Kept indices for one channel. A verification pass re-checks every
/// segment with the decompression arithmetic and keeps any sample that
/// lands outside the bound, so `max |x - recon| <= eps` holds exactly.
pub fn ca_select(x: &[f64], eps: f64) -> Vec<usize> {
    let mut kept = greedy(x, eps);
    loop {
        let mut extra = Vec::new();
        for w in kept.windows(2) {
            let (s, e) = (w[0], w[1]);
            if let Some(j) =
                (s + 1..e).find(|&j| (x[j] - interpolate(s, x[s], e, x[e], j)).abs() > eps)
            {
                extra.push(j);
            }
        }
        if extra.is_empty() {
            return kept;
        }
        kept.extend(extra);
        kept.sort_unstable();
    }
}

/// Rebuilds `n` samples from kept `(index, value)` pairs.
pub fn ca_interpolate(idx: &[usize], vals: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if idx.is_empty() {
        return out;
    }
    out[idx[0]] = vals[0];
    for w in 0..idx.len() - 1 {
        let (s, e) = (idx[w], idx[w + 1]);
        for (j, o) in out.iter_mut().enumerate().take(e + 1).skip(s + 1) {
            *o = if j == e {
                vals[w + 1]
            } else {
                interpolate(s, vals[w], e, vals[w + 1], j)
            };
        }
    }
    out
}

fn chunk(v: u64, shift: u32) -> i64 {
    ((v >> shift) as u16 as i16) as i64
}

fn push_value(out: &mut Vec<i64>, v: f64) {
    let single = v as f32;
    if single as f64 == v || (v.is_nan() && single.is_nan()) {
        let bits = single.to_bits() as u64;
        out.extend([0, chunk(bits, 16), chunk(bits, 0)]);
    } else {
        let bits = v.to_bits();
        out.extend([
            1,
            chunk(bits, 48),
            chunk(bits, 32),
            chunk(bits, 16),
            chunk(bits, 0),
        ]);
    }
}

pub fn ca_compress(series: &TimeSeries, eps: f64) -> Result<Container> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::arg(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    if series.d() > u16::MAX as usize {
        return Err(Error::arg("too many channels for the container header"));
    }
    let mut symbols = Vec::new();
    for c in 0..series.d() {
        let x = series.channel(c);
        let kept = ca_select(&x, eps);
        symbols.push(kept.len() as i64);
        let mut prev = 0usize;
        for (i, &k) in kept.iter().enumerate() {
            if i > 0 {
                symbols.push((k - prev) as i64);
            }
            prev = k;
        }
        for &k in &kept {
            push_value(&mut symbols, x[k]);
        }
    }
    Ok(Container {
        version: CONTAINER_VERSION,
        kind: ContainerKind::CriticalAperture,
        eps,
        l: 0,
        d: series.d() as u16,
        l_total: series.l_total() as u64,
        flags: 0,
        seed: 0,
        prescale: Vec::new(),
        decoder_bytes: Vec::new(),
        latent_bytes: Vec::new(),
        residuals: encode_symbols(&symbols),
        tail: Vec::new(),
    })
}

pub fn ca_decompress(container: &Container) -> Result<TimeSeries> {
    if container.kind != ContainerKind::CriticalAperture {
        return Err(Error::decode("not a critical-aperture container"));
    }
    let symbols = decode_symbols(&container.residuals)?;
    let n = container.l_total as usize;
    let d = container.d as usize;
    let mut pos = 0usize;
    let mut next = |what: &str| -> Result<i64> {
        let v = symbols
            .get(pos)
            .copied()
            .ok_or_else(|| Error::decode(format!("CA stream ends early reading {what}")))?;
        pos += 1;
        Ok(v)
    };
    let mut values = vec![0.0; n * d];
    for c in 0..d {
        let count = next("count")?;
        if count < 0 || count as usize > n || (n > 0 && count < 2.min(n as i64)) {
            return Err(Error::decode(format!(
                "CA channel {c}: bad point count {count}"
            )));
        }
        let count = count as usize;
        let mut idx = Vec::with_capacity(count);
        let mut at = 0usize;
        for i in 0..count {
            if i > 0 {
                let delta = next("index delta")?;
                if delta < 1 {
                    return Err(Error::decode("CA index deltas must be positive"));
                }
                at += delta as usize;
            }
            idx.push(at);
        }
        if count > 0 && (idx[0] != 0 || idx[count - 1] != n - 1) {
            return Err(Error::decode(format!(
                "CA channel {c}: indices do not span the series"
            )));
        }
        let mut vals = Vec::with_capacity(count);
        for _ in 0..count {
            let tag = next("value tag")?;
            let n_chunks = match tag {
                0 => 2,
                1 => 4,
                t => return Err(Error::decode(format!("CA value tag {t}"))),
            };
            let mut bits = 0u64;
            for _ in 0..n_chunks {
                bits = (bits << 16) | (next("value")? as i16 as u16 as u64);
            }
            vals.push(if tag == 0 {
                f32::from_bits(bits as u32) as f64
            } else {
                f64::from_bits(bits)
            });
        }
        for (t, v) in ca_interpolate(&idx, &vals, n).into_iter().enumerate() {
            values[t * d + c] = v;
        }
    }
    if pos != symbols.len() {
        return Err(Error::decode("trailing symbols in CA stream"));
    }
    TimeSeries::new(values, d, "ca")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_err(x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_and_ramp_keep_two_points() {
        let c = vec![3.25; 1000];
        assert_eq!(ca_select(&c, 0.1), vec![0, 999]);
        let ramp: Vec<f64> = (0..1000).map(|i| 0.5 * i as f64 - 7.0).collect();
        assert_eq!(ca_select(&ramp, 0.1), vec![0, 999]);
    }

    #[test]
    fn step_keeps_a_point_at_the_step() {
        let eps = 0.1;
        let x: Vec<f64> = (0..1000)
            .map(|i| if i < 500 { 0.0 } else { 3.0 * eps })
            .collect();
        let kept = ca_select(&x, eps);
        assert!(kept.iter().any(|&k| (499..=500).contains(&k)), "{kept:?}");
        let vals: Vec<f64> = kept.iter().map(|&k| x[k]).collect();
        assert!(max_err(&x, &ca_interpolate(&kept, &vals, x.len())) <= eps);
    }

    #[test]
    fn container_round_trip() {
        let vals: Vec<f64> = (0..600)
            .map(|i| {
                let t = i as f64 * 0.01;
                if i % 2 == 0 {
                    t.sin()
                } else {
                    (t * 3.0).cos() as f32 as f64
                }
            })
            .collect();
        let s = TimeSeries::new(vals, 2, "s").unwrap();
        let c = ca_compress(&s, 0.01).unwrap();
        let back = ca_decompress(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert!(max_err(s.values(), back.values()) <= 0.01);
        let one = TimeSeries::new(vec![1.0], 1, "one").unwrap();
        assert_eq!(
            ca_decompress(&ca_compress(&one, 0.1).unwrap())
                .unwrap()
                .values(),
            &[1.0]
        );
    }

    proptest! {
        #[test]
        fn bound_holds_for_arbitrary_signals(
            x in prop::collection::vec(-1e3f64..1e3, 1..300),
            eps in prop::sample::select(vec![1e-6, 0.01, 0.1, 1.0, 50.0]),
        ) {
            let kept = ca_select(&x, eps);
            let vals: Vec<f64> = kept.iter().map(|&k| x[k]).collect();
            let recon = ca_interpolate(&kept, &vals, x.len());
            prop_assert!(max_err(&x, &recon) <= eps);
        }
    }
}
