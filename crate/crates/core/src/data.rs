//! Time-series ingestion, synthesis, windowing and channel flattening.
//!
//! Samples are stored row-major: `values[t * d + c]` is channel `c` at
//! timestamp `t`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Magic bytes of the raw float32 format.
pub const F32LE_MAGIC: &[u8; 4] = b"DDTS";
pub const F32LE_VERSION: u16 = 1;
pub const F32LE_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    d: usize,
    pub name: String,
}

impl TimeSeries {
    /// Builds a series from row-major samples, rejecting non-finite values.
    pub fn new(values: Vec<f64>, d: usize, name: impl Into<String>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation("channel count d must be >= 1".into()));
        }
        if values.is_empty() {
            return Err(Error::Validation(
                "series must hold at least one sample".into(),
            ));
        }
        if !values.len().is_multiple_of(d) {
            return Err(Error::Validation(format!(
                "{} values do not divide into {d} channels",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at index {i} (row {}, column {})",
                values[i],
                i / d,
                i % d
            )));
        }
        Ok(Self {
            values,
            d,
            name: name.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l_total(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.d..(t + 1) * self.d]
    }

    /// Single channel as a contiguous vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.d)
            .copied()
            .collect()
    }

    /// Size in bytes of the series stored as float32, the reference for ratios.
    pub fn float32_bytes(&self) -> u64 {
        self.values.len() as u64 * 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFormat {
    Csv,
    F32Le,
}

impl SeriesFormat {
    /// Guesses the format from the file extension; anything but `.csv`/`.txt` is raw.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("txt") => SeriesFormat::Csv,
            _ => SeriesFormat::F32Le,
        }
    }
}

pub fn load_series(path: &Path, format: SeriesFormat) -> Result<TimeSeries> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        SeriesFormat::Csv => {
            let text = fs::read_to_string(path)?;
            parse_csv(&text, name)
        }
        SeriesFormat::F32Le => {
            let bytes = fs::read(path)?;
            parse_f32le(&bytes, name)
        }
    }
}

pub fn save_series(series: &TimeSeries, path: &Path, format: SeriesFormat) -> Result<()> {
    let bytes = match format {
        SeriesFormat::Csv => to_csv(series).into_bytes(),
        SeriesFormat::F32Le => to_f32le(series),
    };
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Parses one row per timestamp with comma-separated numeric columns.
/// Blank lines are skipped; every row must have the same column count.
pub fn parse_csv(text: &str, name: impl Into<String>) -> Result<TimeSeries> {
    let mut values = Vec::new();
    let mut d = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = 0;
        for field in line.split(',') {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                location: format!("line {}", lineno + 1),
                message: format!("not a number: {field:?}"),
            })?;
            values.push(v);
            cols += 1;
        }
        match d {
            None => d = Some(cols),
            Some(d) if d != cols => {
                return Err(Error::Parse {
                    location: format!("line {}", lineno + 1),
                    message: format!("expected {d} columns, found {cols}"),
                })
            }
            _ => {}
        }
    }
    let d = d.ok_or_else(|| Error::Parse {
        location: "line 1".into(),
        message: "no data rows".into(),
    })?;
    TimeSeries::new(values, d, name)
}

pub fn to_csv(series: &TimeSeries) -> String {
    let mut out = String::with_capacity(series.values.len() * 12);
    for t in 0..series.l_total() {
        for (c, v) in series.row(t).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            // Display for f64 prints the shortest representation that round-trips.
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Header: magic `DDTS` | version u16 | d u16 | l_total u64, all little-endian,
/// followed by `l_total * d` float32 values row-major.
pub fn parse_f32le(bytes: &[u8], name: impl Into<String>) -> Result<TimeSeries> {
    let err = |offset: usize, message: String| Error::Parse {
        location: format!("byte {offset}"),
        message,
    };
    if bytes.len() < F32LE_HEADER_LEN {
        return Err(err(bytes.len(), "truncated header".into()));
    }
    if &bytes[0..4] != F32LE_MAGIC {
        return Err(err(0, "bad magic, expected \"DDTS\"".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != F32LE_VERSION {
        return Err(Error::Version {
            what: "f32le series",
            found: version,
            expected: F32LE_VERSION,
        });
    }
    let d = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let l_total = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let n = (l_total as usize)
        .checked_mul(d)
        .ok_or_else(|| err(8, "l_total * d overflows".into()))?;
    let expected = F32LE_HEADER_LEN + n * 4;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!(
                "expected {expected} bytes for {l_total} x {d} samples, found {}",
                bytes.len()
            ),
        ));
    }
    let values = bytes[F32LE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    TimeSeries::new(values, d, name)
}

pub fn to_f32le(series: &TimeSeries) -> Vec<u8> {
    let mut out = Vec::with_capacity(F32LE_HEADER_LEN + series.values.len() * 4);
    out.extend_from_slice(F32LE_MAGIC);
    out.extend_from_slice(&F32LE_VERSION.to_le_bytes());
    out.extend_from_slice(&(series.d as u16).to_le_bytes());
    out.extend_from_slice(&(series.l_total() as u64).to_le_bytes());
    for v in &series.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parameters of the piecewise-polynomial generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub l_total: usize,
    pub d: usize,
    /// Polynomial degree `d_p`.
    pub degree: usize,
    pub t_low: f64,
    pub t_high: f64,
    /// Samples per polynomial segment.
    pub segment_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            l_total: 10_000,
            d: 1,
            degree: 3,
            t_low: -1.0,
            t_high: 1.0,
            segment_len: 128,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.l_total == 0 || self.d == 0 {
            return Err(Error::arg("l_total and d must be >= 1"));
        }
        if !(self.t_low < self.t_high) {
            return Err(Error::arg("t_low must be < t_high"));
        }
        if self.segment_len == 0 {
            return Err(Error::arg("segment_len must be >= 1"));
        }
        Ok(())
    }

    /// Evenly spaced timestamps of one segment, endpoints included.
    pub fn timestamps(&self) -> Vec<f64> {
        if self.segment_len == 1 {
            return vec![self.t_low];
        }
        let span = self.t_high - self.t_low;
        let last = (self.segment_len - 1) as f64;
        (0..self.segment_len)
            .map(|k| self.t_low + span * (k as f64) / last)
            .collect()
    }
}

/// Concatenated segments `x = (C t_p)^T`, each with a fresh coefficient
/// matrix `C` (d x (degree+1)) drawn uniform in [-1, 1].
pub fn synthesize_polynomial(spec: &SyntheticSpec) -> Result<TimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_coef = spec.d * (spec.degree + 1);
    synthesize_polynomial_with(spec, |_| {
        (0..n_coef).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    })
}

/// Same as [`synthesize_polynomial`] with coefficients supplied per segment,
/// row-major `d x (degree+1)`.
pub fn synthesize_polynomial_with<F>(
    spec: &SyntheticSpec,
    mut coefficients: F,
) -> Result<TimeSeries>
where
    F: FnMut(usize) -> Vec<f64>,
{
    spec.validate()?;
    let ts = spec.timestamps();
    let n_coef = spec.degree + 1;
    let mut values = Vec::with_capacity(spec.l_total * spec.d);
    let mut segment = 0;
    while values.len() < spec.l_total * spec.d {
        let c = coefficients(segment);
        if c.len() != spec.d * n_coef {
            return Err(Error::arg(format!(
                "coefficient matrix has {} entries, expected {}",
                c.len(),
                spec.d * n_coef
            )));
        }
        for &t in &ts {
            if values.len() == spec.l_total * spec.d {
                break;
            }
            for ch in 0..spec.d {
                // Horner evaluation of sum_k C[ch][k] t^k.
                let row = &c[ch * n_coef..(ch + 1) * n_coef];
                let v = row.iter().rev().fold(0.0, |acc, &ck| acc * t + ck);
                values.push(v);
            }
        }
        segment += 1;
    }
    TimeSeries::new(values, spec.d, format!("poly_d{}_p{}", spec.d, spec.degree))
}

/// Random walk with independent uniform steps in [-step, step] per channel.
pub fn synthesize_random_walk(
    l_total: usize,
    d: usize,
    step: f64,
    seed: u64,
) -> Result<TimeSeries> {
    if l_total == 0 || d == 0 {
        return Err(Error::arg("l_total and d must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = vec![0.0f64; d];
    let mut values = Vec::with_capacity(l_total * d);
    for _ in 0..l_total {
        for p in pos.iter_mut() {
            *p += rng.gen_range(-step..=step);
            values.push(*p);
        }
    }
    TimeSeries::new(values, d, format!("walk_d{d}"))
}

/// Full windows of `l` timestamps plus the leftover tail.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `n_windows * l * d` values, window-major then row-major.
    pub windows: Vec<f64>,
    pub n_windows: usize,
    pub l: usize,
    pub d: usize,
    /// The final `l_total mod l` rows, verbatim.
    pub tail: Vec<f64>,
}

impl WindowBatch {
    pub fn window(&self, i: usize) -> &[f64] {
        let n = self.l * self.d;
        &self.windows[i * n..(i + 1) * n]
    }

    pub fn window_len(&self) -> usize {
        self.l * self.d
    }

    /// Rebuilds the source series by concatenating windows and tail.
    pub fn concatenate(&self, name: impl Into<String>) -> Result<TimeSeries> {
        let mut values = Vec::with_capacity(self.windows.len() + self.tail.len());
        values.extend_from_slice(&self.windows);
        values.extend_from_slice(&self.tail);
        TimeSeries::new(values, self.d, name)
    }
}

pub fn window(series: &TimeSeries, l: usize) -> Result<WindowBatch> {
    if l == 0 {
        return Err(Error::arg("window length must be >= 1"));
    }
    let d = series.d;
    let n_windows = series.l_total() / l;
    let split = n_windows * l * d;
    Ok(WindowBatch {
        windows: series.values[..split].to_vec(),
        n_windows,
        l,
        d,
        tail: series.values[split..].to_vec(),
    })
}

/// Interleaves channels sample-major into one channel (`t0c0, t0c1, ...`).
pub fn flatten_multivariate(series: &TimeSeries) -> TimeSeries {
    TimeSeries {
        values: series.values.clone(),
        d: 1,
        name: series.name.clone(),
    }
}

/// Inverse of [`flatten_multivariate`].
pub fn unflatten(series: &TimeSeries, d: usize) -> Result<TimeSeries> {
    if series.d != 1 {
        return Err(Error::arg("unflatten expects a single-channel series"));
    }
    TimeSeries::new(series.values.clone(), d, series.name.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_single_column() {
        let s = parse_csv("1.0\n2.0\n3.0", "t").unwrap();
        assert_eq!(s.l_total(), 3);
        assert_eq!(s.d(), 1);
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_two_columns() {
        let s = parse_csv("1,2\n3,4", "t").unwrap();
        assert_eq!((s.l_total(), s.d()), (2, 2));
        assert_eq!(s.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_rejects_nan() {
        let err = parse_csv("1.0\nnan\n3.0", "t").unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("index 1")),
            "{err}"
        );
    }

    #[test]
    fn csv_reports_line_of_garbage() {
        let err = parse_csv("1.0\n2.0\nabc", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "line 3"));
        let err = parse_csv("1,2\n3", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "line 2"));
    }

    #[test]
    fn f32le_header_layout() {
        let s = TimeSeries::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, "x").unwrap();
        let bytes = to_f32le(&s);
        assert_eq!(&bytes[..4], b"DDTS");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(&bytes[6..8], &2u16.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(parse_f32le(&bytes, "x").unwrap(), s);
    }

    #[test]
    fn f32le_rejects_truncation_and_inf() {
        let s = TimeSeries::new(vec![1.0, 2.0], 1, "x").unwrap();
        let bytes = to_f32le(&s);
        assert!(matches!(
            parse_f32le(&bytes[..bytes.len() - 1], "x"),
            Err(Error::Parse { .. })
        ));
        let mut bad = bytes.clone();
        bad[16..20].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(parse_f32le(&bad, "x"), Err(Error::Validation(_))));
    }

    #[test]
    fn polynomial_constant_segment() {
        let spec = SyntheticSpec {
            l_total: 4,
            d: 1,
            degree: 0,
            segment_len: 4,
            ..Default::default()
        };
        let s = synthesize_polynomial_with(&spec, |_| vec![5.0]).unwrap();
        assert_eq!(s.values(), &[5.0; 4]);
    }

    #[test]
    fn polynomial_linear_segment() {
        let spec = SyntheticSpec {
            l_total: 3,
            d: 1,
            degree: 1,
            t_low: 0.0,
            t_high: 1.0,
            segment_len: 3,
            seed: 0,
        };
        let s = synthesize_polynomial_with(&spec, |_| vec![0.0, 1.0]).unwrap();
        assert_eq!(s.values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn polynomial_is_seed_deterministic() {
        let spec = SyntheticSpec {
            l_total: 1000,
            d: 3,
            seed: 42,
            ..Default::default()
        };
        let a = synthesize_polynomial(&spec).unwrap();
        let b = synthesize_polynomial(&spec).unwrap();
        assert_eq!(a.values(), b.values());
        let other = synthesize_polynomial(&SyntheticSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.values(), other.values());
    }

    #[test]
    fn synthetic_spec_validation() {
        let bad = SyntheticSpec {
            t_low: 1.0,
            t_high: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticSpec {
            segment_len: 0,
            ..Default::default()
        };
        assert!(synthesize_polynomial(&bad).is_err());
    }

    #[test]
    fn window_counts() {
        let s = TimeSeries::new((0..10).map(f64::from).collect(), 1, "x").unwrap();
        let w = window(&s, 4).unwrap();
        assert_eq!((w.n_windows, w.tail.len()), (2, 2));
        let s8 = TimeSeries::new((0..8).map(f64::from).collect(), 1, "x").unwrap();
        let w = window(&s8, 4).unwrap();
        assert_eq!((w.n_windows, w.tail.len()), (2, 0));
        let s3 = TimeSeries::new((0..3).map(f64::from).collect(), 1, "x").unwrap();
        let w = window(&s3, 4).unwrap();
        assert_eq!((w.n_windows, w.tail.len()), (0, 3));
        assert!(window(&s3, 0).is_err());
    }

    #[test]
    fn flatten_interleaves_sample_major() {
        let s = TimeSeries::new(vec![1.0, 2.0, 3.0, 4.0], 2, "x").unwrap();
        let f = flatten_multivariate(&s);
        assert_eq!((f.l_total(), f.d()), (4, 1));
        assert_eq!(f.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unflatten(&f, 2).unwrap(), s);
        let u = TimeSeries::new(vec![7.0, 8.0], 1, "u").unwrap();
        assert_eq!(flatten_multivariate(&u), u);
    }
}
