//! Benchmark tables: method x dataset -> ratio, error, wall time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::btae::ModelConfig;
use crate::compressor::{ca_report, compress, quantize_only, CompressOptions, TrainConfig};
use crate::data::{load_series, synthesize_polynomial, SeriesFormat, SyntheticSpec, TimeSeries};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DeepDict,
    Ca,
    QuantizeOnly,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DeepDict => "deepdict",
            Self::Ca => "ca",
            Self::QuantizeOnly => "quantize-only",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "deepdict" => Ok(Self::DeepDict),
            "ca" => Ok(Self::Ca),
            "quantize-only" => Ok(Self::QuantizeOnly),
            other => Err(Error::arg(format!("unknown method {other:?}"))),
        }
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let methods = s
        .split(',')
        .filter(|m| !m.trim().is_empty())
        .map(Method::from_str)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(Error::arg("no methods given"));
    }
    Ok(methods)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Suite {
    /// One synthetic polynomial dataset derived from the seed.
    Synth,
    /// Every `.csv` and `.f32` file in a directory.
    Dir(PathBuf),
}

impl Suite {
    pub fn parse(s: &str) -> Self {
        if s == "synth" {
            Self::Synth
        } else {
            Self::Dir(PathBuf::from(s))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub suite: Suite,
    pub eps: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub options: CompressOptions,
}

/// One table cell; `error` is set when the method failed on the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: String,
    pub dataset: String,
    pub ratio: Option<f64>,
    pub max_abs_err: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl BenchCell {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

pub fn synth_dataset(seed: u64) -> Result<TimeSeries> {
    let mut s = synthesize_polynomial(&SyntheticSpec {
        l_total: 16_384,
        d: 2,
        seed,
        ..SyntheticSpec::default()
    })?;
    s.name = "synthetic".into();
    Ok(s)
}

fn dir_datasets(dir: &Path) -> Result<Vec<Result<TimeSeries>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "f32")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::arg(format!(
            "no .csv or .f32 files in {}",
            dir.display()
        )));
    }
    Ok(paths
        .iter()
        .map(|p| {
            let mut s = load_series(p, SeriesFormat::from_path(p))?;
            s.name = p
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(s)
        })
        .collect())
}

fn run_cell(method: Method, series: &TimeSeries, cfg: &BenchConfig) -> BenchCell {
    let start = Instant::now();
    let result = match method {
        Method::DeepDict => {
            let model = ModelConfig {
                seed: cfg.seed,
                ..cfg.model.clone()
            };
            let train = TrainConfig {
                seed: cfg.seed,
                ..cfg.train.clone()
            };
            compress(series, cfg.eps, &model, &train, &cfg.options).map(|c| c.report)
        }
        Method::Ca => ca_report(series, cfg.eps).map(|(_, r)| r),
        Method::QuantizeOnly => quantize_only(series, cfg.eps).map(|c| c.report),
    };
    let wall_time_s = start.elapsed().as_secs_f64();
    let (ratio, max_abs_err, error) = match result {
        Ok(r) => (Some(r.ratio), Some(r.max_abs_err), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    BenchCell {
        method: method.as_str().into(),
        dataset: series.name.clone(),
        ratio,
        max_abs_err,
        wall_time_s,
        error,
    }
}

/// Runs every method on every dataset. Unreadable datasets become failed
/// cells rather than aborting the run.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchCell>> {
    let datasets = match &cfg.suite {
        Suite::Synth => vec![synth_dataset(cfg.seed)],
        Suite::Dir(dir) => dir_datasets(dir)?,
    };
    let mut cells = Vec::new();
    for (i, ds) in datasets.into_iter().enumerate() {
        match ds {
            Ok(series) => {
                for &m in &cfg.methods {
                    cells.push(run_cell(m, &series, cfg));
                }
            }
            Err(e) => {
                for &m in &cfg.methods {
                    cells.push(BenchCell {
                        method: m.as_str().into(),
                        dataset: format!("dataset{i}"),
                        ratio: None,
                        max_abs_err: None,
                        wall_time_s: 0.0,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn status(c: &BenchCell) -> String {
    match &c.error {
        None => "ok".into(),
        Some(e) => format!("error: {}", e.replace([',', '\n', '|'], " ")),
    }
}

pub fn to_csv(cells: &[BenchCell]) -> String {
    let mut out = String::from("method,dataset,ratio,max_abs_err,wall_time_s,status\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{}",
            c.method,
            c.dataset,
            fmt_opt(c.ratio),
            fmt_opt(c.max_abs_err),
            c.wall_time_s,
            status(c)
        );
    }
    out
}

pub fn to_markdown(cells: &[BenchCell]) -> String {
    let mut out =
        String::from("| method | dataset | ratio | max_abs_err | wall_time_s | status |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for c in cells {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3} | {} |",
            c.method,
            c.dataset,
            c.ratio.map_or_else(String::new, |r| format!("{r:.3}")),
            c.max_abs_err
                .map_or_else(String::new, |e| format!("{e:.6}")),
            c.wall_time_s,
            status(c)
        );
    }
    out
}
