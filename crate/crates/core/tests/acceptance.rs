//! Acceptance run: one PASS/FAIL line per criterion. A FAIL is reported, not
//! fatal, unless `ACCEPTANCE_STRICT=1`, which turns any FAIL into exit status
//! 1. A panic inside a criterion always fails the run. Criteria run in order;
//! `ACCEPTANCE_ONLY=3,6` restricts the run to a subset.

use std::process::Command;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepdict::btae::params::ParamGroup;
use deepdict::btae::positional::build_positional;
use deepdict::btae::{binarize, DecoderKind, ModelConfig, RpeMode};
use deepdict::compressor::{
    ca_report, compress, decompress, quantize_only, transfer_compress, CompressOptions, Container,
    LossKind, Mode, TrainConfig,
};
use deepdict::data::{synthesize_polynomial, synthesize_random_walk, SyntheticSpec, TimeSeries};
use deepdict::entropy::{
    decode_symbols, encode_symbols, entropy_bound_bits, sequence_bound_bits, EntropyModel,
};
use deepdict::qel::{qel_backward, qel_forward, surrogate_kernel, QelParams};
use deepdict::quantizer::quantize;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_abs_err(a: &TimeSeries, b: &TimeSeries) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn round_trip(container_bytes: &[u8]) -> TimeSeries {
    decompress(&Container::from_bytes(container_bytes).expect("container parses"))
        .expect("decompresses")
}

// 1. Hard error bound over randomized inputs, trained and untrained.
fn error_bound() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0_0D);
    let mut violations = 0;
    let mut worst = 0.0f64;
    let n_cases = 100;
    for case in 0..n_cases {
        let d = rng.gen_range(1..=5);
        let l_total = rng.gen_range(1_000..=50_000);
        let eps = [0.01, 0.1, 1.0][rng.gen_range(0..3)];
        let seed = rng.gen::<u64>();
        let series = if rng.gen_bool(0.5) {
            synthesize_random_walk(l_total, d, rng.gen_range(0.01..1.0), seed).unwrap()
        } else {
            synthesize_polynomial(&SyntheticSpec {
                l_total,
                d,
                degree: rng.gen_range(1..=5),
                segment_len: rng.gen_range(16..=512),
                seed,
                ..SyntheticSpec::default()
            })
            .unwrap()
        };
        let kind = [DecoderKind::Transformer, DecoderKind::Ffn, DecoderKind::Rnn][case % 3];
        let rpe = [RpeMode::Off, RpeMode::Literal, RpeMode::Learned][rng.gen_range(0..3)];
        let model = ModelConfig {
            l: [32, 64, 128][rng.gen_range(0..3)],
            decoder_kind: kind,
            rpe,
            seed,
            ..ModelConfig::default()
        };
        // Even cases run untrained models; odd cases take a short training pass.
        let train = TrainConfig {
            max_epochs: if case % 2 == 0 { 0 } else { 1 },
            windows_per_epoch: Some(64),
            loss: [LossKind::Qel, LossKind::L1, LossKind::L2][rng.gen_range(0..3)],
            lr: 1e-3,
            seed,
            ..TrainConfig::default()
        };
        let opts = CompressOptions {
            mode: if rng.gen_bool(0.3) {
                Mode::Uni
            } else {
                Mode::Multi
            },
            prescale: rng.gen_bool(0.5),
        };
        let out = match compress(&series, eps, &model, &train, &opts) {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("case {case} failed to compress: {e}")),
        };
        let err = max_abs_err(&series, &round_trip(&out.bytes));
        worst = worst.max(err / eps);
        if err > eps {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        violations == 0 && secs <= 600.0,
        format!("{n_cases} cases, {violations} violations, worst err/eps {worst:.4}, {secs:.0}s (limit 600s)"),
    )
}

fn zipf_sampler(n: usize, s: f64) -> impl Fn(&mut ChaCha8Rng) -> i64 {
    let mut cdf: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-s)).collect();
    let mut acc = 0.0;
    for v in cdf.iter_mut() {
        acc += *v;
        *v = acc;
    }
    move |rng| {
        let u = rng.gen::<f64>() * acc;
        cdf.partition_point(|&c| c < u).min(n - 1) as i64 + 1
    }
}

// 2. Codec identity and closeness to the entropy bound.
fn codec() -> Outcome {
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let zipf = zipf_sampler(1000, 1.1);
    let uniform = Uniform::new_inclusive(-500i64, 500);
    let streams: Vec<(&str, Vec<i64>)> = vec![
        (
            "uniform",
            (0..n).map(|_| uniform.sample(&mut rng)).collect(),
        ),
        (
            "geometric",
            (0..n)
                .map(|_| {
                    let mut k = 0;
                    while rng.gen_bool(0.7) {
                        k += 1;
                    }
                    if rng.gen_bool(0.5) {
                        k
                    } else {
                        -k
                    }
                })
                .collect(),
        ),
        ("zipf", (0..n).map(|_| zipf(&mut rng)).collect()),
        ("constant", vec![7; n]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, k) in &streams {
        let enc = encode_symbols(k);
        let identity = decode_symbols(&enc).map(|d| &d == k).unwrap_or(false);
        let bound = sequence_bound_bits(k) + 0.0;
        let bits = enc.payload_bits() as f64;
        let ok = identity && bits <= 1.02 * bound + 512.0;
        pass &= ok;
        parts.push(format!(
            "{name}: payload {bits:.0} bits vs bound {bound:.0} (limit {:.0}){}",
            1.02 * bound + 512.0,
            if identity { "" } else { " DECODE MISMATCH" }
        ));
    }
    outcome(pass, parts.join("; "))
}

/// Direct evaluation of R(d) = (b / (n eps^b)) d^(b-1) / (d^b / eps^b + 1)^2.
fn r_oracle(d: f64, eps: f64, b: i32, n: usize) -> f64 {
    (b as f64 / (n as f64 * eps.powi(b))) * d.powi(b - 1) / (d.powi(b) / eps.powi(b) + 1.0).powi(2)
}

fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(scale)
    }
}

// 3. QEL gradient against the closed form.
fn qel_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        // Even b: the closed form's d^b is then |d|^b, its intended reading.
        let b = 2 * rng.gen_range(1..=6);
        let eps = 10f64.powf(rng.gen_range(-6.0..3.0));
        let n = rng.gen_range(1..=10_000);
        let d = rng.gen_range(-20.0..20.0) * eps;
        let got = surrogate_kernel(d, eps, b as u32, n);
        let want = r_oracle(d, eps, b, n);
        worst = worst.max(rel_err(got, want, f64::MIN_POSITIVE));
    }
    // Full gradients: sum over symbols of (1 + ln p) R(r - s).
    let mut worst_vec = 0.0f64;
    for trial in 0..200 {
        let n = rng.gen_range(2..=300);
        let eps = [0.01, 0.1, 1.0][trial % 3];
        let b = 2 * rng.gen_range(1..=6);
        let r: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-1.0..1.0) * 20.0 * eps)
            .collect();
        let got = qel_backward(&r, &QelParams::new(eps, b as u32)).unwrap();
        let k: Vec<i64> = r.iter().map(|v| (v / (2.0 * eps)).round() as i64).collect();
        let m = EntropyModel::from_symbols(&k);
        for (i, &ri) in r.iter().enumerate() {
            let mut want = 0.0;
            let mut scale = 0.0;
            for (j, &s) in m.symbols.iter().enumerate() {
                let p = m.counts[j] as f64 / n as f64;
                let term = (1.0 + p.ln()) * r_oracle(ri - 2.0 * eps * s as f64, eps, b, n);
                want += term;
                scale += term.abs();
            }
            worst_vec = worst_vec.max(rel_err(got[i], want, scale));
        }
    }
    let (eps, b, n) = (0.1, 10u32, 100);
    let at_zero = surrogate_kernel(0.0, eps, b, n);
    let at_eps = surrogate_kernel(eps, eps, b, n);
    let closed = b as f64 / (4.0 * n as f64 * eps);
    let spot = at_zero == 0.0 && rel_err(at_eps, closed, 0.0) <= 1e-12;
    outcome(
        worst <= 1e-9 && worst_vec <= 1e-9 && spot,
        format!(
            "kernel max rel err {worst:.2e} over 10^4 tuples, gradient max rel err {worst_vec:.2e}, R(0)={at_zero}, R(eps)={at_eps} vs b/(4|r|eps)={closed}"
        ),
    )
}

// 4. One bounded step along the QEL gradient lowers the entropy.
fn qel_descent() -> Outcome {
    let params = QelParams::new(0.1, 10);
    let mut reduced = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = qel_backward(&r, &params).unwrap();
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            continue;
        }
        let eta = 0.5 * params.eps / gmax;
        let stepped: Vec<f64> = r.iter().zip(&g).map(|(ri, gi)| ri - eta * gi).collect();
        if qel_forward(&stepped, &params).unwrap() < qel_forward(&r, &params).unwrap() {
            reduced += 1;
        }
    }
    outcome(
        reduced >= 95,
        format!("{reduced}/100 trials reduced H (need 95)"),
    )
}

// 5. Ordering on a 2e5 x 5 polynomial series at eps 0.1.
fn table_trend() -> Outcome {
    let start = Instant::now();
    let eps = 0.1;
    let series = synthesize_polynomial(&SyntheticSpec {
        l_total: 200_000,
        d: 5,
        seed: 5,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let ca = ca_report(&series, eps).unwrap().1.ratio;
    let floor = quantize_only(&series, eps).unwrap().report.ratio;
    let opts = CompressOptions {
        mode: Mode::Uni,
        prescale: false,
    };
    // Default optimizer settings. The FFN decoder converges within the time
    // limit on one core; the transformer needs far more epochs than fit.
    let model = ModelConfig {
        decoder_kind: DecoderKind::Ffn,
        ..ModelConfig::default()
    };
    let run = |loss| {
        let train = TrainConfig {
            loss,
            max_epochs: 300,
            ..TrainConfig::default()
        };
        compress(&series, eps, &model, &train, &opts).map(|c| c.report)
    };
    let (qel, l1) = match (run(LossKind::Qel), run(LossKind::L1)) {
        (Ok(q), Ok(l)) => (q, l),
        (q, l) => {
            return outcome(
                false,
                format!("training failed: {:?} / {:?}", q.err(), l.err()),
            )
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let pass = qel.ratio >= l1.ratio && l1.ratio > ca && l1.ratio > floor && secs <= 1800.0;
    outcome(
        pass,
        format!(
            "QEL {:.3} (best epoch {}), L1 {:.3} (best epoch {}), CA {ca:.3}, quantize-only {floor:.3}, {secs:.0}s (limit 1800s)",
            qel.ratio, qel.best_epoch, l1.ratio, l1.best_epoch
        ),
    )
}

// 6. Unit equalities.
fn unit_equalities() -> Outcome {
    let pe = build_positional(3, 8).unwrap();
    let rpe_ok = pe.rpe == [0.0, 1.0, 2.0, -1.0, 0.0, 1.0, -2.0, -1.0, 0.0];
    let ape_ok = pe.ape_row(0) == [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let bin_ok = binarize(&[0.0, -0.3]) == [1, -1];
    let q = quantize(&[0.37], 0.1).unwrap();
    let q_ok = (q.r_q[0] - 0.4).abs() < 1e-12 && q.k[0] == 2;
    let bound = entropy_bound_bits(&EntropyModel::from_symbols(&[0, 0, 0, 1])).unwrap();
    let exact = 2.0 + 3.0 * (4.0f64 / 3.0).log2();
    let bound_ok = (bound - exact).abs() <= 1e-9 && (bound - 3.245).abs() < 5e-4;
    outcome(
        rpe_ok && ape_ok && bin_ok && q_ok && bound_ok,
        format!(
            "rpe(3) {rpe_ok}, ape row 0 {ape_ok}, binarize {bin_ok}, quantize(0.37,0.1)->{} {q_ok}, bound {{a:3,b:1}}={bound:.9} {bound_ok}",
            q.r_q[0]
        ),
    )
}

// 7. Two processes, same inputs: identical containers and reconstructions.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_deepdict");
    let input = dir.path().join("x.csv");
    let run = |args: &[&str]| {
        Command::new(bin)
            .args(args)
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    };
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let synth_ok = run(&[
        "synth",
        &p("x.csv"),
        "--length",
        "6000",
        "--dims",
        "3",
        "--seed",
        "9",
    ]);
    let common = [
        "--eps", "0.05", "--window", "64", "--epochs", "3", "--batch", "16", "--lr", "1e-3",
        "--seed", "21",
    ];
    let mut ok = synth_ok && input.exists();
    for name in ["a.ddc", "b.ddc"] {
        let mut args = vec!["compress", input.to_str().unwrap(), &p(name)]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        args.extend(common.iter().map(|s| s.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ok &= run(&args);
    }
    ok &= run(&["decompress", &p("a.ddc"), &p("a.csv")]);
    ok &= run(&["decompress", &p("b.ddc"), &p("b.csv")]);
    if !ok {
        return outcome(false, "a CLI step failed");
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    let same_container = read("a.ddc") == read("b.ddc");
    let same_output = read("a.csv") == read("b.csv");
    outcome(
        same_container && same_output,
        format!(
            "containers identical {same_container} ({} bytes), decompressed bytes identical {same_output}",
            read("a.ddc").len()
        ),
    )
}

// 8. Transfer keeps the frozen core and converges sooner.
fn transfer() -> Outcome {
    let eps = 0.1;
    let model = ModelConfig {
        l: 64,
        latent_bits: 16,
        ..ModelConfig::default()
    };
    let train = |seed| TrainConfig {
        lr: 1e-3,
        batch_size: 16,
        max_epochs: 40,
        patience: 3,
        seed,
        ..TrainConfig::default()
    };
    let opts = CompressOptions::default();
    let poly = |d, seed| {
        synthesize_polynomial(&SyntheticSpec {
            l_total: 8192,
            d,
            segment_len: 64,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
    };
    // Trend: a univariate model reused whole on a second univariate series.
    // Freeze: a 1-channel core moved under a 3-channel encoder and head.
    let source = poly(1, 100);
    let target_uni = poly(1, 200);
    let target_multi = poly(3, 200);
    let mut frozen_ok = true;
    let (mut transfer_epochs, mut scratch_epochs) = (Vec::new(), Vec::new());
    let (mut frozen_epochs, mut frozen_scratch_epochs) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let cfg = ModelConfig {
            seed,
            ..model.clone()
        };
        let pre = compress(&source, eps, &cfg, &train(seed), &opts)
            .unwrap()
            .model
            .unwrap();

        let moved = transfer_compress(&target_uni, &pre, eps, &train(seed), &opts, None).unwrap();
        transfer_epochs.push(moved.report.best_epoch);
        let scratch = compress(&target_uni, eps, &cfg, &train(seed), &opts).unwrap();
        scratch_epochs.push(scratch.report.best_epoch);

        let moved = transfer_compress(&target_multi, &pre, eps, &train(seed), &opts, None).unwrap();
        let core = [ParamGroup::Lift, ParamGroup::Blocks];
        let post = moved.model.as_ref().unwrap();
        let same_bits = pre
            .params()
            .group_values(&core)
            .iter()
            .zip(post.params().group_values(&core))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        frozen_ok &= same_bits;
        frozen_epochs.push(moved.report.best_epoch);
        let scratch = compress(&target_multi, eps, &cfg, &train(seed), &opts).unwrap();
        frozen_scratch_epochs.push(scratch.report.best_epoch);
    }
    let median = |v: &[usize]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v[v.len() / 2]
    };
    let (mt, ms) = (median(&transfer_epochs), median(&scratch_epochs));
    outcome(
        frozen_ok && mt < ms,
        format!(
            "frozen core bit-identical {frozen_ok}; univariate best epoch transfer {transfer_epochs:?} (median {mt}) vs scratch {scratch_epochs:?} (median {ms}); frozen-core 1->3 channels transfer {frozen_epochs:?} (median {}) vs scratch {frozen_scratch_epochs:?} (median {})",
            median(&frozen_epochs),
            median(&frozen_scratch_epochs)
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 8] = [
        (1, "error bound", error_bound),
        (2, "codec", codec),
        (3, "QEL gradient oracle", qel_oracle),
        (4, "QEL descent", qel_descent),
        (5, "ordering QEL >= L1 > CA, quantize-only", table_trend),
        (6, "unit equalities", unit_equalities),
        (7, "cross-process determinism", determinism),
        (8, "transfer", transfer),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        println!(
            "{} criterion {id} ({name}): {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
