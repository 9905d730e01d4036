use super::*;
use rand::Rng;

fn tiny(kind: DecoderKind, rpe: RpeMode) -> ModelConfig {
    ModelConfig {
        latent_bits: 5,
        l: 6,
        d: 2,
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 2,
        n_decoder_blocks: 2,
        ffn_hidden: 8,
        decoder_kind: kind,
        rpe,
        seed: 11,
        ..ModelConfig::default()
    }
}

fn all_tiny() -> Vec<ModelConfig> {
    vec![
        tiny(DecoderKind::Transformer, RpeMode::Off),
        tiny(DecoderKind::Transformer, RpeMode::Literal),
        tiny(DecoderKind::Transformer, RpeMode::Learned),
        tiny(DecoderKind::Ffn, RpeMode::Off),
        tiny(DecoderKind::Rnn, RpeMode::Off),
    ]
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn weighted(out: &[f32], w: &[f32]) -> f64 {
    out.iter().zip(w).map(|(a, b)| *a as f64 * *b as f64).sum()
}

/// Central difference with a relative/absolute acceptance band suited to
/// single-precision forward passes.
fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 2e-3 + 2e-2 * analytic.abs().max(numeric.abs())
}

#[test]
fn binarize_threshold_semantics() {
    assert_eq!(binarize(&[0.0, -0.3, 1e-30, -0.0]), vec![1, -1, 1, 1]);
    assert_eq!(binarize_backward(&[0.0], &[1.0]), vec![1.0]);
}

#[test]
fn surrogate_ratio_matches_tanh_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for cfg in all_tiny() {
        let model = Btae::new(cfg.clone()).unwrap();
        let mut checked = 0;
        while checked < 20 {
            let x = random_vec(&mut rng, cfg.window_len(), 2.0);
            let w = random_vec(&mut rng, cfg.window_len(), 1.0);
            let (_, cache) = model.forward(&x).unwrap();
            let mut g = vec![0.0; model.params().len()];
            let bp = model.backward(&cache, &w, &mut g, false).unwrap();
            for (i, &y) in cache.latent().y.iter().enumerate() {
                if bp.dc[i].abs() < 1e-6 {
                    continue;
                }
                let ratio = bp.dy[i] as f64 / bp.dc[i] as f64;
                let want = 1.0 - (y as f64).tanh().powi(2);
                assert!(
                    (ratio - want).abs() < 1e-4,
                    "ratio {ratio} vs {want} at y={y}"
                );
                checked += 1;
            }
        }
    }
}

#[test]
fn latent_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for cfg in all_tiny() {
        let model = Btae::new(cfg.clone()).unwrap();
        let x = random_vec(&mut rng, cfg.window_len(), 1.0);
        let w = random_vec(&mut rng, cfg.window_len(), 1.0);
        let (_, cache) = model.forward(&x).unwrap();
        let mut g = vec![0.0; model.params().len()];
        let bp = model.backward(&cache, &w, &mut g, false).unwrap();
        let c: Vec<f32> = cache.latent().c.iter().map(|&v| v as f32).collect();
        for i in 0..cfg.latent_bits {
            let h = 1e-2f32;
            let mut cp = c.clone();
            cp[i] += h;
            let up = weighted(&model.decode_relaxed(&cp).unwrap(), &w);
            cp[i] -= 2.0 * h;
            let dn = weighted(&model.decode_relaxed(&cp).unwrap(), &w);
            let fd = (up - dn) / (2.0 * h as f64);
            assert!(
                close(bp.dc[i] as f64, fd),
                "{:?} dc[{i}]: {} vs {fd}",
                cfg.decoder_kind,
                bp.dc[i]
            );
        }
    }
}

#[test]
fn decoder_parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for cfg in all_tiny() {
        let mut model = Btae::new(cfg.clone()).unwrap();
        let x = random_vec(&mut rng, cfg.window_len(), 1.0);
        let w = random_vec(&mut rng, cfg.window_len(), 1.0);
        let (_, cache) = model.forward(&x).unwrap();
        let c = cache.latent().c.clone();
        let mut g = vec![0.0; model.params().len()];
        model.backward(&cache, &w, &mut g, false).unwrap();
        let mask = model.params().group_mask(&DECODER_GROUPS);
        let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        for t in 0..60 {
            let i = idx[(t * 7919) % idx.len()];
            let h = 1e-2f32;
            let orig = model.params().values[i];
            model.params_mut().values[i] = orig + h;
            let up = weighted(&model.decode(&c).unwrap(), &w);
            model.params_mut().values[i] = orig - h;
            let dn = weighted(&model.decode(&c).unwrap(), &w);
            model.params_mut().values[i] = orig;
            let fd = (up - dn) / (2.0 * h as f64);
            let name = &model
                .params()
                .entries
                .iter()
                .find(|e| (e.offset..e.offset + e.len).contains(&i))
                .unwrap()
                .name;
            assert!(
                close(g[i] as f64, fd),
                "{:?} {name}[{i}]: {} vs {fd}",
                cfg.decoder_kind,
                g[i]
            );
        }
    }
}

#[test]
fn encoder_gradients_follow_the_surrogate_chain() {
    // With dy fixed, the encoder gradient is the exact derivative of <dy, y(theta)>.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = tiny(DecoderKind::Transformer, RpeMode::Off);
    let mut model = Btae::new(cfg.clone()).unwrap();
    let x = random_vec(&mut rng, cfg.window_len(), 1.0);
    let w = random_vec(&mut rng, cfg.window_len(), 1.0);
    let (_, cache) = model.forward(&x).unwrap();
    let mut g = vec![0.0; model.params().len()];
    let bp = model.backward(&cache, &w, &mut g, true).unwrap();
    let entry = model.params().entry("encoder.0.weight").unwrap().clone();
    for t in 0..30 {
        let i = entry.offset + (t * 13) % entry.len;
        let h = 1e-2f32;
        let orig = model.params().values[i];
        model.params_mut().values[i] = orig + h;
        let up = weighted(&model.encode(&x).unwrap().y, &bp.dy);
        model.params_mut().values[i] = orig - h;
        let dn = weighted(&model.encode(&x).unwrap().y, &bp.dy);
        model.params_mut().values[i] = orig;
        let fd = (up - dn) / (2.0 * h as f64);
        assert!(close(g[i] as f64, fd), "encoder[{i}]: {} vs {fd}", g[i]);
    }
    assert!(bp.dx.unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn input_gradient_is_finite_for_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = ModelConfig {
        l: 32,
        d: 3,
        ..ModelConfig::default()
    };
    let model = Btae::new(cfg.clone()).unwrap();
    for _ in 0..5 {
        let x = random_vec(&mut rng, cfg.window_len(), 50.0);
        let (xhat, cache) = model.forward(&x).unwrap();
        let dxhat: Vec<f32> = xhat.iter().zip(&x).map(|(p, t)| 2.0 * (p - t)).collect();
        let mut g = vec![0.0; model.params().len()];
        let bp = model.backward(&cache, &dxhat, &mut g, true).unwrap();
        assert!(bp.dx.unwrap().iter().all(|v| v.is_finite()));
        assert!(g.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for rpe in [RpeMode::Off, RpeMode::Literal, RpeMode::Learned] {
        let cfg = ModelConfig {
            l: 20,
            rpe,
            ..ModelConfig::default()
        };
        let model = Btae::new(cfg.clone()).unwrap();
        let x = random_vec(&mut rng, cfg.window_len(), 3.0);
        let (_, cache) = model.forward(&x).unwrap();
        let maps = cache.attention();
        assert_eq!(maps.len(), cfg.n_decoder_blocks);
        for m in maps {
            for row in m.chunks(cfg.l) {
                let s: f64 = row.iter().map(|&v| v as f64).sum();
                assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
            }
        }
    }
}

#[test]
fn output_shape_and_codomain_over_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kind in [DecoderKind::Transformer, DecoderKind::Ffn, DecoderKind::Rnn] {
        for (l, d, bits) in [(1, 1, 1), (7, 3, 4), (16, 2, 32)] {
            let cfg = ModelConfig {
                l,
                d,
                latent_bits: bits,
                decoder_kind: kind,
                ..ModelConfig::default()
            };
            let model = Btae::new(cfg.clone()).unwrap();
            let x = random_vec(&mut rng, l * d, 1.0);
            let code = model.encode(&x).unwrap();
            assert!(code.c.iter().all(|&v| v == 1 || v == -1));
            assert_eq!(code.c, binarize(&code.y));
            let out = model.decode(&code.c).unwrap();
            assert_eq!(out.len(), l * d);
            assert!(out.iter().all(|v| v.is_finite()));
            assert_eq!(model.decode(&code.c).unwrap(), out);
            assert!(model.decode(&code.c[1..]).is_err());
            assert!(model.encode(&x[1..]).is_err());
        }
    }
}

#[test]
fn zeroed_rpe_matrix_equals_rpe_off() {
    let off = Btae::new(ModelConfig {
        l: 24,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut on = Btae::new(ModelConfig {
        l: 24,
        rpe: RpeMode::Literal,
        ..ModelConfig::default()
    })
    .unwrap();
    assert_eq!(off.params().values, on.params().values);
    let c: Vec<i8> = (0..32).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
    let with_rpe = on.decode(&c).unwrap();
    match on.decoder_mut() {
        Decoder::Transformer(t) => t.set_rpe_matrix(vec![0.0; 24 * 24]),
        _ => unreachable!(),
    }
    assert_eq!(on.decode(&c).unwrap(), off.decode(&c).unwrap());
    assert_ne!(with_rpe, off.decode(&c).unwrap());
}

#[test]
fn config_validation() {
    let bad = [
        ModelConfig {
            d_model: 30,
            ..ModelConfig::default()
        },
        ModelConfig {
            latent_bits: 0,
            ..ModelConfig::default()
        },
        ModelConfig {
            l: 0,
            ..ModelConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(Btae::new(cfg), Err(Error::Config(_))));
    }
    assert!("gru".parse::<DecoderKind>().is_err());
    assert_eq!("rnn".parse::<DecoderKind>().unwrap(), DecoderKind::Rnn);
}

#[test]
fn decoder_serialization_is_a_half_precision_fixpoint() {
    for cfg in all_tiny() {
        let model = Btae::new(cfg.clone()).unwrap();
        let bytes = serialize_decoder(&model);
        let loaded = load_decoder(&bytes).unwrap();
        assert_eq!(loaded.config(), model.config());
        assert_eq!(serialize_decoder(&loaded), bytes);
        let half = model.half_precision();
        let c = vec![1i8, -1, -1, 1, 1];
        assert_eq!(loaded.decode(&c).unwrap(), half.decode(&c).unwrap());
        assert_eq!(bytes.len(), 49 + 2 * model.decoder_param_count());
    }
}

#[test]
fn decoder_load_rejects_bad_input() {
    let model = Btae::new(tiny(DecoderKind::Ffn, RpeMode::Off)).unwrap();
    let bytes = serialize_decoder(&model);

    let mut flipped = bytes.clone();
    flipped[60] ^= 1;
    assert!(matches!(
        load_decoder(&flipped),
        Err(Error::Checksum { .. })
    ));

    let reseal = |mut b: Vec<u8>| {
        b.truncate(b.len() - 4);
        crate::bytes::push_crc(&mut b);
        b
    };
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(
        load_decoder(&reseal(version)),
        Err(Error::Version { found: 9, .. })
    ));

    let mut count = bytes.clone();
    count[37] = count[37].wrapping_add(1);
    assert!(matches!(
        load_decoder(&reseal(count)),
        Err(Error::Config(_))
    ));

    assert!(load_decoder(&bytes[..10]).is_err());
}

#[test]
fn full_model_round_trip() {
    let model = Btae::new(tiny(DecoderKind::Transformer, RpeMode::Learned)).unwrap();
    let loaded = load_model(&save_model(&model)).unwrap();
    let x: Vec<f32> = (0..12).map(|i| i as f32 * 0.1).collect();
    assert_eq!(loaded.encode(&x).unwrap(), model.encode(&x).unwrap());
    assert_eq!(
        loaded.params().values,
        model.half_precision().params().values
    );
}
