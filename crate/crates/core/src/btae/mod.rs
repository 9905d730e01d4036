//! Binary-latent autoencoder.
//!
//! The encoder maps a flattened `l x d` window to `latent_bits` reals which
//! are thresholded to `{-1, +1}`. A decoder (transformer by default, with
//! feed-forward and gated-recurrent alternatives) maps the code back to an
//! `l x d` prediction. All math is single precision with fixed operation
//! order; see [`kernels`] for the determinism rules.

pub mod ffn;
pub mod kernels;
pub mod params;
pub mod positional;
pub mod rnn;
mod serialize;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
use ffn::{Mlp, MlpCache};
use params::{ParamBuilder, ParamGroup, ParamStore};
pub use positional::{build_positional, PositionalEncodings};
use rnn::{GruCache, GruDecoder};
pub use serialize::{load_model, save_model, DECODER_MAGIC, DECODER_VERSION, MODEL_MAGIC};
use transformer::{TransformerCache, TransformerDecoder};

/// Parameter groups that make up the decoder.
pub const DECODER_GROUPS: [ParamGroup; 3] =
    [ParamGroup::Lift, ParamGroup::Blocks, ParamGroup::Output];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Transformer,
    Ffn,
    Rnn,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Transformer => "transformer",
            Self::Ffn => "ffn",
            Self::Rnn => "rnn",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Self::Transformer),
            "ffn" => Ok(Self::Ffn),
            "rnn" => Ok(Self::Rnn),
            other => Err(Error::arg(format!("unknown decoder kind {other:?}"))),
        }
    }
}

/// Relative position term inside the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RpeMode {
    #[default]
    Off,
    /// The fixed matrix `RPE[i][j] = j - i`.
    Literal,
    /// A learned embedding per head and signed distance, dotted with the query.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_bits: usize,
    pub l: usize,
    pub d: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Hidden layers of the encoder, each `ffn_hidden` wide.
    pub n_encoder_layers: usize,
    pub n_decoder_blocks: usize,
    pub ffn_hidden: usize,
    pub activation: Activation,
    pub decoder_kind: DecoderKind,
    pub rpe: RpeMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_bits: 32,
            l: 128,
            d: 1,
            d_model: 32,
            n_heads: 8,
            n_encoder_layers: 3,
            n_decoder_blocks: 2,
            ffn_hidden: 64,
            activation: Activation::Gelu,
            decoder_kind: DecoderKind::Transformer,
            rpe: RpeMode::Off,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn use_rpe(&self) -> bool {
        self.rpe != RpeMode::Off
    }

    pub fn window_len(&self) -> usize {
        self.l * self.d
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_bits == 0 || self.latent_bits > u32::MAX as usize {
            return bad(format!(
                "latent_bits must be in 1..=2^32-1, got {}",
                self.latent_bits
            ));
        }
        if self.l == 0 || self.l > u32::MAX as usize {
            return bad(format!(
                "window length must be in 1..=2^32-1, got {}",
                self.l
            ));
        }
        let small = [
            ("d", self.d),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_hidden", self.ffn_hidden),
        ];
        for (name, v) in small {
            if v == 0 || v > u16::MAX as usize {
                return bad(format!("{name} must be in 1..=65535, got {v}"));
            }
        }
        if self.n_encoder_layers > u16::MAX as usize || self.n_decoder_blocks > u16::MAX as usize {
            return bad("layer counts must fit in 16 bits".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model must be even, got {}", self.d_model));
        }
        Ok(())
    }
}

/// Pre-threshold latent `y` and its binary code `c` (`c_i = +1 iff y_i >= 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub y: Vec<f32>,
    pub c: Vec<i8>,
}

pub fn binarize(y: &[f32]) -> Vec<i8> {
    y.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect()
}

/// Backward of [`binarize`]: `dy = dc * (1 - tanh(y)^2)`.
pub fn binarize_backward(y: &[f32], dc: &[f32]) -> Vec<f32> {
    y.iter()
        .zip(dc)
        .map(|(&v, &g)| {
            let t = kernels::tanh(v);
            g * (1.0 - t * t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Transformer(TransformerDecoder),
    Ffn(Mlp),
    Rnn(GruDecoder),
}

#[derive(Debug, Clone)]
enum DecoderCache {
    Transformer(TransformerCache),
    Ffn(MlpCache),
    Rnn(GruCache),
}

impl Decoder {
    fn build(b: &mut ParamBuilder, cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg.decoder_kind {
            DecoderKind::Transformer => {
                let pe = build_positional(cfg.l, cfg.d_model)?;
                Self::Transformer(TransformerDecoder::build(b, cfg, &pe))
            }
            DecoderKind::Ffn => {
                let h = cfg.ffn_hidden;
                Self::Ffn(Mlp {
                    layers: vec![
                        b.linear("ffn_dec.0", cfg.latent_bits, h, ParamGroup::Lift),
                        b.linear("ffn_dec.1", h, h, ParamGroup::Blocks),
                        b.linear("ffn_dec.2", h, cfg.window_len(), ParamGroup::Output),
                    ],
                })
            }
            DecoderKind::Rnn => Self::Rnn(GruDecoder::build(b, cfg)),
        })
    }

    fn forward(&self, p: &[f32], c: &[f32]) -> Vec<f32> {
        match self {
            Self::Transformer(t) => t.forward(p, c),
            Self::Ffn(m) => m.forward(p, c, 1),
            Self::Rnn(r) => r.forward(p, c),
        }
    }

    fn forward_cached(&self, p: &[f32], c: &[f32]) -> (Vec<f32>, DecoderCache) {
        match self {
            Self::Transformer(t) => {
                let (y, cache) = t.forward_cached(p, c);
                (y, DecoderCache::Transformer(cache))
            }
            Self::Ffn(m) => {
                let (y, cache) = m.forward_cached(p, c, 1);
                (y, DecoderCache::Ffn(cache))
            }
            Self::Rnn(r) => {
                let (y, cache) = r.forward_cached(p, c);
                (y, DecoderCache::Rnn(cache))
            }
        }
    }

    fn backward(&self, p: &[f32], cache: &DecoderCache, dout: &[f32], g: &mut [f32]) -> Vec<f32> {
        match (self, cache) {
            (Self::Transformer(t), DecoderCache::Transformer(c)) => t.backward(p, c, dout, g),
            (Self::Ffn(m), DecoderCache::Ffn(c)) => m.backward(p, c, dout, g, true).unwrap(),
            (Self::Rnn(r), DecoderCache::Rnn(c)) => r.backward(p, c, dout, g),
            _ => unreachable!("decoder cache of a different kind"),
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    encoder: MlpCache,
    latent: LatentCode,
    decoder: DecoderCache,
}

impl ForwardCache {
    pub fn latent(&self) -> &LatentCode {
        &self.latent
    }

    /// Attention weights per block (`n_heads x l x l` each); empty for
    /// non-transformer decoders.
    pub fn attention(&self) -> Vec<&[f32]> {
        match &self.decoder {
            DecoderCache::Transformer(t) => t.attention(),
            _ => Vec::new(),
        }
    }
}

/// Gradients of one backward pass that are not parameter gradients.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// W.r.t. the binary code.
    pub dc: Vec<f32>,
    /// W.r.t. the pre-threshold latent, through the surrogate.
    pub dy: Vec<f32>,
    /// W.r.t. the encoder input, if requested.
    pub dx: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Btae {
    config: ModelConfig,
    params: ParamStore,
    encoder: Mlp,
    decoder: Decoder,
}

impl Btae {
    /// Seeded initialization.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = ParamBuilder::new(&mut rng);
        let mut dims = vec![config.window_len()];
        dims.extend(std::iter::repeat_n(
            config.ffn_hidden,
            config.n_encoder_layers,
        ));
        dims.push(config.latent_bits);
        let encoder = Mlp::build_scaled(&mut b, "encoder", &dims, ParamGroup::Encoder);
        let decoder = Decoder::build(&mut b, &config)?;
        Ok(Self {
            params: b.finish(),
            config,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Decoder {
        &mut self.decoder
    }

    pub fn decoder_param_count(&self) -> usize {
        self.params
            .group_mask(&DECODER_GROUPS)
            .iter()
            .filter(|m| **m)
            .count()
    }

    /// Copy with every decoder parameter rounded through IEEE half precision;
    /// exactly the weights a loaded decoder sees.
    pub fn half_precision(&self) -> Btae {
        let mut out = self.clone();
        let mask = self.params.group_mask(&DECODER_GROUPS);
        for (v, m) in out.params.values.iter_mut().zip(mask) {
            if m {
                *v = half::f16::from_f32(*v).to_f32();
            }
        }
        out
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Validation(format!(
                "{what} has length {got}, model expects {want}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f32]) -> Result<LatentCode> {
        self.check_len("window", x.len(), self.config.window_len())?;
        let y = self.encoder.forward(&self.params.values, x, 1);
        let c = binarize(&y);
        Ok(LatentCode { y, c })
    }

    /// Prediction for one code, `l x d` row-major.
    pub fn decode(&self, c: &[i8]) -> Result<Vec<f32>> {
        self.check_len("latent code", c.len(), self.config.latent_bits)?;
        if let Some(bad) = c.iter().find(|v| **v != 1 && **v != -1) {
            return Err(Error::Validation(format!(
                "latent entries must be +-1, found {bad}"
            )));
        }
        let cf: Vec<f32> = c.iter().map(|&v| v as f32).collect();
        Ok(self.decoder.forward(&self.params.values, &cf))
    }

    /// Decoder output for an arbitrary real-valued code (no binarization).
    pub fn decode_relaxed(&self, c: &[f32]) -> Result<Vec<f32>> {
        self.check_len("latent code", c.len(), self.config.latent_bits)?;
        Ok(self.decoder.forward(&self.params.values, c))
    }

    /// Training forward pass: encode, binarize, decode.
    pub fn forward(&self, x: &[f32]) -> Result<(Vec<f32>, ForwardCache)> {
        self.check_len("window", x.len(), self.config.window_len())?;
        let p = &self.params.values;
        let (y, encoder) = self.encoder.forward_cached(p, x, 1);
        let c = binarize(&y);
        let cf: Vec<f32> = c.iter().map(|&v| v as f32).collect();
        let (xhat, decoder) = self.decoder.forward_cached(p, &cf);
        Ok((
            xhat,
            ForwardCache {
                encoder,
                latent: LatentCode { y, c },
                decoder,
            },
        ))
    }

    /// Accumulates parameter gradients of a loss with gradient `dxhat` into
    /// `g` (length `params().len()`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dxhat: &[f32],
        g: &mut [f32],
        want_dx: bool,
    ) -> Result<Backprop> {
        self.check_len("output gradient", dxhat.len(), self.config.window_len())?;
        self.check_len("gradient buffer", g.len(), self.params.len())?;
        let p = &self.params.values;
        let dc = self.decoder.backward(p, &cache.decoder, dxhat, g);
        let dy = binarize_backward(&cache.latent.y, &dc);
        let dx = self.encoder.backward(p, &cache.encoder, &dy, g, want_dx);
        Ok(Backprop { dc, dy, dx })
    }

    /// Same model with a different decoder architecture, freshly initialized.
    pub fn with_decoder(&self, kind: DecoderKind) -> Result<Btae> {
        build_alt_decoder(kind, &self.config)
    }
}

/// Builds a model whose decoder is `kind`, all other settings from `config`.
pub fn build_alt_decoder(kind: DecoderKind, config: &ModelConfig) -> Result<Btae> {
    Btae::new(ModelConfig {
        decoder_kind: kind,
        ..config.clone()
    })
}

/// Half-precision decoder bytes: header, parameters, checksum.
pub fn serialize_decoder(model: &Btae) -> Vec<u8> {
    serialize::write_decoder(model)
}

/// Inverse of [`serialize_decoder`]. The returned model's encoder is the
/// seeded initialization, not a trained one.
pub fn load_decoder(bytes: &[u8]) -> Result<Btae> {
    serialize::read_decoder(bytes)
}

#[cfg(test)]
mod tests;
