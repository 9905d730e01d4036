//! Decoder format:
//! `"DDM1" | version u16 | latent_bits u32 | l u32 | d u16 | d_model u16 |
//! n_heads u16 | n_encoder_layers u16 | n_decoder_blocks u16 | ffn_hidden u16 |
//! activation u8 | decoder_kind u8 | rpe u8 | seed u64 | param_count u64 |
//! f16 parameters | crc32`, all little endian.
//!
//! Full-model format (decoder plus single-precision encoder):
//! `"DDMF" | version u16 | decoder_len u64 | decoder bytes | encoder_count u64 |
//! f32 parameters | crc32`.

use super::params::ParamGroup;
use super::{Activation, Btae, DecoderKind, ModelConfig, RpeMode, DECODER_GROUPS};
use crate::bytes::{push_crc, split_crc, Reader};
use crate::{Error, Result};

pub const DECODER_MAGIC: &[u8; 4] = b"DDM1";
pub const DECODER_VERSION: u16 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"DDMF";
const MODEL_VERSION: u16 = 1;

fn decoder_indices(model: &Btae) -> Vec<usize> {
    let mask = model.params.group_mask(&DECODER_GROUPS);
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

pub(super) fn write_decoder(model: &Btae) -> Vec<u8> {
    let c = &model.config;
    let idx = decoder_indices(model);
    let mut out = Vec::with_capacity(48 + 2 * idx.len());
    out.extend_from_slice(DECODER_MAGIC);
    out.extend_from_slice(&DECODER_VERSION.to_le_bytes());
    out.extend_from_slice(&(c.latent_bits as u32).to_le_bytes());
    out.extend_from_slice(&(c.l as u32).to_le_bytes());
    for v in [
        c.d,
        c.d_model,
        c.n_heads,
        c.n_encoder_layers,
        c.n_decoder_blocks,
        c.ffn_hidden,
    ] {
        out.extend_from_slice(&(v as u16).to_le_bytes());
    }
    out.push(match c.activation {
        Activation::Gelu => 0,
    });
    out.push(match c.decoder_kind {
        DecoderKind::Transformer => 0,
        DecoderKind::Ffn => 1,
        DecoderKind::Rnn => 2,
    });
    out.push(match c.rpe {
        RpeMode::Off => 0,
        RpeMode::Literal => 1,
        RpeMode::Learned => 2,
    });
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(idx.len() as u64).to_le_bytes());
    for i in idx {
        out.extend_from_slice(&half::f16::from_f32(model.params.values[i]).to_le_bytes());
    }
    push_crc(&mut out);
    out
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let latent_bits = r.u32()? as usize;
    let l = r.u32()? as usize;
    let mut small = [0usize; 6];
    for v in small.iter_mut() {
        *v = r.u16()? as usize;
    }
    let activation = match r.u8()? {
        0 => Activation::Gelu,
        v => return Err(Error::decode(format!("unknown activation id {v}"))),
    };
    let decoder_kind = match r.u8()? {
        0 => DecoderKind::Transformer,
        1 => DecoderKind::Ffn,
        2 => DecoderKind::Rnn,
        v => return Err(Error::decode(format!("unknown decoder kind id {v}"))),
    };
    let rpe = match r.u8()? {
        0 => RpeMode::Off,
        1 => RpeMode::Literal,
        2 => RpeMode::Learned,
        v => return Err(Error::decode(format!("unknown rpe mode id {v}"))),
    };
    let seed = r.u64()?;
    let [d, d_model, n_heads, n_encoder_layers, n_decoder_blocks, ffn_hidden] = small;
    Ok(ModelConfig {
        latent_bits,
        l,
        d,
        d_model,
        n_heads,
        n_encoder_layers,
        n_decoder_blocks,
        ffn_hidden,
        activation,
        decoder_kind,
        rpe,
        seed,
    })
}

pub(super) fn read_decoder(bytes: &[u8]) -> Result<Btae> {
    let body = split_crc(bytes, "decoder")?;
    let mut r = Reader::new(body, "decoder");
    if &r.array::<4>()? != DECODER_MAGIC {
        return Err(Error::decode("decoder: bad magic"));
    }
    let version = r.u16()?;
    if version != DECODER_VERSION {
        return Err(Error::Version {
            what: "decoder",
            found: version,
            expected: DECODER_VERSION,
        });
    }
    let config = read_config(&mut r)?;
    let declared = r.u64()?;
    let mut model = Btae::new(config)?;
    let idx = decoder_indices(&model);
    if declared != idx.len() as u64 {
        return Err(Error::Config(format!(
            "decoder header declares {declared} parameters, configuration implies {}",
            idx.len()
        )));
    }
    if r.remaining() != 2 * idx.len() {
        return Err(Error::decode(format!(
            "decoder: {} parameter bytes, expected {}",
            r.remaining(),
            2 * idx.len()
        )));
    }
    for i in idx {
        model.params.values[i] = half::f16::from_le_bytes(r.array()?).to_f32();
    }
    Ok(model)
}

/// Full model: half-precision decoder plus single-precision encoder.
pub fn save_model(model: &Btae) -> Vec<u8> {
    let dec = write_decoder(model);
    let enc = model.params.group_values(&[ParamGroup::Encoder]);
    let mut out = Vec::with_capacity(dec.len() + 4 * enc.len() + 32);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(dec.len() as u64).to_le_bytes());
    out.extend_from_slice(&dec);
    out.extend_from_slice(&(enc.len() as u64).to_le_bytes());
    for v in enc {
        out.extend_from_slice(&v.to_le_bytes());
    }
    push_crc(&mut out);
    out
}

pub fn load_model(bytes: &[u8]) -> Result<Btae> {
    let body = split_crc(bytes, "model")?;
    let mut r = Reader::new(body, "model");
    if &r.array::<4>()? != MODEL_MAGIC {
        return Err(Error::decode("model: bad magic"));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            what: "model",
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let n = r.len_u64()?;
    let mut model = read_decoder(r.take(n)?)?;
    let count = r.u64()? as usize;
    let mask = model.params.group_mask(&[ParamGroup::Encoder]);
    let slots: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if count != slots.len() || r.remaining() != 4 * count {
        return Err(Error::Config(format!(
            "model declares {count} encoder parameters, configuration implies {}",
            slots.len()
        )));
    }
    for i in slots {
        model.params.values[i] = f32::from_le_bytes(r.array()?);
    }
    Ok(model)
}
