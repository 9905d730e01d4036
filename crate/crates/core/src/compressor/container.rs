//! Container layout, little endian:
//!
//! ```text
//! "DDC1" | version u16 | kind u8 | eps f64 | l u32 | d u16 | l_total u64 |
//! flags u16 | seed u64 | [prescale: n u16, n x (offset f64, scale f64)] |
//! decoder_len u64 | decoder | latent_len u64 | latents |
//! residual EncodedStream | tail_len u32 | tail f64s | crc32
//! ```
//!
//! The prescale block is present only when [`FLAG_PRESCALE`] is set.

use crate::bytes::{push_crc, split_crc, Reader};
use crate::entropy::EncodedStream;
use crate::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"DDC1";
pub const CONTAINER_VERSION: u16 = 1;

/// Univariate mode: channels were interleaved into one before windowing.
pub const FLAG_UNI: u16 = 1 << 0;
pub const FLAG_RPE: u16 = 1 << 1;
/// Latent bytes are an [`EncodedStream`] of the packed bytes, not raw packing.
pub const FLAG_LATENT_CODED: u16 = 1 << 2;
pub const FLAG_PRESCALE: u16 = 1 << 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    DeepDict = 0,
    CriticalAperture = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub version: u16,
    pub kind: ContainerKind,
    pub eps: f64,
    pub l: u32,
    pub d: u16,
    pub l_total: u64,
    pub flags: u16,
    pub seed: u64,
    /// Per model channel `(offset, scale)`; empty unless prescaled.
    pub prescale: Vec<(f64, f64)>,
    pub decoder_bytes: Vec<u8>,
    pub latent_bytes: Vec<u8>,
    pub residuals: EncodedStream,
    pub tail: Vec<f64>,
}

/// Byte counts of each part; they sum to the serialized size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartSizes {
    /// Fixed fields, optional prescale block, length prefixes and checksum.
    pub header: usize,
    pub decoder: usize,
    pub latents: usize,
    /// The whole residual stream including its own framing.
    pub residuals: usize,
    pub tail: usize,
}

impl PartSizes {
    pub fn total(&self) -> usize {
        self.header + self.decoder + self.latents + self.residuals + self.tail
    }
}

impl Container {
    pub fn has_flag(&self, flag: u16) -> bool {
        self.flags & flag != 0
    }

    pub fn part_sizes(&self) -> PartSizes {
        let prescale = if self.has_flag(FLAG_PRESCALE) {
            2 + 16 * self.prescale.len()
        } else {
            0
        };
        PartSizes {
            // magic..seed = 39, three length prefixes = 20, crc = 4
            header: 39 + prescale + 8 + 8 + 4 + 4,
            decoder: self.decoder_bytes.len(),
            latents: self.latent_bytes.len(),
            residuals: self.residuals.encoded_len(),
            tail: 8 * self.tail.len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.part_sizes().total());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.eps.to_le_bytes());
        out.extend_from_slice(&self.l.to_le_bytes());
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend_from_slice(&self.l_total.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        if self.has_flag(FLAG_PRESCALE) {
            out.extend_from_slice(&(self.prescale.len() as u16).to_le_bytes());
            for (o, s) in &self.prescale {
                out.extend_from_slice(&o.to_le_bytes());
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.decoder_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.decoder_bytes);
        out.extend_from_slice(&(self.latent_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.latent_bytes);
        self.residuals.write_to(&mut out);
        out.extend_from_slice(&(self.tail.len() as u32).to_le_bytes());
        for v in &self.tail {
            out.extend_from_slice(&v.to_le_bytes());
        }
        push_crc(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::decode("not a container (bad magic)"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CONTAINER_VERSION {
            return Err(Error::Version {
                what: "container",
                found: version,
                expected: CONTAINER_VERSION,
            });
        }
        let body = split_crc(bytes, "container")?;
        let mut r = Reader::new(body, "container");
        r.take(6)?;
        let kind = match r.u8()? {
            0 => ContainerKind::DeepDict,
            1 => ContainerKind::CriticalAperture,
            v => return Err(Error::decode(format!("unknown container kind {v}"))),
        };
        let eps = r.f64()?;
        let l = r.u32()?;
        let d = r.u16()?;
        let l_total = r.u64()?;
        let flags = r.u16()?;
        let seed = r.u64()?;
        let mut prescale = Vec::new();
        if flags & FLAG_PRESCALE != 0 {
            let n = r.u16()?;
            for _ in 0..n {
                prescale.push((r.f64()?, r.f64()?));
            }
        }
        let n = r.len_u64()?;
        let decoder_bytes = r.take(n)?.to_vec();
        let n = r.len_u64()?;
        let latent_bytes = r.take(n)?.to_vec();
        let rest = &body[r.position()..];
        let (residuals, used) = EncodedStream::read_from(rest)?;
        r.take(used)?;
        let n = r.u32()? as usize;
        if r.remaining() != 8 * n {
            return Err(Error::decode(format!(
                "container: tail declares {n} values but {} bytes remain",
                r.remaining()
            )));
        }
        let tail = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            version,
            kind,
            eps,
            l,
            d,
            l_total,
            flags,
            seed,
            prescale,
            decoder_bytes,
            latent_bytes,
            residuals,
            tail,
        })
    }
}
