use crate::{Error, Result};

/// Packs `{-1, +1}` latents one bit each: +1 -> 1, -1 -> 0, least
/// significant bit first, last byte zero-padded.
pub fn pack_bits(c: &[i8]) -> Vec<u8> {
    let mut out = vec![0u8; c.len().div_ceil(8)];
    for (i, &v) in c.iter().enumerate() {
        if v > 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Result<Vec<i8>> {
    if n > bytes.len() * 8 {
        return Err(Error::arg(format!(
            "{n} bits requested from {} bytes",
            bytes.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                1
            } else {
                -1
            }
        })
        .collect())
}
