//! Binary-fraction arithmetic coder with 32 bits of precision and
//! bit-plus-follow carry handling.

const PRECISION: u32 = 32;
const WHOLE: u64 = 1 << PRECISION;
const HALF: u64 = WHOLE / 2;
const QUARTER: u64 = WHOLE / 4;

/// Totals must not exceed this so every symbol keeps a non-empty interval.
pub const MAX_TOTAL: u64 = 1 << 24;

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    n: u8,
}

impl BitWriter {
    #[inline]
    fn push(&mut self, bit: bool) {
        self.acc = (self.acc << 1) | bit as u8;
        self.n += 1;
        if self.n == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.n = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.n > 0 {
            self.bytes.push(self.acc << (8 - self.n));
        }
        self.bytes
    }
}

pub struct Encoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Encoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            high: WHOLE - 1,
            pending: 0,
            out: BitWriter::default(),
        }
    }

    #[inline]
    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    /// Narrows the interval to `[cum_low, cum_high) / total`.
    #[inline]
    pub fn encode(&mut self, cum_low: u64, cum_high: u64, total: u64) {
        debug_assert!(cum_low < cum_high && cum_high <= total && total <= MAX_TOTAL);
        let range = self.high - self.low + 1;
        self.high = self.low + range * cum_high / total - 1;
        self.low += range * cum_low / total;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < 3 * QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    /// Codes `bits` (<= 16) raw bits with uniform probability.
    #[inline]
    pub fn encode_bits(&mut self, value: u64, bits: u32) {
        self.encode(value, value + 1, 1 << bits);
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.pending += 1;
        if self.low < QUARTER {
            self.emit(false);
        } else {
            self.emit(true);
        }
        self.out.finish()
    }
}

pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    low: u64,
    high: u64,
    value: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = Self {
            bytes,
            pos: 0,
            low: 0,
            high: WHOLE - 1,
            value: 0,
        };
        for _ in 0..PRECISION {
            d.value = (d.value << 1) | d.next_bit();
        }
        d
    }

    /// Bits past the end of the payload read as zero.
    #[inline]
    fn next_bit(&mut self) -> u64 {
        let byte = self.pos / 8;
        let bit = if byte < self.bytes.len() {
            (self.bytes[byte] >> (7 - self.pos % 8)) & 1
        } else {
            0
        };
        self.pos += 1;
        bit as u64
    }

    /// Whether more bits were consumed than a valid stream could need.
    pub fn overran(&self) -> bool {
        self.pos > self.bytes.len() * 8 + PRECISION as usize
    }

    /// Cumulative count the next symbol falls in.
    #[inline]
    pub fn target(&self, total: u64) -> u64 {
        let range = self.high - self.low + 1;
        ((self.value - self.low + 1) * total - 1) / range
    }

    #[inline]
    pub fn consume(&mut self, cum_low: u64, cum_high: u64, total: u64) {
        let range = self.high - self.low + 1;
        self.high = self.low + range * cum_high / total - 1;
        self.low += range * cum_low / total;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < 3 * QUARTER {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
        }
    }

    #[inline]
    pub fn decode_bits(&mut self, bits: u32) -> u64 {
        let total = 1 << bits;
        let v = self.target(total).min(total - 1);
        self.consume(v, v + 1, total);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_bits_round_trip() {
        let vals: Vec<u64> = (0..1000u64).map(|i| (i * 7919) % 65536).collect();
        let mut enc = Encoder::new();
        for &v in &vals {
            enc.encode_bits(v, 16);
        }
        let bytes = enc.finish();
        // 16 bits each plus a couple of flush bits.
        assert!(bytes.len() <= 2000 + 2);
        let mut dec = Decoder::new(&bytes);
        for &v in &vals {
            assert_eq!(dec.decode_bits(16), v);
        }
    }

    #[test]
    fn skewed_binary_is_cheap() {
        let mut enc = Encoder::new();
        for _ in 0..10_000 {
            enc.encode(0, 1023, 1024);
        }
        let bytes = enc.finish();
        // -log2(1023/1024) * 1e4 ~= 14 bits.
        assert!(bytes.len() <= 4, "{}", bytes.len());
        let mut dec = Decoder::new(&bytes);
        for _ in 0..10_000 {
            let t = dec.target(1024);
            assert!(t < 1023);
            dec.consume(0, 1023, 1024);
        }
    }
}
