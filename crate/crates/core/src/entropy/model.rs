//! Adaptive order-0 frequency model over the working alphabet
//! [-32768, 32767] plus an escape symbol.
//!
//! Symbols start unseen; the first occurrence of an in-alphabet symbol is
//! coded as escape + 16 raw bits and enters the table with count 1. Symbols
//! outside the alphabet are always escaped and written as 64 raw bits.

use super::arith::MAX_TOTAL;

pub const ALPHABET_MIN: i64 = -32768;
pub const ALPHABET_MAX: i64 = 32767;
const ALPHABET: usize = 65536;
pub const ESCAPE: usize = ALPHABET;
const SLOTS: usize = ALPHABET + 1;
const ESCAPE_COUNT: u32 = 1;
/// Counts are halved once the total passes this (raised for very wide
/// alphabets so halving cannot thrash).
const RESCALE_TOTAL: u64 = 1 << 16;

#[inline]
pub fn slot(s: i64) -> Option<usize> {
    if (ALPHABET_MIN..=ALPHABET_MAX).contains(&s) {
        Some((s - ALPHABET_MIN) as usize)
    } else {
        None
    }
}

#[inline]
pub fn symbol(slot: usize) -> i64 {
    slot as i64 + ALPHABET_MIN
}

pub struct AdaptiveModel {
    counts: Vec<u32>,
    tree: Vec<u64>,
    total: u64,
    distinct: u64,
    top_bit: usize,
}

impl AdaptiveModel {
    pub fn new() -> Self {
        let mut m = Self {
            counts: vec![0; SLOTS],
            tree: vec![0; SLOTS + 1],
            total: 0,
            distinct: 0,
            top_bit: (SLOTS + 1).next_power_of_two() / 2,
        };
        m.add(ESCAPE, ESCAPE_COUNT);
        m
    }

    #[inline]
    fn add(&mut self, slot: usize, delta: u32) {
        self.counts[slot] += delta;
        self.total += delta as u64;
        let mut i = slot + 1;
        while i < self.tree.len() {
            self.tree[i] += delta as u64;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum of counts of slots `< slot`.
    #[inline]
    fn prefix(&self, slot: usize) -> u64 {
        let mut i = slot;
        let mut sum = 0;
        while i > 0 {
            sum += self.tree[i];
            i &= i - 1;
        }
        sum
    }

    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    #[inline]
    pub fn is_known(&self, slot: usize) -> bool {
        self.counts[slot] > 0
    }

    /// `[cum_low, cum_high)` of a known slot.
    #[inline]
    pub fn interval(&self, slot: usize) -> (u64, u64) {
        let lo = self.prefix(slot);
        (lo, lo + self.counts[slot] as u64)
    }

    /// Slot whose interval contains `target`.
    #[inline]
    pub fn find(&self, target: u64) -> usize {
        let mut pos = 0;
        let mut rem = target;
        let mut step = self.top_bit;
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }

    /// Records an occurrence of a slot (known or newly introduced).
    pub fn update(&mut self, slot: usize) {
        if self.counts[slot] == 0 {
            self.distinct += 1;
        }
        self.add(slot, 1);
        let limit = RESCALE_TOTAL.max(16 * self.distinct).min(MAX_TOTAL / 2);
        if self.total > limit {
            self.rescale();
        }
    }

    fn rescale(&mut self) {
        for (i, c) in self.counts.iter_mut().enumerate() {
            if *c > 0 && i != ESCAPE {
                *c = c.div_ceil(2);
            }
        }
        self.tree.iter_mut().for_each(|t| *t = 0);
        self.total = 0;
        // Linear-time Fenwick construction.
        for i in 0..SLOTS {
            self.tree[i + 1] += self.counts[i] as u64;
            self.total += self.counts[i] as u64;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent < self.tree.len() {
                let v = self.tree[i + 1];
                self.tree[parent] += v;
            }
        }
    }
}
