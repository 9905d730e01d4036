//! Lossless coding of integer residual symbols, latent bit packing and
//! entropy accounting.

mod arith;
mod bits;
mod model;
mod stream;

use std::collections::BTreeMap;

pub use bits::{pack_bits, unpack_bits};
pub use stream::{decode_symbols, encode_symbols, CodecId, EncodedStream};

use crate::{Error, Result};

/// Empirical distribution of a symbol sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyModel {
    /// Distinct symbols, ascending.
    pub symbols: Vec<i64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl EntropyModel {
    pub fn from_symbols(k: &[i64]) -> Self {
        let mut hist = BTreeMap::new();
        for &s in k {
            *hist.entry(s).or_insert(0u64) += 1;
        }
        Self::from_counts(hist)
    }

    pub fn from_counts(hist: BTreeMap<i64, u64>) -> Self {
        let (symbols, counts): (Vec<_>, Vec<_>) = hist.into_iter().filter(|&(_, n)| n > 0).unzip();
        let total = counts.iter().sum();
        Self {
            symbols,
            counts,
            total,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn probability(&self, j: usize) -> f64 {
        self.counts[j] as f64 / self.total as f64
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.symbols.len())
            .map(|j| self.probability(j))
            .collect()
    }

    /// Index of `s` in `symbols`.
    pub fn position(&self, s: i64) -> Option<usize> {
        self.symbols.binary_search(&s).ok()
    }

    /// Shannon entropy in nats, `-sum p ln p`.
    pub fn entropy_nats(&self) -> f64 {
        let total = self.total as f64;
        -self
            .counts
            .iter()
            .map(|&n| {
                let p = n as f64 / total;
                p * p.ln()
            })
            .sum::<f64>()
    }
}

/// Lower bound on the coded size of the modelled sequence,
/// `-sum_j n(s_j) log2 p(s_j)`, in bits.
pub fn entropy_bound_bits(model: &EntropyModel) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::arg("entropy bound of an empty model"));
    }
    let total = model.total as f64;
    Ok(-model
        .counts
        .iter()
        .map(|&n| n as f64 * (n as f64 / total).log2())
        .sum::<f64>())
}

/// Entropy bound of a symbol sequence; zero for an empty one.
pub fn sequence_bound_bits(k: &[i64]) -> f64 {
    if k.is_empty() {
        0.0
    } else {
        entropy_bound_bits(&EntropyModel::from_symbols(k)).unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(i64, u64)]) -> EntropyModel {
        EntropyModel::from_counts(pairs.iter().copied().collect())
    }

    #[test]
    fn bound_spot_values() {
        assert_eq!(entropy_bound_bits(&counts(&[(0, 4)])).unwrap(), 0.0);
        assert!((entropy_bound_bits(&counts(&[(0, 2), (1, 2)])).unwrap() - 4.0).abs() < 1e-12);
        let expected = 3.0 * (4.0f64 / 3.0).log2() + 2.0;
        let got = entropy_bound_bits(&counts(&[(7, 3), (9, 1)])).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 3.245).abs() < 1e-3);
        assert!(entropy_bound_bits(&counts(&[])).is_err());
    }

    #[test]
    fn model_invariants() {
        let m = EntropyModel::from_symbols(&[3, -1, 3, 3, 0, -1]);
        assert_eq!(m.symbols, vec![-1, 0, 3]);
        assert_eq!(m.counts, vec![2, 1, 3]);
        assert_eq!(m.total, 6);
        let psum: f64 = m.probabilities().iter().sum();
        assert!((psum - 1.0).abs() < 1e-12);
        assert_eq!(m.position(3), Some(2));
        assert_eq!(m.position(5), None);
    }

    #[test]
    fn entropy_nats_matches_formula() {
        let m = EntropyModel::from_symbols(&[0, 0, 1, 1]);
        assert!((m.entropy_nats() - std::f64::consts::LN_2).abs() < 1e-12);
        let m = EntropyModel::from_symbols(&[5; 10]);
        assert_eq!(m.entropy_nats(), 0.0);
    }
}
