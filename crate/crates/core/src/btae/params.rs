//! Flat parameter storage.
//!
//! Every component keeps its weights in one `Vec<f32>`; layers hold offsets
//! into it. The allocation order is the fixed traversal order used by the
//! optimizer and by serialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    /// Latent-lifting FFN of the transformer decoder (or the input side of
    /// the alternative decoders).
    Lift,
    /// Transformer blocks / recurrent core.
    Blocks,
    /// Final projection to `l x d`.
    Output,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub values: Vec<f32>,
    pub entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Per-value mask of parameters belonging to any of `groups`.
    pub fn group_mask(&self, groups: &[ParamGroup]) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for e in &self.entries {
            if groups.contains(&e.group) {
                mask[e.offset..e.offset + e.len]
                    .iter_mut()
                    .for_each(|m| *m = true);
            }
        }
        mask
    }

    /// Values of every entry in `groups`, in traversal order.
    pub fn group_values(&self, groups: &[ParamGroup]) -> Vec<f32> {
        self.entries
            .iter()
            .filter(|e| groups.contains(&e.group))
            .flat_map(|e| self.values[e.offset..e.offset + e.len].iter().copied())
            .collect()
    }

    /// Copies same-named, same-sized entries of `groups` from `other`.
    /// Returns how many entries were copied.
    pub fn copy_groups_from(&mut self, other: &ParamStore, groups: &[ParamGroup]) -> usize {
        let mut copied = 0;
        for e in self.entries.iter().filter(|e| groups.contains(&e.group)) {
            if let Some(src) = other.entry(&e.name).filter(|s| s.len == e.len) {
                self.values[e.offset..e.offset + e.len]
                    .copy_from_slice(&other.values[src.offset..src.offset + src.len]);
                copied += 1;
            }
        }
        copied
    }

    /// Rounds every value through IEEE half precision.
    pub fn to_half_precision(&self) -> ParamStore {
        ParamStore {
            values: self
                .values
                .iter()
                .map(|&v| half::f16::from_f32(v).to_f32())
                .collect(),
            entries: self.entries.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    /// Offset of the `n_in x n_out` row-major weight.
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

pub struct ParamBuilder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store: ParamStore::default(),
            rng,
        }
    }

    fn push(&mut self, name: String, values: Vec<f32>, group: ParamGroup) -> usize {
        let offset = self.store.values.len();
        self.store.entries.push(ParamEntry {
            name,
            offset,
            len: values.len(),
            group,
        });
        self.store.values.extend(values);
        offset
    }

    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        n: usize,
        bound: f32,
        group: ParamGroup,
    ) -> usize {
        let values = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.push(name.into(), values, group)
    }

    pub fn constant(
        &mut self,
        name: impl Into<String>,
        n: usize,
        value: f32,
        group: ParamGroup,
    ) -> usize {
        self.push(name.into(), vec![value; n], group)
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(n_in), 1/sqrt(n_in))`
    /// for both weight and bias.
    pub fn linear(&mut self, name: &str, n_in: usize, n_out: usize, group: ParamGroup) -> Linear {
        let bound = 1.0 / (n_in as f32).sqrt();
        let w = self.uniform(format!("{name}.weight"), n_in * n_out, bound, group);
        let b = self.uniform(format!("{name}.bias"), n_out, bound, group);
        Linear { w, b, n_in, n_out }
    }

    /// Variance-preserving uniform weights, `U(-gain*sqrt(3/n_in), +)`, zero bias.
    /// Keeps the input-dependent signal from being swamped by biases in deep stacks.
    pub fn scaled_linear(
        &mut self,
        name: &str,
        n_in: usize,
        n_out: usize,
        gain: f32,
        group: ParamGroup,
    ) -> Linear {
        let bound = gain * (3.0 / n_in as f32).sqrt();
        let w = self.uniform(format!("{name}.weight"), n_in * n_out, bound, group);
        let b = self.constant(format!("{name}.bias"), n_out, 0.0, group);
        Linear { w, b, n_in, n_out }
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}
