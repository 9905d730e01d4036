//! Transformer decoder: latent lift, replication with absolute encodings,
//! pre-norm self-attention blocks and a per-row output projection.

use super::ffn::{Mlp, MlpCache};
use super::kernels::{
    axpy, dot, layer_norm_backward, layer_norm_forward, linear_backward, linear_forward,
    softmax_row, softmax_row_backward,
};
use super::params::{Linear, ParamBuilder, ParamGroup};
use super::positional::PositionalEncodings;
use super::{ModelConfig, RpeMode};

#[derive(Debug, Clone, PartialEq)]
enum Rpe {
    Off,
    /// Additive `l x l` matrix.
    Matrix(Vec<f32>),
    /// Per-block `n_heads x d_head x (2l-1)` tables of distance embeddings.
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: (usize, usize),
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: (usize, usize),
    ffn: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerDecoder {
    l: usize,
    d: usize,
    d_model: usize,
    n_heads: usize,
    lift: Mlp,
    ape: Vec<f32>,
    rpe: Rpe,
    rpe_tables: Vec<usize>,
    blocks: Vec<Block>,
    output: Mlp,
}

#[derive(Debug, Clone, Default)]
struct BlockCache {
    xhat1: Vec<f32>,
    rstd1: Vec<f32>,
    a: Vec<f32>,
    q: Vec<f32>,
    /// Keys and values per head, `n_heads x d_head x l`.
    kt: Vec<f32>,
    vt: Vec<f32>,
    /// Softmax weights, `n_heads x l x l`.
    attn: Vec<f32>,
    o: Vec<f32>,
    xhat2: Vec<f32>,
    rstd2: Vec<f32>,
    ffn: MlpCache,
}

#[derive(Debug, Clone, Default)]
pub struct TransformerCache {
    lift: MlpCache,
    blocks: Vec<BlockCache>,
    output: MlpCache,
}

impl TransformerCache {
    /// Attention weights of every block, each `n_heads x l x l`.
    pub fn attention(&self) -> Vec<&[f32]> {
        self.blocks.iter().map(|b| b.attn.as_slice()).collect()
    }
}

impl TransformerDecoder {
    pub fn build(b: &mut ParamBuilder, cfg: &ModelConfig, pe: &PositionalEncodings) -> Self {
        let (l, dm, h) = (cfg.l, cfg.d_model, cfg.ffn_hidden);
        let d_head = dm / cfg.n_heads;
        let lift = Mlp::build(b, "lift", &[cfg.latent_bits, h, dm], ParamGroup::Lift);
        let mut blocks = Vec::with_capacity(cfg.n_decoder_blocks);
        let mut rpe_tables = Vec::new();
        for i in 0..cfg.n_decoder_blocks {
            let n = format!("block{i}");
            let g = ParamGroup::Blocks;
            let ln1 = (
                b.constant(format!("{n}.ln1.gain"), dm, 1.0, g),
                b.constant(format!("{n}.ln1.bias"), dm, 0.0, g),
            );
            let wq = b.linear(&format!("{n}.wq"), dm, dm, g);
            let wk = b.linear(&format!("{n}.wk"), dm, dm, g);
            let wv = b.linear(&format!("{n}.wv"), dm, dm, g);
            let wo = b.linear(&format!("{n}.wo"), dm, dm, g);
            if cfg.rpe == RpeMode::Learned {
                let bound = 1.0 / (d_head as f32).sqrt();
                rpe_tables.push(b.uniform(
                    format!("{n}.rpe"),
                    cfg.n_heads * d_head * (2 * l - 1),
                    bound,
                    g,
                ));
            }
            let ln2 = (
                b.constant(format!("{n}.ln2.gain"), dm, 1.0, g),
                b.constant(format!("{n}.ln2.bias"), dm, 0.0, g),
            );
            let ffn = Mlp::build(b, &format!("{n}.ffn"), &[dm, h, dm], g);
            blocks.push(Block {
                ln1,
                wq,
                wk,
                wv,
                wo,
                ln2,
                ffn,
            });
        }
        let output = Mlp::build(b, "output", &[dm, h, cfg.d], ParamGroup::Output);
        let rpe = match cfg.rpe {
            RpeMode::Off => Rpe::Off,
            RpeMode::Literal => Rpe::Matrix(pe.rpe.clone()),
            RpeMode::Learned => Rpe::Learned,
        };
        Self {
            l,
            d: cfg.d,
            d_model: dm,
            n_heads: cfg.n_heads,
            lift,
            ape: pe.ape.clone(),
            rpe,
            rpe_tables,
            blocks,
            output,
        }
    }

    /// Replaces the additive distance matrix (test hook for the ablation).
    pub fn set_rpe_matrix(&mut self, m: Vec<f32>) {
        assert_eq!(m.len(), self.l * self.l);
        self.rpe = Rpe::Matrix(m);
    }

    fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn scale(&self) -> f32 {
        (self.d_model as f32).sqrt()
    }

    /// Start of the contiguous run of distance embeddings `j - i`,
    /// `j = 0..l`, for component `t` of head `h` in `block`.
    fn rpe_run(&self, block: usize, h: usize, t: usize, i: usize) -> usize {
        let span = 2 * self.l - 1;
        self.rpe_tables[block] + (h * self.d_head() + t) * span + (self.l - 1 - i)
    }

    /// Head `h` of a row-major `l x d_model` matrix as `d_head x l`.
    fn head_transposed(&self, m: &[f32], h: usize) -> Vec<f32> {
        let (l, dm, dh) = (self.l, self.d_model, self.d_head());
        let mut out = vec![0.0f32; dh * l];
        for j in 0..l {
            for t in 0..dh {
                out[t * l + j] = m[j * dm + h * dh + t];
            }
        }
        out
    }

    fn block_forward(&self, p: &[f32], bi: usize, z: &mut [f32], cache: &mut BlockCache) {
        let blk = &self.blocks[bi];
        let (l, dm, dh) = (self.l, self.d_model, self.d_head());
        let scale = self.scale();
        cache.xhat1 = vec![0.0; l * dm];
        cache.rstd1 = vec![0.0; l];
        cache.a = vec![0.0; l * dm];
        layer_norm_forward(
            p,
            blk.ln1.0,
            blk.ln1.1,
            z,
            dm,
            &mut cache.a,
            &mut cache.xhat1,
            &mut cache.rstd1,
        );
        let mut k = vec![0.0; l * dm];
        let mut v = vec![0.0; l * dm];
        cache.q = vec![0.0; l * dm];
        linear_forward(p, &blk.wq, &cache.a, l, &mut cache.q);
        linear_forward(p, &blk.wk, &cache.a, l, &mut k);
        linear_forward(p, &blk.wv, &cache.a, l, &mut v);
        cache.kt = (0..self.n_heads)
            .flat_map(|h| self.head_transposed(&k, h))
            .collect();
        cache.vt = (0..self.n_heads)
            .flat_map(|h| self.head_transposed(&v, h))
            .collect();
        cache.attn = vec![0.0; self.n_heads * l * l];
        cache.o = vec![0.0; l * dm];
        for h in 0..self.n_heads {
            let kt = &cache.kt[h * dh * l..(h + 1) * dh * l];
            let vt = &cache.vt[h * dh * l..(h + 1) * dh * l];
            for i in 0..l {
                let qi = &cache.q[i * dm + h * dh..i * dm + (h + 1) * dh];
                let row = &mut cache.attn[(h * l + i) * l..(h * l + i + 1) * l];
                if let Rpe::Matrix(m) = &self.rpe {
                    row.copy_from_slice(&m[i * l..(i + 1) * l]);
                }
                for t in 0..dh {
                    axpy(qi[t], &kt[t * l..(t + 1) * l], row);
                }
                if let Rpe::Learned = self.rpe {
                    for (t, &q) in qi.iter().enumerate().take(dh) {
                        let off = self.rpe_run(bi, h, t, i);
                        axpy(q, &p[off..off + l], row);
                    }
                }
                row.iter_mut().for_each(|s| *s /= scale);
                softmax_row(row);
                for t in 0..dh {
                    cache.o[i * dm + h * dh + t] = dot(row, &vt[t * l..(t + 1) * l]);
                }
            }
        }
        let mut att = vec![0.0; l * dm];
        linear_forward(p, &blk.wo, &cache.o, l, &mut att);
        for (zi, a) in z.iter_mut().zip(&att) {
            *zi += a;
        }
        cache.xhat2 = vec![0.0; l * dm];
        cache.rstd2 = vec![0.0; l];
        let mut b_in = vec![0.0; l * dm];
        layer_norm_forward(
            p,
            blk.ln2.0,
            blk.ln2.1,
            z,
            dm,
            &mut b_in,
            &mut cache.xhat2,
            &mut cache.rstd2,
        );
        let (f, fc) = blk.ffn.forward_cached(p, &b_in, l);
        cache.ffn = fc;
        for (zi, fv) in z.iter_mut().zip(&f) {
            *zi += fv;
        }
    }

    /// `dz` holds the gradient w.r.t. the block output on entry and w.r.t.
    /// the block input on return.
    fn block_backward(
        &self,
        p: &[f32],
        bi: usize,
        cache: &BlockCache,
        dz: &mut [f32],
        g: &mut [f32],
    ) {
        let blk = &self.blocks[bi];
        let (l, dm, dh) = (self.l, self.d_model, self.d_head());
        let scale = self.scale();

        let db = blk.ffn.backward(p, &cache.ffn, dz, g, true).unwrap();
        let mut dln = vec![0.0; l * dm];
        layer_norm_backward(
            p,
            blk.ln2.0,
            blk.ln2.1,
            &cache.xhat2,
            &cache.rstd2,
            &db,
            dm,
            &mut dln,
            g,
        );
        for (a, b) in dz.iter_mut().zip(&dln) {
            *a += b;
        }

        let mut d_o = vec![0.0; l * dm];
        linear_backward(p, &blk.wo, &cache.o, dz, l, Some(&mut d_o), g);
        let mut dq = vec![0.0; l * dm];
        let mut dk = vec![0.0; l * dm];
        let mut dv = vec![0.0; l * dm];
        let mut ds = vec![0.0; l];
        let mut dkt = vec![0.0; dh * l];
        let mut dvt = vec![0.0; dh * l];
        for h in 0..self.n_heads {
            let hs = h * dh;
            let kt = &cache.kt[h * dh * l..(h + 1) * dh * l];
            let vt = &cache.vt[h * dh * l..(h + 1) * dh * l];
            dkt.iter_mut().for_each(|v| *v = 0.0);
            dvt.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..l {
                let a_row = &cache.attn[(h * l + i) * l..(h * l + i + 1) * l];
                let doi = &d_o[i * dm + hs..i * dm + hs + dh];
                ds.iter_mut().for_each(|v| *v = 0.0);
                for t in 0..dh {
                    axpy(doi[t], &vt[t * l..(t + 1) * l], &mut ds);
                    axpy(doi[t], a_row, &mut dvt[t * l..(t + 1) * l]);
                }
                softmax_row_backward(a_row, &mut ds);
                ds.iter_mut().for_each(|v| *v /= scale);
                let qi = &cache.q[i * dm + hs..i * dm + hs + dh];
                for t in 0..dh {
                    dq[i * dm + hs + t] += dot(&ds, &kt[t * l..(t + 1) * l]);
                    axpy(qi[t], &ds, &mut dkt[t * l..(t + 1) * l]);
                }
                if let Rpe::Learned = self.rpe {
                    for t in 0..dh {
                        let off = self.rpe_run(bi, h, t, i);
                        dq[i * dm + hs + t] += dot(&ds, &p[off..off + l]);
                        axpy(qi[t], &ds, &mut g[off..off + l]);
                    }
                }
            }
            for j in 0..l {
                for t in 0..dh {
                    dk[j * dm + hs + t] = dkt[t * l + j];
                    dv[j * dm + hs + t] = dvt[t * l + j];
                }
            }
        }
        let mut da = vec![0.0; l * dm];
        let mut tmp = vec![0.0; l * dm];
        linear_backward(p, &blk.wq, &cache.a, &dq, l, Some(&mut da), g);
        linear_backward(p, &blk.wk, &cache.a, &dk, l, Some(&mut tmp), g);
        da.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        linear_backward(p, &blk.wv, &cache.a, &dv, l, Some(&mut tmp), g);
        da.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        layer_norm_backward(
            p,
            blk.ln1.0,
            blk.ln1.1,
            &cache.xhat1,
            &cache.rstd1,
            &da,
            dm,
            &mut dln,
            g,
        );
        for (a, b) in dz.iter_mut().zip(&dln) {
            *a += b;
        }
    }

    pub fn forward_cached(&self, p: &[f32], c: &[f32]) -> (Vec<f32>, TransformerCache) {
        let (l, dm) = (self.l, self.d_model);
        let (lifted, lift_cache) = self.lift.forward_cached(p, c, 1);
        let mut z = vec![0.0f32; l * dm];
        for i in 0..l {
            let zr = &mut z[i * dm..(i + 1) * dm];
            let ar = &self.ape[i * dm..(i + 1) * dm];
            for k in 0..dm {
                zr[k] = lifted[k] + ar[k];
            }
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for bi in 0..self.blocks.len() {
            let mut bc = BlockCache::default();
            self.block_forward(p, bi, &mut z, &mut bc);
            blocks.push(bc);
        }
        let (out, output) = self.output.forward_cached(p, &z, l);
        (
            out,
            TransformerCache {
                lift: lift_cache,
                blocks,
                output,
            },
        )
    }

    pub fn forward(&self, p: &[f32], c: &[f32]) -> Vec<f32> {
        self.forward_cached(p, c).0
    }

    /// Returns the gradient w.r.t. the latent input.
    pub fn backward(
        &self,
        p: &[f32],
        cache: &TransformerCache,
        dout: &[f32],
        g: &mut [f32],
    ) -> Vec<f32> {
        let (l, dm) = (self.l, self.d_model);
        debug_assert_eq!(dout.len(), l * self.d);
        let mut dz = self
            .output
            .backward(p, &cache.output, dout, g, true)
            .unwrap();
        for bi in (0..self.blocks.len()).rev() {
            self.block_backward(p, bi, &cache.blocks[bi], &mut dz, g);
        }
        let mut dlift = vec![0.0f32; dm];
        for i in 0..l {
            axpy(1.0, &dz[i * dm..(i + 1) * dm], &mut dlift);
        }
        self.lift.backward(p, &cache.lift, &dlift, g, true).unwrap()
    }
}
