//! Autoregressive gated-recurrent decoder. The latent code is the input of
//! the first step; every later step consumes the previous prediction.

use super::kernels::{linear_backward, linear_forward, sigmoid, tanh};
use super::params::{Linear, ParamBuilder, ParamGroup};
use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct GruDecoder {
    l: usize,
    d: usize,
    hidden: usize,
    /// Latent to first input.
    wc: Linear,
    /// Input to gates `[z | r | n]`.
    wx: Linear,
    /// Hidden state to gates `[z | r | n]`.
    uh: Linear,
    /// Previous prediction to input.
    wy: Linear,
    /// Hidden state to prediction.
    wout: Linear,
}

#[derive(Debug, Clone, Default)]
struct Step {
    x: Vec<f32>,
    h_prev: Vec<f32>,
    gh: Vec<f32>,
    z: Vec<f32>,
    r: Vec<f32>,
    n: Vec<f32>,
    h: Vec<f32>,
    y: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct GruCache {
    c: Vec<f32>,
    steps: Vec<Step>,
}

impl GruDecoder {
    pub fn build(b: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let hd = cfg.d_model;
        Self {
            l: cfg.l,
            d: cfg.d,
            hidden: hd,
            wc: b.linear("gru.wc", cfg.latent_bits, hd, ParamGroup::Lift),
            wx: b.linear("gru.wx", hd, 3 * hd, ParamGroup::Blocks),
            uh: b.linear("gru.uh", hd, 3 * hd, ParamGroup::Blocks),
            wy: b.linear("gru.wy", cfg.d, hd, ParamGroup::Output),
            wout: b.linear("gru.wout", hd, cfg.d, ParamGroup::Output),
        }
    }

    pub fn forward_cached(&self, p: &[f32], c: &[f32]) -> (Vec<f32>, GruCache) {
        let hd = self.hidden;
        let mut out = Vec::with_capacity(self.l * self.d);
        let mut steps = Vec::with_capacity(self.l);
        let mut x = vec![0.0f32; hd];
        linear_forward(p, &self.wc, c, 1, &mut x);
        let mut h = vec![0.0f32; hd];
        for t in 0..self.l {
            let mut gx = vec![0.0f32; 3 * hd];
            let mut gh = vec![0.0f32; 3 * hd];
            linear_forward(p, &self.wx, &x, 1, &mut gx);
            linear_forward(p, &self.uh, &h, 1, &mut gh);
            let z: Vec<f32> = (0..hd).map(|k| sigmoid(gx[k] + gh[k])).collect();
            let r: Vec<f32> = (0..hd).map(|k| sigmoid(gx[hd + k] + gh[hd + k])).collect();
            let n: Vec<f32> = (0..hd)
                .map(|k| tanh(gx[2 * hd + k] + r[k] * gh[2 * hd + k]))
                .collect();
            let h_new: Vec<f32> = (0..hd).map(|k| (1.0 - z[k]) * n[k] + z[k] * h[k]).collect();
            let mut y = vec![0.0f32; self.d];
            linear_forward(p, &self.wout, &h_new, 1, &mut y);
            out.extend_from_slice(&y);
            let mut x_next = vec![0.0f32; hd];
            if t + 1 < self.l {
                linear_forward(p, &self.wy, &y, 1, &mut x_next);
            }
            steps.push(Step {
                x: std::mem::replace(&mut x, x_next),
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                gh,
                z,
                r,
                n,
                h: h_new,
                y,
            });
        }
        (
            out,
            GruCache {
                c: c.to_vec(),
                steps,
            },
        )
    }

    pub fn forward(&self, p: &[f32], c: &[f32]) -> Vec<f32> {
        self.forward_cached(p, c).0
    }

    /// Backpropagation through time, including the feedback path.
    pub fn backward(&self, p: &[f32], cache: &GruCache, dout: &[f32], g: &mut [f32]) -> Vec<f32> {
        let (hd, d) = (self.hidden, self.d);
        let mut dh_next = vec![0.0f32; hd];
        let mut dy_feedback = vec![0.0f32; d];
        let mut dc = vec![0.0f32; self.wc.n_in];
        for t in (0..self.l).rev() {
            let s = &cache.steps[t];
            let mut dy: Vec<f32> = dout[t * d..(t + 1) * d].to_vec();
            for (a, b) in dy.iter_mut().zip(&dy_feedback) {
                *a += b;
            }
            let mut dh = vec![0.0f32; hd];
            linear_backward(p, &self.wout, &s.h, &dy, 1, Some(&mut dh), g);
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            let mut dgx = vec![0.0f32; 3 * hd];
            let mut dgh = vec![0.0f32; 3 * hd];
            let mut dh_prev = vec![0.0f32; hd];
            for k in 0..hd {
                let dn = dh[k] * (1.0 - s.z[k]);
                let dz = dh[k] * (s.h_prev[k] - s.n[k]);
                dh_prev[k] = dh[k] * s.z[k];
                let dn_pre = dn * (1.0 - s.n[k] * s.n[k]);
                let dr = dn_pre * s.gh[2 * hd + k];
                let dz_pre = dz * s.z[k] * (1.0 - s.z[k]);
                let dr_pre = dr * s.r[k] * (1.0 - s.r[k]);
                dgx[k] = dz_pre;
                dgx[hd + k] = dr_pre;
                dgx[2 * hd + k] = dn_pre;
                dgh[k] = dz_pre;
                dgh[hd + k] = dr_pre;
                dgh[2 * hd + k] = dn_pre * s.r[k];
            }
            let mut dx = vec![0.0f32; hd];
            linear_backward(p, &self.wx, &s.x, &dgx, 1, Some(&mut dx), g);
            let mut dh_from_u = vec![0.0f32; hd];
            linear_backward(p, &self.uh, &s.h_prev, &dgh, 1, Some(&mut dh_from_u), g);
            for (a, b) in dh_prev.iter_mut().zip(&dh_from_u) {
                *a += b;
            }
            dh_next = dh_prev;
            if t > 0 {
                linear_backward(
                    p,
                    &self.wy,
                    &cache.steps[t - 1].y,
                    &dx,
                    1,
                    Some(&mut dy_feedback),
                    g,
                );
            } else {
                linear_backward(p, &self.wc, &cache.c, &dx, 1, Some(&mut dc), g);
            }
        }
        dc
    }
}
