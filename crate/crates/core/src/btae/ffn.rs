use super::kernels::{gelu_backward, gelu_inplace, linear_backward, linear_forward};
use super::params::{Linear, ParamBuilder, ParamGroup};

/// Feed-forward stack with GeLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    rows: usize,
    /// Input of each layer.
    inputs: Vec<Vec<f32>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Vec<f32>>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn build(b: &mut ParamBuilder, name: &str, dims: &[usize], group: ParamGroup) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| b.linear(&format!("{name}.{i}"), w[0], w[1], group))
            .collect();
        Self { layers }
    }

    /// Like [`Mlp::build`] with [`ParamBuilder::scaled_linear`] layers: gain
    /// sqrt(2) ahead of each activation, 1 on the output layer.
    pub fn build_scaled(
        b: &mut ParamBuilder,
        name: &str,
        dims: &[usize],
        group: ParamGroup,
    ) -> Self {
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i < last {
                    std::f32::consts::SQRT_2
                } else {
                    1.0
                };
                b.scaled_linear(&format!("{name}.{i}"), w[0], w[1], gain, group)
            })
            .collect();
        Self { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    fn run(&self, p: &[f32], x: &[f32], rows: usize, mut cache: Option<&mut MlpCache>) -> Vec<f32> {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, lin) in self.layers.iter().enumerate() {
            let mut y = vec![0.0f32; rows * lin.n_out];
            linear_forward(p, lin, &cur, rows, &mut y);
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(cur);
                if k < last {
                    c.pre.push(y.clone());
                }
            }
            if k < last {
                gelu_inplace(&mut y);
            }
            cur = y;
        }
        cur
    }

    pub fn forward(&self, p: &[f32], x: &[f32], rows: usize) -> Vec<f32> {
        self.run(p, x, rows, None)
    }

    pub fn forward_cached(&self, p: &[f32], x: &[f32], rows: usize) -> (Vec<f32>, MlpCache) {
        let mut cache = MlpCache {
            rows,
            ..Default::default()
        };
        let y = self.run(p, x, rows, Some(&mut cache));
        (y, cache)
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(
        &self,
        p: &[f32],
        cache: &MlpCache,
        dy: &[f32],
        g: &mut [f32],
        want_dx: bool,
    ) -> Option<Vec<f32>> {
        let rows = cache.rows;
        let mut grad = dy.to_vec();
        for k in (0..self.layers.len()).rev() {
            let lin = &self.layers[k];
            let need_dx = k > 0 || want_dx;
            let mut dx = if need_dx {
                vec![0.0f32; rows * lin.n_in]
            } else {
                Vec::new()
            };
            linear_backward(
                p,
                lin,
                &cache.inputs[k],
                &grad,
                rows,
                need_dx.then_some(dx.as_mut_slice()),
                g,
            );
            if k > 0 {
                gelu_backward(&cache.pre[k - 1], &mut dx);
            }
            grad = dx;
        }
        want_dx.then_some(grad)
    }
}
