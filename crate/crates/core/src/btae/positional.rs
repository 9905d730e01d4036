use crate::{Error, Result};

/// Fixed sinusoidal absolute encodings (`l x d_model`) and the relative
/// distance matrix `RPE[i][j] = j - i` (`l x l`), both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncodings {
    pub l: usize,
    pub d_model: usize,
    pub ape: Vec<f32>,
    pub rpe: Vec<f32>,
}

impl PositionalEncodings {
    pub fn ape_row(&self, pos: usize) -> &[f32] {
        &self.ape[pos * self.d_model..(pos + 1) * self.d_model]
    }

    pub fn rpe_row(&self, i: usize) -> &[f32] {
        &self.rpe[i * self.l..(i + 1) * self.l]
    }
}

pub fn build_positional(l: usize, d_model: usize) -> Result<PositionalEncodings> {
    if l == 0 {
        return Err(Error::arg("positional encodings need l >= 1"));
    }
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "d_model must be even and positive, got {d_model}"
        )));
    }
    let mut ape = vec![0.0f32; l * d_model];
    for pos in 0..l {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / libm::pow(10_000.0, (2 * i) as f64 / d_model as f64);
            ape[pos * d_model + 2 * i] = libm::sin(angle) as f32;
            ape[pos * d_model + 2 * i + 1] = libm::cos(angle) as f32;
        }
    }
    let mut rpe = vec![0.0f32; l * l];
    for i in 0..l {
        for j in 0..l {
            rpe[i * l + j] = j as f32 - i as f32;
        }
    }
    Ok(PositionalEncodings {
        l,
        d_model,
        ape,
        rpe,
    })
}
