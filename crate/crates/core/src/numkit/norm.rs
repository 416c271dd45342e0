use super::{Parameterized, Tensor2};
use crate::error::{Error, Result};

/// Variance floor inside the square root. Small enough that normalized rows
/// keep unit variance to ~1e-10 for O(1) inputs, large enough that an
/// all-constant row normalizes to exactly zero instead of NaN.
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Per-row layer normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Tensor2,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor2) -> Result<(Tensor2, LayerNormCache)> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "layer norm over {} features, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let (normalized, inv_std) = normalize_rows(x);
        let mut out = normalized.clone();
        for i in 0..out.rows() {
            for ((v, g), b) in out.row_mut(i).iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = *v * g + b;
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&self, cache: &LayerNormCache, grad_out: &Tensor2, grads: &mut [f64]) -> Tensor2 {
        let d = self.dim();
        let (g_gamma, g_beta) = grads.split_at_mut(d);
        let mut grad_in = Tensor2::zeros(grad_out.rows(), d);
        for i in 0..grad_out.rows() {
            let go = grad_out.row(i);
            let xhat = cache.normalized.row(i);
            let mut dxhat = vec![0.0; d];
            for j in 0..d {
                g_gamma[j] += go[j] * xhat[j];
                g_beta[j] += go[j];
                dxhat[j] = go[j] * self.gamma[j];
            }
            let sum: f64 = dxhat.iter().sum();
            let sum_x: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
            let scale = cache.inv_std[i] / d as f64;
            for (j, v) in grad_in.row_mut(i).iter_mut().enumerate() {
                *v = scale * (d as f64 * dxhat[j] - sum - xhat[j] * sum_x);
            }
        }
        grad_in
    }
}

/// Zero-mean, unit-variance rows (population variance); returns the
/// normalized tensor and each row's `1/sqrt(var + eps)`.
pub fn normalize_rows(x: &Tensor2) -> (Tensor2, Vec<f64>) {
    let d = x.cols() as f64;
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    (out, inv_std)
}

impl Parameterized for LayerNorm {
    fn param_count(&self) -> usize {
        2 * self.dim()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.gamma);
        out.extend_from_slice(&self.beta);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let d = self.dim();
        self.gamma.copy_from_slice(&src[..d]);
        self.beta.copy_from_slice(&src[d..2 * d]);
        2 * d
    }
}
