use rand::Rng;

use super::{Activation, Dense, DenseCache, Mode, Parameterized, Tensor2};
use crate::error::{Error, Result};

/// Valid (unpadded) 1-D convolution over time. Input is `T × in_channels`
/// with one row per frame; output is `(T - kernel + 1) × out_channels`.
///
/// Implemented as im2col followed by a [`Dense`] whose weight is
/// `(kernel · in_channels) × out_channels`, rows ordered by tap then channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub kernel: usize,
    pub in_channels: usize,
    pub linear: Dense,
}

#[derive(Clone, Debug)]
pub struct Conv1dCache {
    frames: usize,
    dense: DenseCache,
}

impl Conv1d {
    pub fn new(kernel: usize, in_channels: usize, linear: Dense) -> Result<Self> {
        if kernel == 0 || linear.inputs() != kernel * in_channels {
            return Err(Error::Dimension(format!(
                "conv kernel {kernel} x {in_channels} channels does not match weight rows {}",
                linear.inputs()
            )));
        }
        Ok(Self {
            kernel,
            in_channels,
            linear,
        })
    }

    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let linear = Dense::init(kernel * in_channels, out_channels, activation, 0.0, rng)?;
        Self::new(kernel, in_channels, linear)
    }

    pub fn out_channels(&self) -> usize {
        self.linear.outputs()
    }

    fn im2col(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.in_channels {
            return Err(Error::Dimension(format!(
                "conv expects {} channels, got {}",
                self.in_channels,
                x.cols()
            )));
        }
        if x.rows() < self.kernel {
            return Err(Error::Dimension(format!(
                "{} frames is shorter than kernel {}",
                x.rows(),
                self.kernel
            )));
        }
        let out_len = x.rows() - self.kernel + 1;
        let width = self.kernel * self.in_channels;
        let mut cols = Vec::with_capacity(out_len * width);
        for t in 0..out_len {
            cols.extend_from_slice(&x.data()[t * self.in_channels..(t + self.kernel) * self.in_channels]);
        }
        Tensor2::from_vec(out_len, width, cols)
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        self.linear.forward(&self.im2col(x)?, Mode::Eval)
    }

    pub fn forward_cached(&self, x: &Tensor2) -> Result<(Tensor2, Conv1dCache)> {
        let (y, dense) = self.linear.forward_cached(&self.im2col(x)?, Mode::Eval)?;
        Ok((
            y,
            Conv1dCache {
                frames: x.rows(),
                dense,
            },
        ))
    }

    pub fn backward(&self, cache: &Conv1dCache, grad_out: &Tensor2, grads: &mut [f64]) -> Tensor2 {
        let g_cols = self.linear.backward(&cache.dense, grad_out, grads);
        let mut grad_in = Tensor2::zeros(cache.frames, self.in_channels);
        let c = self.in_channels;
        for t in 0..g_cols.rows() {
            let src = g_cols.row(t);
            let dst = &mut grad_in.data_mut()[t * c..(t + self.kernel) * c];
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        grad_in
    }
}

impl Parameterized for Conv1d {
    fn param_count(&self) -> usize {
        self.linear.param_count()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        self.linear.write_params(out)
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        self.linear.read_params(src)
    }
}
