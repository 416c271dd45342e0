//! Minimal differentiable kernel: dense, conv, layer-norm and attention
//! layers with explicit backward passes, optimizers, a finite-difference
//! gradient checker and the checkpoint format.
//!
//! Every layer stores `f64` parameters and exposes them through
//! [`Parameterized`] as one flat vector. `backward` accumulates into a
//! gradient slice with the same layout, so models compose by offset.

mod attention;
pub mod checkpoint;
mod conv;
mod dense;
mod gradcheck;
mod norm;
pub mod optim;
mod tensor;

pub use attention::{AttentionBlock, AttentionCache};
pub use checkpoint::{load_checkpoint, save_checkpoint, Record};
pub use conv::{Conv1d, Conv1dCache};
pub use dense::{dropout_mask, Activation, Dense, DenseCache};
pub use gradcheck::grad_check;
pub use norm::{normalize_rows, LayerNorm, LayerNormCache, LAYER_NORM_EPS};
pub use tensor::{dot, norm, softmax_in_place, softmax_rows, Tensor2};

/// Forward-pass mode. `Train` activates dropout with masks drawn from the seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train(u64),
}

pub trait Parameterized {
    fn param_count(&self) -> usize;
    /// Append all parameters to `out` in a fixed layout.
    fn write_params(&self, out: &mut Vec<f64>);
    /// Overwrite parameters from the front of `src`; returns the count consumed.
    fn read_params(&mut self, src: &[f64]) -> usize;

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_params(&mut out);
        out
    }

    fn set_flat_params(&mut self, src: &[f64]) -> crate::Result<()> {
        if src.len() != self.param_count() {
            return Err(crate::Error::Dimension(format!(
                "{} values for {} parameters",
                src.len(),
                self.param_count()
            )));
        }
        self.read_params(src);
        Ok(())
    }
}
