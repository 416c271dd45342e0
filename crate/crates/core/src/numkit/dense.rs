use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, Parameterized, Tensor2};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully connected layer `y = act(x·W + b)` followed by optional inverted
/// dropout in training mode. `weight` is `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor2,
    pre: Tensor2,
    /// Per-element multiplier (0 or 1/keep) when dropout was active.
    mask: Option<Vec<f64>>,
}

impl Dense {
    pub fn new(weight: Tensor2, bias: Vec<f64>, activation: Activation, dropout: f64) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Dimension(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(Self {
            weight,
            bias,
            activation,
            dropout,
        })
    }

    /// Uniform fan-in initialization (He for ReLU, Xavier otherwise), zero bias.
    pub fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let limit = match activation {
            Activation::Relu => (6.0 / inputs as f64).sqrt(),
            Activation::Linear => (6.0 / (inputs + outputs) as f64).sqrt(),
        };
        let data = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self::new(
            Tensor2::from_vec(inputs, outputs, data)?,
            vec![0.0; outputs],
            activation,
            dropout,
        )
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor2, mode: Mode) -> Result<Tensor2> {
        self.forward_cached(x, mode).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor2, mode: Mode) -> Result<(Tensor2, DenseCache)> {
        if x.cols() != self.inputs() {
            return Err(Error::Dimension(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.cols()
            )));
        }
        let mut pre = x.matmul(&self.weight)?;
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let mut out = pre.clone();
        if self.activation == Activation::Relu {
            out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let mask = match mode {
            Mode::Train(seed) if self.dropout > 0.0 => {
                let mask = dropout_mask(out.data().len(), self.dropout, seed);
                for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        Ok((
            out,
            DenseCache {
                input: x.clone(),
                pre,
                mask,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` (layout of
    /// [`Parameterized::write_params`]) and returns the input gradient.
    pub fn backward(&self, cache: &DenseCache, grad_out: &Tensor2, grads: &mut [f64]) -> Tensor2 {
        let mut g = grad_out.clone();
        if let Some(mask) = &cache.mask {
            for (v, m) in g.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        if self.activation == Activation::Relu {
            for (v, p) in g.data_mut().iter_mut().zip(cache.pre.data()) {
                if *p <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        let n_w = self.weight.data().len();
        let gw = cache.input.t_matmul(&g).expect("shapes checked in forward");
        for (a, b) in grads[..n_w].iter_mut().zip(gw.data()) {
            *a += b;
        }
        let gb = &mut grads[n_w..n_w + self.bias.len()];
        for i in 0..g.rows() {
            for (a, b) in gb.iter_mut().zip(g.row(i)) {
                *a += b;
            }
        }
        g.matmul_t(&self.weight).expect("shapes checked in forward")
    }
}

impl Parameterized for Dense {
    fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.data());
        out.extend_from_slice(&self.bias);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let n_w = self.weight.data().len();
        let n_b = self.bias.len();
        self.weight.data_mut().copy_from_slice(&src[..n_w]);
        self.bias.copy_from_slice(&src[n_w..n_w + n_b]);
        n_w + n_b
    }
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[Vec<f64>], b: Vec<f64>, act: Activation, rate: f64) -> Dense {
        Dense::new(Tensor2::from_rows(w).unwrap(), b, act, rate).unwrap()
    }

    #[test]
    fn identity_layer_is_identity() {
        let d = layer(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], Activation::Linear, 0.0);
        let x = Tensor2::from_rows(&[vec![0.3, -7.5], vec![2.0, 1e-3]]).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn affine_arithmetic() {
        let d = layer(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0], Activation::Linear, 0.0);
        let y = d.forward(&Tensor2::row_vector(&[1.0, 2.0]), Mode::Eval).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn dropout_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dense::init(6, 10, Activation::Relu, 0.5, &mut rng).unwrap();
        let x = Tensor2::from_vec(3, 6, (0..18).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = d.forward(&x, Mode::Train(42)).unwrap();
        let b = d.forward(&x, Mode::Train(42)).unwrap();
        assert_eq!(a.data(), b.data());
        let c = d.forward(&x, Mode::Train(43)).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn zero_rate_dropout_is_bit_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Dense::init(4, 4, Activation::Relu, 0.0, &mut rng).unwrap();
        let x = Tensor2::from_vec(2, 4, vec![0.5, -1.0, 2.0, 0.1, 1.0, 1.0, -3.0, 0.0]).unwrap();
        assert_eq!(
            d.forward(&x, Mode::Train(11)).unwrap(),
            d.forward(&x, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let d = layer(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], vec![0.0; 3], Activation::Linear, 0.3);
        let x = Tensor2::row_vector(&[1.0, 2.5, 0.7]);
        let trials = 10_000;
        let mut mean = [0.0; 3];
        for s in 0..trials {
            let y = d.forward(&x, Mode::Train(s)).unwrap();
            for (m, v) in mean.iter_mut().zip(y.data()) {
                *m += v / trials as f64;
            }
        }
        for (m, v) in mean.iter().zip(x.data()) {
            assert!((m - v).abs() / v < 0.02, "mean {m} vs {v}");
        }
    }

    #[test]
    fn shape_mismatch_and_bad_rate_rejected() {
        let d = layer(&[vec![1.0], vec![1.0]], vec![0.0], Activation::Linear, 0.0);
        assert!(matches!(
            d.forward(&Tensor2::row_vector(&[1.0]), Mode::Eval),
            Err(Error::Dimension(_))
        ));
        assert!(Dense::new(Tensor2::zeros(1, 1), vec![0.0], Activation::Linear, 1.0).is_err());
    }
}
