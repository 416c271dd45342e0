//! Transformer encoder block: multi-head scaled dot-product self-attention
//! and a position-wise feedforward, each wrapped in a residual connection
//! followed by layer normalization (post-norm). No positional encoding is
//! added, so the block is equivariant to token permutations.

use rand::Rng;

use super::norm::LayerNormCache;
use super::tensor::softmax_in_place;
use super::{Activation, Dense, DenseCache, LayerNorm, Mode, Parameterized, Tensor2};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub heads: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub norm1: LayerNorm,
    pub ff_in: Dense,
    pub ff_out: Dense,
    pub norm2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    q_cache: DenseCache,
    k_cache: DenseCache,
    v_cache: DenseCache,
    /// Attention weights, one `n × n` matrix per head.
    weights: Vec<Tensor2>,
    o_cache: DenseCache,
    n1_cache: LayerNormCache,
    ff_in_cache: DenseCache,
    ff_out_cache: DenseCache,
    n2_cache: LayerNormCache,
}

impl AttentionBlock {
    pub fn init(dim: usize, heads: usize, ff_hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "token dim {dim} is not divisible by {heads} heads"
            )));
        }
        let lin = |rng: &mut _| Dense::init(dim, dim, Activation::Linear, 0.0, rng);
        Ok(Self {
            heads,
            query: lin(rng)?,
            key: lin(rng)?,
            value: lin(rng)?,
            output: lin(rng)?,
            norm1: LayerNorm::new(dim),
            ff_in: Dense::init(dim, ff_hidden, Activation::Relu, 0.0, rng)?,
            ff_out: Dense::init(ff_hidden, dim, Activation::Linear, 0.0, rng)?,
            norm2: LayerNorm::new(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.query.inputs()
    }

    pub fn ff_hidden(&self) -> usize {
        self.ff_in.outputs()
    }

    fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// Check that every sub-layer agrees on the model dimension.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!(
                "token dim {d} is not divisible by {} heads",
                self.heads
            )));
        }
        let square = [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .all(|l| l.inputs() == d && l.outputs() == d);
        if !square
            || self.norm1.dim() != d
            || self.norm2.dim() != d
            || self.ff_in.inputs() != d
            || self.ff_out.inputs() != self.ff_in.outputs()
            || self.ff_out.outputs() != d
        {
            return Err(Error::Dimension(format!("inconsistent attention block of width {d}")));
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &Tensor2) -> Result<Tensor2> {
        self.forward_cached(tokens).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor2) -> Result<(Tensor2, AttentionCache)> {
        self.validate()?;
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "attention block of width {} got tokens of width {}",
                self.dim(),
                x.cols()
            )));
        }
        let (q, q_cache) = self.query.forward_cached(x, Mode::Eval)?;
        let (k, k_cache) = self.key.forward_cached(x, Mode::Eval)?;
        let (v, v_cache) = self.value.forward_cached(x, Mode::Eval)?;

        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Tensor2::zeros(x.rows(), self.dim());
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.col_slice(h * dh, dh);
            let kh = k.col_slice(h * dh, dh);
            let vh = v.col_slice(h * dh, dh);
            let mut scores = qh.matmul_t(&kh)?;
            scores.data_mut().iter_mut().for_each(|s| *s *= scale);
            for i in 0..scores.rows() {
                softmax_in_place(scores.row_mut(i));
            }
            concat.set_col_slice(h * dh, &scores.matmul(&vh)?);
            weights.push(scores);
        }

        let (attended, o_cache) = self.output.forward_cached(&concat, Mode::Eval)?;
        let mut resid1 = x.clone();
        resid1.add_assign(&attended);
        let (h1, n1_cache) = self.norm1.forward_cached(&resid1)?;

        let (hidden, ff_in_cache) = self.ff_in.forward_cached(&h1, Mode::Eval)?;
        let (ff, ff_out_cache) = self.ff_out.forward_cached(&hidden, Mode::Eval)?;
        let mut resid2 = h1;
        resid2.add_assign(&ff);
        let (out, n2_cache) = self.norm2.forward_cached(&resid2)?;

        Ok((
            out,
            AttentionCache {
                q,
                k,
                v,
                q_cache,
                k_cache,
                v_cache,
                weights,
                o_cache,
                n1_cache,
                ff_in_cache,
                ff_out_cache,
                n2_cache,
            },
        ))
    }

    pub fn backward(&self, cache: &AttentionCache, grad_out: &Tensor2, grads: &mut [f64]) -> Tensor2 {
        let offsets = self.offsets();
        let g = |i: usize| offsets[i]..offsets[i + 1];
        let (gq, rest) = grads.split_at_mut(offsets[1]);
        let (gk, rest) = rest.split_at_mut(offsets[2] - offsets[1]);
        let (gv, rest) = rest.split_at_mut(offsets[3] - offsets[2]);
        let (go, rest) = rest.split_at_mut(offsets[4] - offsets[3]);
        let (gn1, rest) = rest.split_at_mut(offsets[5] - offsets[4]);
        let (gff_in, rest) = rest.split_at_mut(offsets[6] - offsets[5]);
        let (gff_out, gn2) = rest.split_at_mut(offsets[7] - offsets[6]);
        debug_assert_eq!(gn2.len(), g(7).len());

        let d_resid2 = self.norm2.backward(&cache.n2_cache, grad_out, gn2);
        let d_hidden = self.ff_out.backward(&cache.ff_out_cache, &d_resid2, gff_out);
        let mut d_h1 = self.ff_in.backward(&cache.ff_in_cache, &d_hidden, gff_in);
        d_h1.add_assign(&d_resid2);

        let d_resid1 = self.norm1.backward(&cache.n1_cache, &d_h1, gn1);
        let d_concat = self.output.backward(&cache.o_cache, &d_resid1, go);

        let n = grad_out.rows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor2::zeros(n, self.dim());
        let mut dk = Tensor2::zeros(n, self.dim());
        let mut dv = Tensor2::zeros(n, self.dim());
        for (h, a) in cache.weights.iter().enumerate() {
            let qh = cache.q.col_slice(h * dh, dh);
            let kh = cache.k.col_slice(h * dh, dh);
            let vh = cache.v.col_slice(h * dh, dh);
            let d_oh = d_concat.col_slice(h * dh, dh);
            let d_a = d_oh.matmul_t(&vh).expect("head shapes");
            dv.set_col_slice(h * dh, &a.t_matmul(&d_oh).expect("head shapes"));
            // softmax backward, then the 1/sqrt(dh) scale
            let mut d_s = Tensor2::zeros(n, n);
            for i in 0..n {
                let ar = a.row(i);
                let dar = d_a.row(i);
                let inner: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
                for (j, v) in d_s.row_mut(i).iter_mut().enumerate() {
                    *v = ar[j] * (dar[j] - inner) * scale;
                }
            }
            dq.set_col_slice(h * dh, &d_s.matmul(&kh).expect("head shapes"));
            dk.set_col_slice(h * dh, &d_s.t_matmul(&qh).expect("head shapes"));
        }

        let mut dx = d_resid1;
        dx.add_assign(&self.query.backward(&cache.q_cache, &dq, gq));
        dx.add_assign(&self.key.backward(&cache.k_cache, &dk, gk));
        dx.add_assign(&self.value.backward(&cache.v_cache, &dv, gv));
        dx
    }

    /// Start offset of each sub-layer in the flat parameter vector, plus the total.
    fn offsets(&self) -> [usize; 9] {
        let sizes = [
            self.query.param_count(),
            self.key.param_count(),
            self.value.param_count(),
            self.output.param_count(),
            self.norm1.param_count(),
            self.ff_in.param_count(),
            self.ff_out.param_count(),
            self.norm2.param_count(),
        ];
        let mut out = [0; 9];
        for (i, s) in sizes.iter().enumerate() {
            out[i + 1] = out[i] + s;
        }
        out
    }
}

impl Parameterized for AttentionBlock {
    fn param_count(&self) -> usize {
        self.offsets()[8]
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        self.query.write_params(out);
        self.key.write_params(out);
        self.value.write_params(out);
        self.output.write_params(out);
        self.norm1.write_params(out);
        self.ff_in.write_params(out);
        self.ff_out.write_params(out);
        self.norm2.write_params(out);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        at += self.query.read_params(&src[at..]);
        at += self.key.read_params(&src[at..]);
        at += self.value.read_params(&src[at..]);
        at += self.output.read_params(&src[at..]);
        at += self.norm1.read_params(&src[at..]);
        at += self.ff_in.read_params(&src[at..]);
        at += self.ff_out.read_params(&src[at..]);
        at += self.norm2.read_params(&src[at..]);
        at
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_tokens(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = AttentionBlock::init(4, 2, 8, &mut rng).unwrap();
        let x = random_tokens(1, 4, 2);
        let (y, cache) = block.forward_cached(&x).unwrap();
        for w in &cache.weights {
            assert_eq!(w.data(), &[1.0]);
        }
        // rebuild the output by hand: attention output is the value projection
        let v = block.value.forward(&x, Mode::Eval).unwrap();
        let mut r1 = x.clone();
        r1.add_assign(&block.output.forward(&v, Mode::Eval).unwrap());
        let h1 = block.norm1.forward(&r1).unwrap();
        let ff = block
            .ff_out
            .forward(&block.ff_in.forward(&h1, Mode::Eval).unwrap(), Mode::Eval)
            .unwrap();
        let mut r2 = h1;
        r2.add_assign(&ff);
        assert_eq!(y, block.norm2.forward(&r2).unwrap());
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = AttentionBlock::init(8, 2, 16, &mut rng).unwrap();
        let x = random_tokens(4, 8, 3);
        let perm = [2, 0, 3, 1];
        let xp = Tensor2::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let y = block.forward(&x).unwrap();
        let yp = block.forward(&xp).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for (a, b) in yp.row(r).iter().zip(y.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block = AttentionBlock::init(8, 2, 16, &mut rng).unwrap();
        let y = block.forward(&random_tokens(4, 8, 4)).unwrap();
        assert_eq!(y.shape(), (4, 8));
        assert!(y.is_finite());
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(matches!(AttentionBlock::init(6, 4, 8, &mut rng), Err(Error::Config(_))));
    }
}
