use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{
    load_checkpoint, save_checkpoint, Activation, AttentionBlock, AttentionCache, Dense, DenseCache, Mode,
    Parameterized, Record, Tensor2,
};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Tokens the input embedding is split into.
    pub tokens: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_hidden: usize,
    pub output_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            tokens: 4,
            heads: 2,
            blocks: 2,
            ff_hidden: 16,
            output_dim: 16,
        }
    }
}

/// Self-attention encoder `g(·)`: the input vector is cut into
/// `token_count` consecutive chunks of `token_dim` values, passed through
/// stacked attention blocks, mean-pooled over tokens and projected.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub token_count: usize,
    pub token_dim: usize,
    pub blocks: Vec<AttentionBlock>,
    pub projection: Dense,
}

pub struct EncoderCache {
    blocks: Vec<AttentionCache>,
    projection: DenseCache,
}

impl EncoderModel {
    pub fn init(input_dim: usize, config: &EncoderConfig, seed: u64) -> Result<Self> {
        if config.tokens == 0 || input_dim % config.tokens != 0 {
            return Err(Error::Config(format!(
                "embedding dim {input_dim} cannot be split into {} tokens",
                config.tokens
            )));
        }
        if config.output_dim < 2 {
            return Err(Error::Config(format!("encoder output dim {} must be at least 2", config.output_dim)));
        }
        if config.blocks == 0 || config.ff_hidden == 0 {
            return Err(Error::Config("encoder needs at least one block and a non-empty feedforward".into()));
        }
        let token_dim = input_dim / config.tokens;
        let mut r = rng::rng(seed, &[0xe2c0]);
        let blocks = (0..config.blocks)
            .map(|_| AttentionBlock::init(token_dim, config.heads, config.ff_hidden, &mut r))
            .collect::<Result<_>>()?;
        let projection = Dense::init(token_dim, config.output_dim, Activation::Linear, 0.0, &mut r)?;
        Ok(Self {
            token_count: config.tokens,
            token_dim,
            blocks,
            projection,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.token_count * self.token_dim
    }

    pub fn output_dim(&self) -> usize {
        self.projection.outputs()
    }

    fn tokens(&self, y: &[f64]) -> Result<Tensor2> {
        if y.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "encoder expects a {}-d embedding ({} tokens x {}), got {}",
                self.input_dim(),
                self.token_count,
                self.token_dim,
                y.len()
            )));
        }
        Tensor2::from_vec(self.token_count, self.token_dim, y.to_vec())
    }

    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.tokens(y)?;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        Ok(self.projection.forward(&x.mean_rows(), Mode::Eval)?.into_vec())
    }

    pub fn forward_cached(&self, y: &[f64]) -> Result<(Vec<f64>, EncoderCache)> {
        let mut x = self.tokens(y)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, c) = b.forward_cached(&x)?;
            caches.push(c);
            x = out;
        }
        let (z, pc) = self.projection.forward_cached(&x.mean_rows(), Mode::Eval)?;
        Ok((
            z.into_vec(),
            EncoderCache {
                blocks: caches,
                projection: pc,
            },
        ))
    }

    /// Accumulate parameter gradients for output gradient `grad_z`.
    pub fn backward(&self, cache: &EncoderCache, grad_z: &[f64], grads: &mut [f64]) {
        let n_blocks: usize = self.blocks.iter().map(|b| b.param_count()).sum();
        let (g_blocks, g_proj) = grads.split_at_mut(n_blocks);
        let g_pooled = self
            .projection
            .backward(&cache.projection, &Tensor2::row_vector(grad_z), g_proj);
        let scale = 1.0 / self.token_count as f64;
        let mut g = Tensor2::zeros(self.token_count, self.token_dim);
        for t in 0..self.token_count {
            for (a, b) in g.row_mut(t).iter_mut().zip(g_pooled.row(0)) {
                *a = b * scale;
            }
        }
        let mut end = n_blocks;
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let start = end - b.param_count();
            g = b.backward(c, &g, &mut g_blocks[start..end]);
            end = start;
        }
    }

    pub fn to_records(&self) -> Vec<Record> {
        let mut out = vec![Record::TokenSplit {
            count: self.token_count,
            dim: self.token_dim,
        }];
        out.extend(self.blocks.iter().cloned().map(Record::Attention));
        out.push(Record::Dense(self.projection.clone()));
        out
    }

    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let bad = |m: &str| Error::Input(format!("encoder checkpoint: {m}"));
        let mut it = records.into_iter().peekable();
        let Some(Record::TokenSplit { count, dim }) = it.next() else {
            return Err(bad("first record must be a token split"));
        };
        let mut blocks = Vec::new();
        while let Some(Record::Attention(_)) = it.peek() {
            let Some(Record::Attention(b)) = it.next() else { unreachable!() };
            b.validate()?;
            if b.dim() != dim {
                return Err(bad(&format!("attention width {} for {dim}-d tokens", b.dim())));
            }
            blocks.push(b);
        }
        let (Some(Record::Dense(projection)), None) = (it.next(), it.next()) else {
            return Err(bad("expected a single projection after the attention blocks"));
        };
        if blocks.is_empty() || count == 0 || projection.inputs() != dim {
            return Err(bad("inconsistent shapes"));
        }
        Ok(Self {
            token_count: count,
            token_dim: dim,
            blocks,
            projection,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_records())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(load_checkpoint(path)?)
    }
}

impl Parameterized for EncoderModel {
    fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum::<usize>() + self.projection.param_count()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.write_params(out);
        }
        self.projection.write_params(out);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for b in &mut self.blocks {
            at += b.read_params(&src[at..]);
        }
        at + self.projection.read_params(&src[at..])
    }
}
