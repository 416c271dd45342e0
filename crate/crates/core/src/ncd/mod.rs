//! Contrastive novel class discovery: pairwise pseudo-labels, the BCE,
//! consistency and contrastive objectives, hard-negative mining, the
//! self-attention encoder `g(·)` and its training loop.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::features::ViewParams;

mod encoder;
mod losses;
mod mining;
mod similarity;
mod train;

pub use encoder::{EncoderCache, EncoderConfig, EncoderModel};
pub use losses::{
    bce_loss, bce_loss_grad, consistency_loss, consistency_loss_grad, contrastive_loss, contrastive_loss_grad,
    total_loss, ConsistencyGrads, ContrastiveGrads,
};
pub use mining::{hard_negatives, positive_set, sibling_indices};
pub use similarity::{
    build_pseudo_labels, cosine_sim, cosine_with_grad, pair_affinity, PairOrigin, PairPseudoLabel, AFFINITY_CLAMP,
};
pub use train::{encode_all, prepare_inputs, train_encoder, train_ncd, NcdEpochLog, NcdInputs, NcdLog};

/// Which loss terms drive the gradient. All three are always computed and
/// logged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LossMask {
    pub bce: bool,
    pub cl: bool,
    pub mse: bool,
}

impl TryFrom<String> for LossMask {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<LossMask> for String {
    fn from(m: LossMask) -> String {
        m.name()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcdConfig {
    /// Pseudo-label similarity threshold.
    pub delta: f64,
    pub hard_negatives: usize,
    pub tau: f64,
    /// Weight of the contrastive term.
    pub beta: f64,
    /// Weight of the consistency term.
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub shift_seconds: f64,
    pub gain_up: f64,
    pub gain_down: f64,
    pub mask: LossMask,
    pub encoder: EncoderConfig,
}

impl Default for NcdConfig {
    fn default() -> Self {
        Self {
            delta: 0.9,
            hard_negatives: 32,
            tau: 0.5,
            beta: 1.0,
            gamma: 1.0,
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            shift_seconds: 2.0,
            gain_up: 1.2,
            gain_down: 0.8,
            mask: LossMask::FULL,
            encoder: EncoderConfig::default(),
        }
    }
}

impl NcdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > -1.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("ncd.delta {} outside (-1, 1)", self.delta)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("ncd.tau {} must be positive", self.tau)));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "ncd.beta {} and ncd.gamma {} must be non-negative",
                self.beta, self.gamma
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("ncd.batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("ncd.lr {} must be finite and >= 0", self.lr)));
        }
        if !(self.gain_up > 0.0 && self.gain_down > 0.0 && self.shift_seconds >= 0.0) {
            return Err(Error::Config("ncd view gains must be positive and shift non-negative".into()));
        }
        Ok(())
    }

    pub fn view_params(&self) -> ViewParams {
        ViewParams {
            shift_seconds: self.shift_seconds,
            gain_up: self.gain_up,
            gain_down: self.gain_down,
        }
    }
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"NCDE";

/// `"NCDE"`, u32 rows, u32 dim, then row-major f32 values.
pub fn encode_embeddings(rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("embedding rows differ in length".into()));
    }
    let mut w = Writer::new();
    w.bytes(EMBEDDING_MAGIC);
    w.len_u32(rows.len(), "embedding count")?;
    w.len_u32(d, "embedding dim")?;
    for r in rows {
        w.f32s(r);
    }
    Ok(w.finish())
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = Reader::new(bytes, path);
    r.magic(EMBEDDING_MAGIC)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let flat = r.f32s(n.checked_mul(d).ok_or_else(|| r.err("size overflow"))?)?;
    r.finish()?;
    Ok(if d == 0 {
        vec![Vec::new(); n]
    } else {
        flat.chunks(d).map(<[f64]>::to_vec).collect()
    })
}

pub fn write_embeddings(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    write_file(path, &encode_embeddings(rows)?)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Vec<f64>>> {
    decode_embeddings(&read_file(path)?, path)
}

#[cfg(test)]
mod tests;
