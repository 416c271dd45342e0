//! Parameter checkpoint format.
//!
//! ```text
//! "ONRK"  u16 version  u32 record_count
//! record: u8 kind, shape fields (u32 unless noted), f32 LE payload
//!   0 dense       in, out, activation u8, dropout f32, weight[in*out], bias[out]
//!   1 attention   dim, heads, ff_hidden, parameters in block order
//!   2 layer-norm  dim, gamma[dim], beta[dim]
//!   3 conv1d      kernel, in_channels, out_channels, activation u8, weight, bias
//!   4 token-split token_count, token_dim (no payload)
//! ```

use std::path::Path;

use super::{Activation, AttentionBlock, Conv1d, Dense, LayerNorm, Parameterized, Tensor2};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::Result;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ONRK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Dense(Dense),
    Attention(AttentionBlock),
    LayerNorm(LayerNorm),
    Conv1d(Conv1d),
    TokenSplit { count: usize, dim: usize },
}

impl Record {
    fn tag(&self) -> u8 {
        match self {
            Record::Dense(_) => 0,
            Record::Attention(_) => 1,
            Record::LayerNorm(_) => 2,
            Record::Conv1d(_) => 3,
            Record::TokenSplit { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Record::Dense(_) => "dense",
            Record::Attention(_) => "attention-block",
            Record::LayerNorm(_) => "layer-norm",
            Record::Conv1d(_) => "conv1d",
            Record::TokenSplit { .. } => "token-split",
        }
    }
}

pub fn encode_checkpoint(records: &[Record]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.len_u32(records.len(), "record count")?;
    for rec in records {
        w.u8(rec.tag());
        match rec {
            Record::Dense(d) => {
                w.len_u32(d.inputs(), "dense inputs")?;
                w.len_u32(d.outputs(), "dense outputs")?;
                w.u8(d.activation.tag());
                w.f32(d.dropout as f32);
                w.f32s(d.weight.data());
                w.f32s(&d.bias);
            }
            Record::Attention(a) => {
                w.len_u32(a.dim(), "attention dim")?;
                w.len_u32(a.heads, "attention heads")?;
                w.len_u32(a.ff_hidden(), "feedforward width")?;
                let mut flat = Vec::with_capacity(a.param_count());
                a.write_params(&mut flat);
                w.f32s(&flat);
            }
            Record::LayerNorm(n) => {
                w.len_u32(n.dim(), "layer-norm dim")?;
                w.f32s(&n.gamma);
                w.f32s(&n.beta);
            }
            Record::Conv1d(c) => {
                w.len_u32(c.kernel, "conv kernel")?;
                w.len_u32(c.in_channels, "conv input channels")?;
                w.len_u32(c.out_channels(), "conv output channels")?;
                w.u8(c.linear.activation.tag());
                w.f32s(c.linear.weight.data());
                w.f32s(&c.linear.bias);
            }
            Record::TokenSplit { count, dim } => {
                w.len_u32(*count, "token count")?;
                w.len_u32(*dim, "token dim")?;
            }
        }
    }
    Ok(w.finish())
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let mut r = Reader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = r.u8()?;
        let rec = match tag {
            0 => {
                let (inp, out) = (r.u32()? as usize, r.u32()? as usize);
                let act = activation(&mut r)?;
                let dropout = r.f32()? as f64;
                let weight = Tensor2::from_vec(inp, out, r.f32s(inp * out)?)?;
                let bias = r.f32s(out)?;
                Record::Dense(Dense::new(weight, bias, act, dropout).map_err(|e| r.err(e.to_string()))?)
            }
            1 => {
                let (dim, heads, hidden) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
                if heads == 0 || dim % heads != 0 {
                    return Err(r.err(format!("attention width {dim} with {heads} heads")));
                }
                let mut block = AttentionBlock {
                    heads,
                    query: zero_dense(dim, dim, Activation::Linear),
                    key: zero_dense(dim, dim, Activation::Linear),
                    value: zero_dense(dim, dim, Activation::Linear),
                    output: zero_dense(dim, dim, Activation::Linear),
                    norm1: LayerNorm::new(dim),
                    ff_in: zero_dense(dim, hidden, Activation::Relu),
                    ff_out: zero_dense(hidden, dim, Activation::Linear),
                    norm2: LayerNorm::new(dim),
                };
                let flat = r.f32s(block.param_count())?;
                block.read_params(&flat);
                Record::Attention(block)
            }
            2 => {
                let dim = r.u32()? as usize;
                Record::LayerNorm(LayerNorm {
                    gamma: r.f32s(dim)?,
                    beta: r.f32s(dim)?,
                })
            }
            3 => {
                let (kernel, inc, outc) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
                let act = activation(&mut r)?;
                let weight = Tensor2::from_vec(kernel * inc, outc, r.f32s(kernel * inc * outc)?)?;
                let bias = r.f32s(outc)?;
                let linear = Dense::new(weight, bias, act, 0.0)?;
                Record::Conv1d(Conv1d::new(kernel, inc, linear).map_err(|e| r.err(e.to_string()))?)
            }
            4 => Record::TokenSplit {
                count: r.u32()? as usize,
                dim: r.u32()? as usize,
            },
            other => return Err(r.err(format!("unknown record kind {other}"))),
        };
        records.push(rec);
    }
    r.finish()?;
    Ok(records)
}

fn activation(r: &mut Reader<'_>) -> Result<Activation> {
    let tag = r.u8()?;
    Activation::from_tag(tag).ok_or_else(|| r.err(format!("unknown activation {tag}")))
}

fn zero_dense(inputs: usize, outputs: usize, activation: Activation) -> Dense {
    Dense {
        weight: Tensor2::zeros(inputs, outputs),
        bias: vec![0.0; outputs],
        activation,
        dropout: 0.0,
    }
}

pub fn save_checkpoint(path: &Path, records: &[Record]) -> Result<()> {
    write_file(path, &encode_checkpoint(records)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Record>> {
    decode_checkpoint(&read_file(path)?, path)
}

/// Round every parameter to `f32`, as a save/load cycle would.
pub fn quantize(records: &[Record]) -> Result<Vec<Record>> {
    let bytes = encode_checkpoint(records)?;
    decode_checkpoint(&bytes, Path::new("<memory>"))
}
