//! Seeded parameter store and the transformer blocks shared by the image
//! encoder, the prompt fusion encoder and the text encoder.

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Linear, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::Result;

/// Creates named parameters from a seeded generator, so that a model built
/// twice from the same seed is bit-identical.
pub struct ParamStore {
    varmap: VarMap,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            varmap: VarMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn into_varmap(self) -> VarMap {
        self.varmap
    }

    pub fn tensor_from(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.varmap.data().lock().unwrap().insert(name.to_string(), var);
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.tensor_from(name, values, shape)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.tensor_from(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.tensor_from(name, vec![value; n], shape)
    }

    /// Linear layer with the usual `U(-1/sqrt(in), 1/sqrt(in))` initialization.
    pub fn linear(&mut self, name: &str, input: usize, output: usize) -> Result<Linear> {
        let bound = 1.0 / (input as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[output, input], bound)?;
        let b = self.uniform(&format!("{name}.bias"), &[output], bound)?;
        Ok(Linear::new(w, Some(b)))
    }

    /// Linear layer whose bias starts at a constant.
    pub fn linear_const_bias(&mut self, name: &str, input: usize, output: usize, bias: f64) -> Result<Linear> {
        let bound = 1.0 / (input as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[output, input], bound)?;
        let b = self.constant(&format!("{name}.bias"), &[output], bias)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        let w = self.constant(&format!("{name}.weight"), &[dim], 1.0)?;
        let b = self.constant(&format!("{name}.bias"), &[dim], 0.0)?;
        Ok(LayerNorm { weight: w, bias: b, eps: 1e-5 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

/// Layer normalization over the last dimension, built from primitive tensor
/// ops so that it differentiates at any float precision.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl Module for LayerNorm {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let centered = xs.broadcast_sub(&xs.mean_keepdim(D::Minus1)?)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl Block {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            ln1: ps.layer_norm(&format!("{name}.ln1"), d)?,
            qkv: ps.linear(&format!("{name}.attn.qkv"), d, 3 * d)?,
            proj: ps.linear(&format!("{name}.attn.proj"), d, d)?,
            ln2: ps.layer_norm(&format!("{name}.ln2"), d)?,
            fc1: ps.linear(&format!("{name}.mlp.fc1"), d, cfg.mlp_dim)?,
            fc2: ps.linear(&format!("{name}.mlp.fc2"), cfg.mlp_dim, d)?,
            heads: cfg.heads,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let (b, n, d) = xs.dims3()?;
        let hd = d / self.heads;
        let qkv = self
            .qkv
            .forward(&self.ln1.forward(xs)?)?
            .reshape((b, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let att = (q.matmul(&k.t()?)? * (1.0 / (hd as f64).sqrt()))?;
        let att = candle_nn::ops::softmax(&att, D::Minus1)?;
        let o = att.matmul(&v)?.transpose(1, 2)?.reshape((b, n, d))?;
        let xs = (xs + self.proj.forward(&o)?)?;
        let h = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&xs)?)?.gelu()?)?;
        xs + h
    }
}

/// Stack of blocks with a final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        if cfg.heads == 0 || cfg.dim % cfg.heads != 0 {
            return Err(crate::Error::Config(format!(
                "{name}: dim {} is not divisible by {} heads",
                cfg.dim, cfg.heads
            )));
        }
        let blocks = (0..cfg.layers)
            .map(|i| Block::new(ps, &format!("{name}.blocks.{i}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            norm: ps.layer_norm(&format!("{name}.norm"), cfg.dim)?,
        })
    }

    /// `(B, N, d) -> (B, N, d)`.
    pub fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = xs.clone();
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        self.norm.forward(&h)
    }
}

/// Mean over the token axis: `(B, N, d) -> (B, d)`.
pub fn mean_pool(xs: &Tensor) -> candle_core::Result<Tensor> {
    xs.mean(D::Minus2)
}

/// Anything that maps a token sequence `(B, N, d)` to hidden states of the
/// same shape. The desk default is [`Encoder`] with learned positions; larger
/// backbones plug in through this trait.
pub trait SequenceEncoder {
    fn encode(&self, tokens: &Tensor) -> candle_core::Result<Tensor>;
}

impl SequenceEncoder for Encoder {
    fn encode(&self, tokens: &Tensor) -> candle_core::Result<Tensor> {
        self.forward(tokens)
    }
}
