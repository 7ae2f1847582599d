//! Attention extractor: the ResNet backbone's `(128, T, 4)` grid, width-
//! averaged into `T` tokens of dimension 128, run through a small stack of
//! attention blocks with fixed sinusoidal positions.
//!
//! Training this variant is known to diverge; the training loop reports the
//! non-finite loss instead of crashing, which is the expected outcome, not
//! a defect here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{sinusoidal_positions, StateDict, TransformerBlock};
use crate::tensor::{ops, Element, Result, Tape, Tensor};

use super::gafx_r::{GafxR, GafxRConfig, FEATURE_CHANNELS};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GafxAConfig {
    pub backbone: GafxRConfig,
    pub depth: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl GafxAConfig {
    pub fn new(width_scale: usize) -> Self {
        GafxAConfig {
            backbone: GafxRConfig::new(width_scale),
            depth: 2,
            model_dim: FEATURE_CHANNELS,
            heads: 4,
            mlp_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.model_dim != FEATURE_CHANNELS {
            return Err(crate::tensor::TensorError::Config(format!(
                "attention dim {} must match the {FEATURE_CHANNELS}-channel backbone output",
                self.model_dim
            )));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(crate::tensor::TensorError::Config(format!(
                "attention dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.depth == 0 {
            return Err(crate::tensor::TensorError::Config(
                "attention depth must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let d = self.model_dim;
        let linear = |i: usize, o: usize| i * o + o;
        let block = 2 * (2 * d) // two layer norms
            + 4 * linear(d, d) // q, k, v, o
            + linear(d, d * self.mlp_ratio)
            + linear(d * self.mlp_ratio, d);
        self.backbone.parameter_count() + self.depth * block
    }
}

pub struct GafxA<E: Element> {
    pub cfg: GafxAConfig,
    backbone: GafxR<E>,
    blocks: Vec<TransformerBlock<E>>,
}

impl<E: Element> GafxA<E> {
    pub fn new(cfg: GafxAConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let backbone = GafxR::new(cfg.backbone.clone(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA77E_17_10);
        let blocks = (0..cfg.depth)
            .map(|_| TransformerBlock::new(&mut rng, cfg.model_dim, cfg.heads, cfg.mlp_ratio))
            .collect::<Result<_>>()?;
        Ok(GafxA {
            cfg,
            backbone,
            blocks,
        })
    }

    /// `waveform[L] -> feature [rows, 128]`.
    pub fn forward(&self, tape: &Tape<E>, waveform: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        Ok(self.forward_with_attn(tape, waveform, training)?.0)
    }

    /// Forward that also returns every block's per-head attention matrices.
    pub fn forward_with_attn(
        &self,
        tape: &Tape<E>,
        waveform: &Tensor<E>,
        training: bool,
    ) -> Result<(Tensor<E>, Vec<Vec<Tensor<E>>>)> {
        let mut tokens = self.backbone.forward(tape, waveform, training)?;
        let positions = sinusoidal_positions::<E>(tokens.shape()[0], self.cfg.model_dim);
        tokens = ops::add(tape, &tokens, &positions);
        let mut attns = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, a) = block.forward_with_attn(tape, &tokens)?;
            tokens = next;
            attns.push(a);
        }
        Ok((tokens, attns))
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        self.backbone.state_into(&format!("{prefix}.backbone"), out);
        for (i, block) in self.blocks.iter().enumerate() {
            block.state_into(&format!("{prefix}.block{i}"), out);
        }
    }
}
