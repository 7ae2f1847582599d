//! AST-style patch transformer: a `(T, 128)` feature map is cut into 16x16
//! patches, linearly embedded, prefixed with a class token, summed with
//! learned positional embeddings sized to the grid, and run through a
//! pre-norm transformer; a linear head over the class token emits the genre
//! logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::feature::FEATURE_BINS;
use crate::layers::{Linear, LayerNorm, StateDict, TransformerBlock};
use crate::tensor::gradcheck::CaseReport;
use crate::tensor::init::zeros_param;
use crate::tensor::{ops, Element, Result, Tape, Tensor, TensorError};

/// Patch-transformer sizing. The two published sizes are DeiT-Tiny and
/// DeiT-Small; `mini` exists for desk-scale tests.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AstConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub class_token: bool,
    pub distillation_token: bool,
}

impl AstConfig {
    pub fn deit_tiny() -> Self {
        AstConfig {
            patch: 16,
            embed_dim: 192,
            heads: 3,
            depth: 12,
            mlp_ratio: 4,
            num_classes: 10,
            class_token: true,
            distillation_token: false,
        }
    }

    pub fn deit_small() -> Self {
        AstConfig {
            embed_dim: 384,
            heads: 6,
            ..Self::deit_tiny()
        }
    }

    /// Small configuration for tests and the toy training tier.
    pub fn mini(embed_dim: usize, heads: usize, depth: usize, num_classes: usize) -> Self {
        AstConfig {
            patch: 16,
            embed_dim,
            heads,
            depth,
            mlp_ratio: 4,
            num_classes,
            class_token: true,
            distillation_token: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(TensorError::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.patch == 0 || FEATURE_BINS % self.patch != 0 {
            return Err(TensorError::Config(format!(
                "patch {} must divide the {FEATURE_BINS} feature bins",
                self.patch
            )));
        }
        if self.depth == 0 || self.num_classes == 0 {
            return Err(TensorError::Config("depth and classes must be >= 1".into()));
        }
        if !self.class_token {
            return Err(TensorError::Config(
                "class-token readout is the only supported head".into(),
            ));
        }
        if self.distillation_token {
            return Err(TensorError::Config(
                "distillation token unsupported: no teacher exists in this pipeline".into(),
            ));
        }
        Ok(())
    }

    pub fn grid_for(&self, time_steps: usize) -> PatchGrid {
        let padded_t = time_steps.div_ceil(self.patch) * self.patch;
        PatchGrid {
            rows: padded_t / self.patch,
            cols: FEATURE_BINS / self.patch,
            padded_t,
        }
    }

    /// Exact trainable-parameter count for one input path.
    pub fn parameter_count(&self, time_steps: usize) -> usize {
        let d = self.embed_dim;
        let linear = |i: usize, o: usize| i * o + o;
        let tokens = self.grid_for(time_steps).count() + 1;
        let block = 2 * (2 * d)
            + 4 * linear(d, d)
            + linear(d, d * self.mlp_ratio)
            + linear(d * self.mlp_ratio, d);
        linear(self.patch * self.patch, d)  // patch embedding
            + d                             // class token
            + tokens * d                    // positional table
            + self.depth * block
            + 2 * d                         // final norm
            + linear(d, self.num_classes)
    }
}

/// Patch-grid arithmetic for one input path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub padded_t: usize,
}

impl PatchGrid {
    pub fn count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Zero-pads the time axis to the patch multiple and cuts `[T, 128]` into
/// `[N, patch*patch]` tokens in row-major grid order.
pub fn patchify<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    patch: usize,
) -> Result<(Tensor<E>, PatchGrid)> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != FEATURE_BINS {
        return Err(TensorError::Config(format!(
            "classifier input must be [T, {FEATURE_BINS}], got {shape:?}"
        )));
    }
    let t = shape[0];
    let padded_t = t.div_ceil(patch) * patch;
    let padded = ops::pad_dim(tape, x, 0, 0, padded_t - t)?;
    let tokens = ops::extract_patches(tape, &padded, patch, patch)?;
    Ok((
        tokens,
        PatchGrid {
            rows: padded_t / patch,
            cols: FEATURE_BINS / patch,
            padded_t,
        },
    ))
}

/// The classifier. Positional embeddings are sized to one input path at
/// construction; inputs with a different time extent are rejected.
pub struct Ast<E: Element> {
    pub cfg: AstConfig,
    pub input_time_steps: usize,
    patch_embed: Linear<E>,
    class_token: Tensor<E>,
    positions: Tensor<E>,
    blocks: Vec<TransformerBlock<E>>,
    final_norm: LayerNorm<E>,
    head: Linear<E>,
}

impl<E: Element> Ast<E> {
    pub fn new(cfg: AstConfig, input_time_steps: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = cfg.grid_for(input_time_steps);
        let patch_embed = Linear::new(&mut rng, cfg.patch * cfg.patch, cfg.embed_dim);
        let blocks = (0..cfg.depth)
            .map(|_| TransformerBlock::new(&mut rng, cfg.embed_dim, cfg.heads, cfg.mlp_ratio))
            .collect::<Result<_>>()?;
        let head = Linear::new(&mut rng, cfg.embed_dim, cfg.num_classes);
        Ok(Ast {
            class_token: zeros_param(&[1, cfg.embed_dim]),
            positions: zeros_param(&[grid.count() + 1, cfg.embed_dim]),
            final_norm: LayerNorm::new(cfg.embed_dim),
            patch_embed,
            blocks,
            head,
            cfg,
            input_time_steps,
        })
    }

    pub fn grid(&self) -> PatchGrid {
        self.cfg.grid_for(self.input_time_steps)
    }

    /// `feature [T, 128] -> logits [num_classes]`.
    pub fn forward(&self, tape: &Tape<E>, feature: &Tensor<E>) -> Result<Tensor<E>> {
        if feature.shape()[0] != self.input_time_steps {
            return Err(TensorError::Config(format!(
                "this classifier is sized for {}-step features, got {}",
                self.input_time_steps,
                feature.shape()[0]
            )));
        }
        let (tokens, grid) = patchify(tape, feature, self.cfg.patch)?;
        debug_assert_eq!(grid, self.grid());
        let embedded = self.patch_embed.forward(tape, &tokens)?;
        let with_class = ops::concat(tape, &[&self.class_token, &embedded], 0)?;
        let mut x = ops::add(tape, &with_class, &self.positions);
        let token_count = x.shape().to_vec();
        for block in &self.blocks {
            x = block.forward(tape, &x)?;
            debug_assert_eq!(x.shape(), &token_count[..]);
        }
        let x = self.final_norm.forward(tape, &x)?;
        let class_row = ops::narrow(tape, &x, 0, 0, 1)?;
        let logits = self.head.forward(tape, &class_row)?;
        logits.assert_finite("classifier logits")?;
        ops::reshape(tape, &logits, &[self.cfg.num_classes])
    }

    /// Test hook: replaces the zero-initialized positional table (training
    /// would otherwise have to run before position sensitivity shows up).
    pub fn randomize_positions(&self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..self.positions.numel())
            .map(|_| E::lit(rng.gen_range(-0.5..0.5)))
            .collect();
        self.positions.set_data(values).expect("same shape");
    }

    /// The genre head (exposed so tests can build degenerate predictors).
    pub fn head(&self) -> &Linear<E> {
        &self.head
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        self.patch_embed.state_into(&format!("{prefix}.patch_embed"), out);
        out.push((format!("{prefix}.class_token"), self.class_token.clone(), true));
        out.push((format!("{prefix}.positions"), self.positions.clone(), true));
        for (i, block) in self.blocks.iter().enumerate() {
            block.state_into(&format!("{prefix}.block{i}"), out);
        }
        self.final_norm.state_into(&format!("{prefix}.final_norm"), out);
        self.head.state_into(&format!("{prefix}.head"), out);
    }
}

/// End-to-end gradient check of a 2-block miniature on a `[32, 128]`
/// feature, against central finite differences on sampled coordinates.
///
/// Differences are evaluated on an `f64` mirror carrying the exact same
/// weights: the f32 forward's own rounding noise would otherwise swamp the
/// quotient, and casting f32 weights up is lossless, so the mirror computes
/// the true derivative the analytic f32 gradient is compared against.
pub fn mini_ast_gradcheck<E: Element>(seeds: usize, base_seed: u64) -> CaseReport {
    let coords_per_param = 6;
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for s in 0..seeds {
        let seed = base_seed.wrapping_add(s as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let model: Ast<E> = Ast::new(AstConfig::mini(16, 2, 2, 10), 32, seed).expect("mini config");
        model.randomize_positions(seed ^ 1);
        let mirror: Ast<f64> = Ast::new(AstConfig::mini(16, 2, 2, 10), 32, seed).expect("mini config");
        let feature_values: Vec<f64> = (0..32 * FEATURE_BINS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let feature = Tensor::new(
            feature_values.iter().map(|&v| E::lit(v)).collect(),
            &[32, FEATURE_BINS],
        )
        .expect("feature shape");
        let feature64 =
            Tensor::new(feature_values, &[32, FEATURE_BINS]).expect("feature shape");
        let label = rng.gen_range(0..10usize);

        let mut state = StateDict::new();
        model.state_into("ast", &mut state);
        let mut mirror_state = StateDict::new();
        mirror.state_into("ast", &mut mirror_state);
        for ((_, param, _), (_, twin, _)) in state.iter().zip(&mirror_state) {
            twin.set_data(param.values().iter().map(|v| v.as_f64()).collect())
                .expect("same shape");
        }

        let eval_mirror = || -> f64 {
            let tape = Tape::inference();
            let logits = mirror.forward(&tape, &feature64).expect("forward");
            let batched = ops::reshape(&tape, &logits, &[1, 10]).expect("reshape");
            ops::softmax_cross_entropy(&tape, &batched, &[label])
                .expect("loss")
                .item()
        };

        let tape = Tape::new();
        let logits = model.forward(&tape, &feature).expect("forward");
        let batched = ops::reshape(&tape, &logits, &[1, 10]).expect("reshape");
        let loss = ops::softmax_cross_entropy(&tape, &batched, &[label]).expect("loss");
        tape.backward(&loss).expect("backward");

        for ((_, param, trainable), (_, twin, _)) in state.iter().zip(&mirror_state) {
            if !trainable {
                continue;
            }
            let analytic = param.grad().unwrap_or_else(|| vec![E::zero(); param.numel()]);
            let original = twin.to_vec();
            for _ in 0..coords_per_param.min(param.numel()) {
                let i = rng.gen_range(0..param.numel());
                let mut bumped = original.clone();
                bumped[i] = original[i] + h;
                twin.set_data(bumped.clone()).expect("same shape");
                let plus = eval_mirror();
                bumped[i] = original[i] - h;
                twin.set_data(bumped).expect("same shape");
                let minus = eval_mirror();
                twin.set_data(original.clone()).expect("same shape");
                let fd = (plus - minus) / (2.0 * h);
                let a = analytic[i].as_f64();
                let rel = (a - fd).abs() / 1.0f64.max(a.abs()).max(fd.abs());
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    CaseReport {
        name: "mini_ast_end_to_end",
        seeds,
        max_rel_err: max_rel,
        tolerance: 1e-3,
    }
}
