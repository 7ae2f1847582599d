//! ResNet-style extractor over the reshaped waveform.
//!
//! A 30 s 22050 Hz mono clip (661500 samples, zero-padded to 661600) is
//! viewed as a `(1, 3308, 200)` image; a 7x7 stem and five stages of two
//! basic blocks stride the 200-wide axis down to 4 while the time axis
//! stays put. Averaging the width axis and transposing yields `(3308, 128)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{BatchNorm, Conv2dLayer, StateDict};
use crate::tensor::{ops, Element, Result, Tape, Tensor};

use super::scaled_channels;

/// Samples per time row of the reshaped input.
pub const ROW_WIDTH: usize = 200;
/// Output feature bins; stage 5 always emits this many channels.
pub const FEATURE_CHANNELS: usize = 128;

const STEM_CHANNELS: usize = 64;
const STAGE_CHANNELS: [usize; 5] = [64, 128, 256, 512, FEATURE_CHANNELS];
const STAGE_STRIDES: [(usize, usize); 5] = [(1, 1), (1, 2), (1, 2), (1, 2), (1, 2)];
const BLOCKS_PER_STAGE: usize = 2;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GafxRConfig {
    /// Divisor on the stem and stage 1-4 channel counts. Stage 5 stays at
    /// 128 channels — it is the feature dimension.
    pub width_scale: usize,
}

impl GafxRConfig {
    pub fn new(width_scale: usize) -> Self {
        GafxRConfig { width_scale }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel_plan().map(|_| ())
    }

    pub fn stem_channels(&self) -> Result<usize> {
        scaled_channels(STEM_CHANNELS, self.width_scale)
    }

    /// Scaled per-stage output channels; the last stage is never scaled.
    pub fn channel_plan(&self) -> Result<Vec<usize>> {
        let mut plan = Vec::with_capacity(STAGE_CHANNELS.len());
        for (i, &c) in STAGE_CHANNELS.iter().enumerate() {
            plan.push(if i + 1 == STAGE_CHANNELS.len() {
                c
            } else {
                scaled_channels(c, self.width_scale)?
            });
        }
        Ok(plan)
    }

    /// Width-axis extents after the stem, pool, and each stage.
    pub fn width_trace(&self, input_width: usize) -> Vec<usize> {
        let conv = |w: usize, k: usize, s: usize, p: usize| (w + 2 * p - k) / s + 1;
        let mut trace = Vec::new();
        let mut w = conv(input_width, 7, 2, 3);
        trace.push(w);
        w = conv(w, 3, 2, 1); // max pool
        trace.push(w);
        for &(_, sw) in &STAGE_STRIDES {
            w = conv(w, 3, sw, 1);
            trace.push(w);
        }
        trace
    }

    /// Exact trainable-parameter count from the config tables.
    pub fn parameter_count(&self) -> usize {
        let plan = self.channel_plan().expect("validated config");
        let stem = self.stem_channels().expect("validated config");
        let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
        let bn = |c: usize| 2 * c;
        let mut total = conv(1, stem, 7) + bn(stem);
        let mut cin = stem;
        for (i, &cout) in plan.iter().enumerate() {
            for b in 0..BLOCKS_PER_STAGE {
                let stride = if b == 0 { STAGE_STRIDES[i] } else { (1, 1) };
                total += conv(cin, cout, 3) + bn(cout) + conv(cout, cout, 3) + bn(cout);
                if cin != cout || stride != (1, 1) {
                    total += conv(cin, cout, 1) + bn(cout);
                }
                cin = cout;
            }
        }
        total
    }
}

struct BasicBlock<E: Element> {
    conv1: Conv2dLayer<E>,
    bn1: BatchNorm<E>,
    conv2: Conv2dLayer<E>,
    bn2: BatchNorm<E>,
    shortcut: Option<(Conv2dLayer<E>, BatchNorm<E>)>,
}

impl<E: Element> BasicBlock<E> {
    fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, stride: (usize, usize)) -> Self {
        let shortcut = (cin != cout || stride != (1, 1)).then(|| {
            (
                Conv2dLayer::new(rng, cin, cout, (1, 1), stride, (0, 0)),
                BatchNorm::new(cout),
            )
        });
        BasicBlock {
            conv1: Conv2dLayer::new(rng, cin, cout, (3, 3), stride, (1, 1)),
            bn1: BatchNorm::new(cout),
            conv2: Conv2dLayer::new(rng, cout, cout, (3, 3), (1, 1), (1, 1)),
            bn2: BatchNorm::new(cout),
            shortcut,
        }
    }

    fn forward(&self, tape: &Tape<E>, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let mut h = self.conv1.forward(tape, x)?;
        h = self.bn1.forward(tape, &h, training)?;
        h = ops::relu(tape, &h);
        h = self.conv2.forward(tape, &h)?;
        h = self.bn2.forward(tape, &h, training)?;
        let identity = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(tape, x)?;
                bn.forward(tape, &s, training)?
            }
            None => x.clone(),
        };
        Ok(ops::relu(tape, &ops::add(tape, &h, &identity)))
    }

    fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        self.conv1.state_into(&format!("{prefix}.conv1"), out);
        self.bn1.state_into(&format!("{prefix}.bn1"), out);
        self.conv2.state_into(&format!("{prefix}.conv2"), out);
        self.bn2.state_into(&format!("{prefix}.bn2"), out);
        if let Some((conv, bn)) = &self.shortcut {
            conv.state_into(&format!("{prefix}.shortcut.conv"), out);
            bn.state_into(&format!("{prefix}.shortcut.bn"), out);
        }
    }
}

pub struct GafxR<E: Element> {
    pub cfg: GafxRConfig,
    stem: Conv2dLayer<E>,
    stem_bn: BatchNorm<E>,
    stages: Vec<Vec<BasicBlock<E>>>,
}

impl<E: Element> GafxR<E> {
    pub fn new(cfg: GafxRConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_ch = cfg.stem_channels()?;
        let stem = Conv2dLayer::new(&mut rng, 1, stem_ch, (7, 7), (1, 2), (3, 3));
        let stem_bn = BatchNorm::new(stem_ch);
        let plan = cfg.channel_plan()?;
        let mut stages = Vec::with_capacity(plan.len());
        let mut cin = stem_ch;
        for (i, &cout) in plan.iter().enumerate() {
            let mut blocks = Vec::with_capacity(BLOCKS_PER_STAGE);
            for b in 0..BLOCKS_PER_STAGE {
                let stride = if b == 0 { STAGE_STRIDES[i] } else { (1, 1) };
                blocks.push(BasicBlock::new(&mut rng, cin, cout, stride));
                cin = cout;
            }
            stages.push(blocks);
        }
        Ok(GafxR {
            cfg,
            stem,
            stem_bn,
            stages,
        })
    }

    /// Time rows produced for a waveform of `len` samples.
    pub fn time_rows(len: usize) -> usize {
        len.div_ceil(ROW_WIDTH)
    }

    /// `waveform[L] -> feature [rows, 128]`, where `rows = ceil(L/200)`.
    pub fn forward(&self, tape: &Tape<E>, waveform: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let grid = self.forward_grid(tape, waveform, training)?;
        // (128, rows, 4) -> average the width axis -> (rows, 128)
        let pooled = ops::mean_axis(tape, &grid, 2)?;
        ops::transpose2d(tape, &pooled)
    }

    /// The pre-pooling `[128, rows, w]` activation grid (shared with the
    /// attention extractor).
    pub fn forward_grid(
        &self,
        tape: &Tape<E>,
        waveform: &Tensor<E>,
        training: bool,
    ) -> Result<Tensor<E>> {
        let len = waveform.numel();
        let rows = Self::time_rows(len);
        let padded = ops::pad_dim(tape, &ops::reshape(tape, waveform, &[1, len])?, 1, 0, rows * ROW_WIDTH - len)?;
        let mut x = ops::reshape(tape, &padded, &[1, rows, ROW_WIDTH])?;
        x = self.stem.forward(tape, &x)?;
        x = self.stem_bn.forward(tape, &x, training)?;
        x = ops::relu(tape, &x);
        x = ops::max_pool2d(tape, &x, (3, 3), (1, 2), (1, 1))?;
        for stage in &self.stages {
            for block in stage {
                x = block.forward(tape, &x, training)?;
            }
        }
        Ok(x)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        self.stem.state_into(&format!("{prefix}.stem"), out);
        self.stem_bn.state_into(&format!("{prefix}.stem_bn"), out);
        for (i, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.state_into(&format!("{prefix}.stage{i}.block{b}"), out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{parameter_count, trainable};

    #[test]
    fn width_trace_matches_published_pipeline() {
        let cfg = GafxRConfig::new(1);
        assert_eq!(cfg.width_trace(200), vec![100, 50, 50, 25, 13, 7, 4]);
    }

    #[test]
    fn stem_conv_parameters_match_hand_count() {
        // 7*7*1*64 weights + 64 biases
        let model: GafxR<f32> = GafxR::new(GafxRConfig::new(1), 0).unwrap();
        assert_eq!(model.stem.weight.numel() + model.stem.bias.numel(), 3200);
    }

    #[test]
    fn closed_form_count_matches_collected_parameters() {
        for ws in [1usize, 4, 16] {
            let cfg = GafxRConfig::new(ws);
            let model: GafxR<f32> = GafxR::new(cfg.clone(), 3).unwrap();
            let mut state = StateDict::new();
            model.state_into("r", &mut state);
            assert_eq!(
                parameter_count(&state),
                cfg.parameter_count(),
                "width_scale {ws}"
            );
            assert!(!trainable(&state).is_empty());
        }
    }

    #[test]
    fn degenerate_width_scale_is_rejected() {
        assert!(GafxRConfig::new(0).validate().is_err());
        assert!(GafxRConfig::new(1000).validate().is_err());
        assert!(GafxRConfig::new(16).validate().is_ok());
    }

    #[test]
    fn toy_forward_has_feature_shape_and_zero_maps_to_zero() {
        let model: GafxR<f32> = GafxR::new(GafxRConfig::new(16), 1).unwrap();
        let tape = Tape::inference();
        // 0.5 s at 22050 Hz: 11025 samples -> 56 rows
        let x = Tensor::zeros(&[11025]);
        let y = model.forward(&tape, &x, false).unwrap();
        assert_eq!(y.shape(), &[56, 128]);
        // zero input, zero-bias init, eval-mode batch norm with identity
        // stats: the feature is exactly zero
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_seed_forward_is_bit_identical() {
        let run = || {
            let model: GafxR<f32> = GafxR::new(GafxRConfig::new(16), 9).unwrap();
            let tape = Tape::inference();
            let x = Tensor::new(
                (0..4410).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect(),
                &[4410],
            )
            .unwrap();
            model
                .forward(&tape, &x, false)
                .unwrap()
                .to_vec()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
