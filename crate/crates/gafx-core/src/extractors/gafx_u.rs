//! Dual U-Net extractor.
//!
//! Two encoder/decoder branches share a BiLSTM bottleneck: a temporal branch
//! of strided 1-d convolutions over the stereo waveform, and a spectral
//! branch of frequency-strided 2-d convolutions over the stereo STFT
//! magnitudes. The decoders reconstruct four separated sources; per source,
//! `|STFT(mono(source))|` plus the spectral decoder's residual map forms one
//! `(T, 2048)` feature, the four are concatenated along time, and 16-bin
//! group means reduce frequency to 128.
//!
//! Strided convolutions run in ceil mode (the input is right-padded until
//! the stride divides evenly); that is what lines the fifth temporal length
//! up with the STFT frame count — 469 for a 30 s 16 kHz clip — so the
//! bottleneck sum is well-formed at any input length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::feature::freq_group_pool;
use crate::layers::{BiLstm, Conv1dLayer, Conv2dLayer, ConvTranspose1dLayer, ConvTranspose2dLayer, StateDict};
use crate::tensor::{ops, Element, Result, Tape, Tensor, TensorError};

use super::scaled_channels;

/// Table of encoder output channels, layers 1..6. Decoders mirror it.
const ENCODER_CHANNELS: [usize; 6] = [48, 96, 192, 384, 768, 1536];
/// Decoder layer 1 output: 4 sources x 2 channels x 2 duplicates.
const DECODER_OUT: usize = 16;
const SOURCES: usize = 4;

const TEMPORAL_KERNEL: usize = 8;
const TEMPORAL_STRIDE: usize = 4;
const TEMPORAL_PAD: usize = 2;

const STFT_FFT: usize = 4096;
const STFT_HOP: usize = 1024;
const STFT_BINS: usize = 2048;

/// Which branch a skip connection belongs to (ablation hook).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Temporal,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GafxUConfig {
    /// Divisor on every encoder/decoder/bottleneck channel count; the
    /// 16-channel decoder heads and the 2048 spectral bins never scale.
    pub width_scale: usize,
    pub bilstm_layers: usize,
}

impl GafxUConfig {
    pub fn new(width_scale: usize) -> Self {
        GafxUConfig {
            width_scale,
            bilstm_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channels().map(|_| ())
    }

    /// Scaled encoder channel table.
    pub fn channels(&self) -> Result<Vec<usize>> {
        ENCODER_CHANNELS
            .iter()
            .map(|&c| scaled_channels(c, self.width_scale))
            .collect()
    }

    pub fn stft_params(&self) -> (usize, usize, usize) {
        (STFT_FFT, STFT_HOP, STFT_BINS)
    }

    /// Temporal encoder lengths for an `len`-sample input (ceil mode).
    pub fn temporal_lengths(&self, len: usize) -> Vec<usize> {
        let mut lengths = vec![len];
        let mut l = len;
        for _ in 0..ENCODER_CHANNELS.len() {
            l = (l + 2 * TEMPORAL_PAD - TEMPORAL_KERNEL).div_ceil(TEMPORAL_STRIDE) + 1;
            lengths.push(l);
        }
        lengths
    }

    /// STFT frame count for an `len`-sample input.
    pub fn spectral_frames(&self, len: usize) -> usize {
        len / STFT_HOP + 1
    }

    /// Assembled feature rows: four sources concatenated along time.
    pub fn feature_rows(&self, len: usize) -> usize {
        SOURCES * self.spectral_frames(len)
    }

    /// Exact trainable-parameter count from the tables.
    pub fn parameter_count(&self) -> usize {
        let ch = self.channels().expect("validated config");
        let n = ch.len();
        let mut total = 0usize;
        // temporal encoder: conv1d Cin -> 2*Cout, kernel 8
        for l in 0..n {
            let cin = if l == 0 { 2 } else { ch[l - 1] };
            total += TEMPORAL_KERNEL * cin * 2 * ch[l] + 2 * ch[l];
        }
        // spectral encoder: kernel (8,1) for layers 1..5, (2,8) for layer 6
        for l in 0..n {
            let cin = if l == 0 { 2 } else { ch[l - 1] };
            let k = if l + 1 == n { 2 * 8 } else { 8 };
            total += k * cin * 2 * ch[l] + 2 * ch[l];
        }
        // bottleneck BiLSTM + projection
        let h = ch[n - 1];
        for layer in 0..self.bilstm_layers {
            let input = if layer == 0 { h } else { 2 * h };
            total += 2 * (4 * h * input + 4 * h * h + 4 * h);
        }
        total += 2 * h * h + h;
        // decoders: transposed convs mirroring the encoders
        for l in 0..n {
            let cout = if l == 0 { DECODER_OUT } else { ch[l - 1] };
            total += TEMPORAL_KERNEL * ch[l] * cout + cout;
            let k = if l + 1 == n { 2 * 8 } else { 8 };
            total += k * ch[l] * cout + cout;
        }
        total
    }
}

/// Everything a dual U-Net forward produces.
pub struct UForward<E: Element> {
    /// `[4T, 128]` assembled feature.
    pub feature: Tensor<E>,
    /// Four separated stereo sources, each `[2, L]`.
    pub sources: Vec<Tensor<E>>,
    /// Four spectral residual maps, each `[T, 2048]`.
    pub spectral_residuals: Vec<Tensor<E>>,
    /// The `[4T, 2048]` map before frequency pooling.
    pub assembled: Tensor<E>,
}

impl<E: Element> UForward<E> {
    pub fn into_aux(self) -> super::UAux<E> {
        super::UAux {
            sources: self.sources,
            spectral_residuals: self.spectral_residuals,
            assembled: self.assembled,
        }
    }
}

pub struct GafxU<E: Element> {
    pub cfg: GafxUConfig,
    temporal_enc: Vec<Conv1dLayer<E>>,
    spectral_enc: Vec<Conv2dLayer<E>>,
    bottleneck: BiLstm<E>,
    temporal_dec: Vec<ConvTranspose1dLayer<E>>, // index l = table layer l+1
    spectral_dec: Vec<ConvTranspose2dLayer<E>>,
}

impl<E: Element> GafxU<E> {
    pub fn new(cfg: GafxUConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.channels()?;
        let n = ch.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut temporal_enc = Vec::with_capacity(n);
        let mut spectral_enc = Vec::with_capacity(n);
        for l in 0..n {
            let cin = if l == 0 { 2 } else { ch[l - 1] };
            // GLU halves the channel count, so convs emit 2x the table value
            temporal_enc.push(Conv1dLayer::new(
                &mut rng,
                cin,
                2 * ch[l],
                TEMPORAL_KERNEL,
                TEMPORAL_STRIDE,
                TEMPORAL_PAD,
            ));
            if l + 1 == n {
                spectral_enc.push(Conv2dLayer::new(&mut rng, cin, 2 * ch[l], (2, 8), (2, 4), (0, 2)));
            } else {
                spectral_enc.push(Conv2dLayer::new(&mut rng, cin, 2 * ch[l], (8, 1), (4, 1), (2, 0)));
            }
        }
        let bottleneck = BiLstm::new(&mut rng, ch[n - 1], cfg.bilstm_layers);
        let mut temporal_dec = Vec::with_capacity(n);
        let mut spectral_dec = Vec::with_capacity(n);
        for l in 0..n {
            let cout = if l == 0 { DECODER_OUT } else { ch[l - 1] };
            temporal_dec.push(ConvTranspose1dLayer::new(
                &mut rng,
                ch[l],
                cout,
                TEMPORAL_KERNEL,
                TEMPORAL_STRIDE,
                TEMPORAL_PAD,
            ));
            if l + 1 == n {
                spectral_dec.push(ConvTranspose2dLayer::new(&mut rng, ch[l], cout, (2, 8), (2, 4), (0, 2)));
            } else {
                spectral_dec.push(ConvTranspose2dLayer::new(&mut rng, ch[l], cout, (8, 1), (4, 1), (2, 0)));
            }
        }
        Ok(GafxU {
            cfg,
            temporal_enc,
            spectral_enc,
            bottleneck,
            temporal_dec,
            spectral_dec,
        })
    }

    pub fn forward(&self, tape: &Tape<E>, stereo: &Tensor<E>) -> Result<UForward<E>> {
        self.forward_with_disabled_skip(tape, stereo, None)
    }

    /// Forward with one skip connection optionally severed (ablation hook;
    /// `level` is 0-based from the outermost layer).
    pub fn forward_with_disabled_skip(
        &self,
        tape: &Tape<E>,
        stereo: &Tensor<E>,
        disabled_skip: Option<(Branch, usize)>,
    ) -> Result<UForward<E>> {
        let shape = stereo.shape();
        if shape.len() != 2 || shape[0] != 2 {
            return Err(TensorError::Config(format!(
                "dual U-Net input must be [2, L] stereo, got {shape:?}"
            )));
        }
        let len = shape[1];
        let n = self.temporal_enc.len();

        // ---- temporal encoder ----
        let mut t_lengths = vec![len];
        let mut t_skips = Vec::with_capacity(n);
        let mut x = stereo.clone();
        for layer in &self.temporal_enc {
            let padded = pad_time_1d(tape, &x)?;
            let conv = layer.forward(tape, &padded)?;
            x = ops::glu(tape, &conv)?;
            t_lengths.push(x.shape()[1]);
            t_skips.push(x.clone());
        }

        // ---- spectral encoder over stereo |STFT| ----
        let frames = self.cfg.spectral_frames(len);
        if t_lengths[n - 1] != frames {
            return Err(TensorError::Dim(format!(
                "temporal length {} does not meet the {} STFT frames at the bottleneck",
                t_lengths[n - 1],
                frames
            )));
        }
        let mut channel_mags = Vec::with_capacity(2);
        for c in 0..2 {
            let wave = ops::reshape(tape, &ops::narrow(tape, stereo, 0, c, 1)?, &[len])?;
            let mag = ops::stft_mag(tape, &wave, STFT_FFT, STFT_HOP, STFT_BINS)?;
            // [T, 2048] -> [1, 2048, T]
            let t = ops::transpose2d(tape, &mag)?;
            channel_mags.push(ops::reshape(tape, &t, &[1, STFT_BINS, frames])?);
        }
        let refs: Vec<&Tensor<E>> = channel_mags.iter().collect();
        let mut z = ops::concat(tape, &refs, 0)?;
        let mut z_skips = Vec::with_capacity(n);
        let mut z_shapes = vec![(z.shape()[1], z.shape()[2])];
        for (l, layer) in self.spectral_enc.iter().enumerate() {
            if l + 1 == n {
                z = pad_time_2d(tape, &z, TEMPORAL_KERNEL, TEMPORAL_STRIDE, TEMPORAL_PAD)?;
            }
            let conv = layer.forward(tape, &z)?;
            z = ops::glu(tape, &conv)?;
            z_shapes.push((z.shape()[1], z.shape()[2]));
            z_skips.push(z.clone());
        }

        // ---- bottleneck: sum of branches -> BiLSTM -> back ----
        let bottom = z.shape()[2];
        let z_flat = ops::reshape(tape, &z, &[z.shape()[0], bottom])?;
        let merged = ops::add(tape, &t_skips[n - 1], &z_flat);
        let seq = ops::transpose2d(tape, &merged)?;
        let mixed = self.bottleneck.forward(tape, &seq)?;
        let bottleneck_out = ops::transpose2d(tape, &mixed)?;

        // ---- temporal decoder ----
        let mut y = bottleneck_out.clone();
        for l in (0..n).rev() {
            if disabled_skip != Some((Branch::Temporal, l)) {
                y = ops::add(tape, &y, &t_skips[l]);
            }
            y = self.temporal_dec[l].forward(tape, &y)?;
            let want = t_lengths[l];
            if y.shape()[1] > want {
                y = ops::narrow(tape, &y, 1, 0, want)?;
            }
            if l > 0 {
                y = ops::relu(tape, &y);
            }
        }

        // ---- spectral decoder ----
        let mut s = ops::reshape(tape, &bottleneck_out, &[bottleneck_out.shape()[0], 1, bottom])?;
        for l in (0..n).rev() {
            if disabled_skip != Some((Branch::Spectral, l)) {
                s = ops::add(tape, &s, &z_skips[l]);
            }
            s = self.spectral_dec[l].forward(tape, &s)?;
            let (want_f, want_t) = z_shapes[l];
            if s.shape()[1] > want_f {
                s = ops::narrow(tape, &s, 1, 0, want_f)?;
            }
            if s.shape()[2] > want_t {
                s = ops::narrow(tape, &s, 2, 0, want_t)?;
            }
            if l > 0 {
                s = ops::relu(tape, &s);
            }
        }

        // ---- sources: 16 -> 8 channels by pairwise mean = 4 stereo sources
        let paired = ops::reshape(tape, &y, &[DECODER_OUT / 2, 2, len])?;
        let stereo_sources = ops::mean_axis(tape, &paired, 1)?; // [8, L]
        // residual maps: 16 -> 4 by per-source 4-channel mean
        let grouped = ops::reshape(tape, &s, &[SOURCES, DECODER_OUT / SOURCES, STFT_BINS, frames])?;
        let residual_grid = ops::mean_axis(tape, &grouped, 1)?; // [4, 2048, T]

        let mut sources = Vec::with_capacity(SOURCES);
        let mut residuals = Vec::with_capacity(SOURCES);
        let mut per_source = Vec::with_capacity(SOURCES);
        for src in 0..SOURCES {
            let pair = ops::narrow(tape, &stereo_sources, 0, 2 * src, 2)?;
            sources.push(pair.clone());
            let mono = ops::reshape(tape, &ops::mean_axis(tape, &pair, 0)?, &[len])?;
            let mag = ops::stft_mag(tape, &mono, STFT_FFT, STFT_HOP, STFT_BINS)?;
            let map = ops::narrow(tape, &residual_grid, 0, src, 1)?;
            let map = ops::reshape(tape, &map, &[STFT_BINS, frames])?;
            let map = ops::transpose2d(tape, &map)?; // [T, 2048]
            residuals.push(map.clone());
            per_source.push(ops::add(tape, &mag, &map));
        }
        let refs: Vec<&Tensor<E>> = per_source.iter().collect();
        let assembled = ops::concat(tape, &refs, 0)?; // [4T, 2048]
        let feature = freq_group_pool(tape, &assembled)?;
        feature.assert_finite("gafx-u feature")?;
        Ok(UForward {
            feature,
            sources,
            spectral_residuals: residuals,
            assembled,
        })
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        for (l, layer) in self.temporal_enc.iter().enumerate() {
            layer.state_into(&format!("{prefix}.tenc{}", l + 1), out);
        }
        for (l, layer) in self.spectral_enc.iter().enumerate() {
            layer.state_into(&format!("{prefix}.zenc{}", l + 1), out);
        }
        self.bottleneck.state_into(&format!("{prefix}.bilstm"), out);
        for (l, layer) in self.temporal_dec.iter().enumerate() {
            layer.state_into(&format!("{prefix}.tdec{}", l + 1), out);
        }
        for (l, layer) in self.spectral_dec.iter().enumerate() {
            layer.state_into(&format!("{prefix}.zdec{}", l + 1), out);
        }
    }
}

/// Right-pads a `[C, L]` signal so the k=8/s=4/p=2 conv comes out at the
/// ceil-mode length.
fn pad_time_1d<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    let len = x.shape()[1];
    let eff = len + 2 * TEMPORAL_PAD - TEMPORAL_KERNEL;
    let extra = (TEMPORAL_STRIDE - eff % TEMPORAL_STRIDE) % TEMPORAL_STRIDE;
    ops::pad_dim(tape, x, 1, 0, extra)
}

/// Same, along the time (last) axis of a `[C, F, T]` map.
fn pad_time_2d<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let t = x.shape()[2];
    let eff = t + 2 * pad - kernel;
    let extra = (stride - eff % stride) % stride;
    ops::pad_dim(tape, x, 2, 0, extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::parameter_count;

    #[test]
    fn temporal_lengths_for_thirty_seconds() {
        let cfg = GafxUConfig::new(1);
        assert_eq!(
            cfg.temporal_lengths(480000),
            vec![480000, 120000, 30000, 7500, 1875, 469, 118]
        );
        assert_eq!(cfg.spectral_frames(480000), 469);
        assert_eq!(cfg.feature_rows(480000), 1876);
    }

    #[test]
    fn temporal_lengths_for_one_second_toy() {
        let cfg = GafxUConfig::new(16);
        assert_eq!(
            cfg.temporal_lengths(16000),
            vec![16000, 4000, 1000, 250, 63, 16, 4]
        );
        assert_eq!(cfg.spectral_frames(16000), 16);
        assert_eq!(cfg.feature_rows(16000), 64);
    }

    #[test]
    fn first_temporal_layer_parameters_match_hand_count() {
        // kernel 8, 2 input channels, 96 pre-gate outputs: 8*2*96 + 96
        let model: GafxU<f32> = GafxU::new(GafxUConfig::new(1), 0).unwrap();
        let l1 = &model.temporal_enc[0];
        assert_eq!(l1.weight.numel() + l1.bias.numel(), 1632);
    }

    #[test]
    fn closed_form_count_matches_collected_parameters() {
        for ws in [4usize, 16] {
            let cfg = GafxUConfig::new(ws);
            let model: GafxU<f32> = GafxU::new(cfg.clone(), 1).unwrap();
            let mut state = StateDict::new();
            model.state_into("u", &mut state);
            assert_eq!(parameter_count(&state), cfg.parameter_count(), "ws {ws}");
        }
    }

    #[test]
    fn degenerate_width_scale_is_rejected() {
        assert!(GafxUConfig::new(0).validate().is_err());
        assert!(GafxUConfig::new(100).validate().is_err()); // 48/100 == 0
        assert!(GafxUConfig::new(16).validate().is_ok());
    }

    #[test]
    fn one_second_toy_forward_has_contracted_shapes() {
        let model: GafxU<f32> = GafxU::new(GafxUConfig::new(16), 7).unwrap();
        let tape = Tape::inference();
        let data: Vec<f32> = (0..2 * 16000).map(|i| ((i as f32) * 0.007).sin() * 0.4).collect();
        let stereo = Tensor::new(data, &[2, 16000]).unwrap();
        let fwd = model.forward(&tape, &stereo).unwrap();
        assert_eq!(fwd.feature.shape(), &[64, 128]);
        assert_eq!(fwd.assembled.shape(), &[64, 2048]);
        assert_eq!(fwd.sources.len(), 4);
        for s in &fwd.sources {
            assert_eq!(s.shape(), &[2, 16000]);
        }
        for r in &fwd.spectral_residuals {
            assert_eq!(r.shape(), &[16, 2048]);
        }
    }

    #[test]
    fn zero_input_with_zero_biases_yields_zero_feature() {
        let model: GafxU<f32> = GafxU::new(GafxUConfig::new(16), 3).unwrap();
        // biases are zero-initialized already; zero input must stay zero
        let tape = Tape::inference();
        let stereo = Tensor::zeros(&[2, 8000]);
        let fwd = model.forward(&tape, &stereo).unwrap();
        assert!(fwd.feature.to_vec().iter().all(|&v| v == 0.0));
        for s in &fwd.sources {
            assert!(s.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mono_input_is_a_contract_error() {
        let model: GafxU<f32> = GafxU::new(GafxUConfig::new(16), 3).unwrap();
        let tape = Tape::inference();
        let mono = Tensor::zeros(&[1, 8000]);
        assert!(model.forward(&tape, &mono).is_err());
    }
}
