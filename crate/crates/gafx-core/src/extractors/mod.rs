//! The three learnable feature extractors that replace the handcrafted
//! spectrogram: a dual U-Net over waveform and spectrum, a ResNet over the
//! reshaped waveform, and the ResNet backbone followed by attention layers.
//!
//! All of them map an audio clip to a `(T, 128)` feature; `T` scales with
//! the input length, the 128 frequency bins never scale, and `width_scale`
//! divides only internal channel counts so desk-scale runs stay affordable.

pub mod gafx_a;
pub mod gafx_r;
pub mod gafx_u;

pub use gafx_a::{GafxA, GafxAConfig};
pub use gafx_r::{GafxR, GafxRConfig};
pub use gafx_u::{Branch, GafxU, GafxUConfig, UForward};

use crate::dsp::{AudioClip, FeatureSource};
use crate::layers::StateDict;
use crate::tensor::{Element, Result, Tape, Tensor, TensorError};

/// Which extractor variant a pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    GafxU,
    GafxR,
    GafxA,
}

impl ExtractorKind {
    /// Input sample rate the variant is defined over.
    pub fn required_rate(&self) -> u32 {
        match self {
            ExtractorKind::GafxU => 16000,
            ExtractorKind::GafxR | ExtractorKind::GafxA => 22050,
        }
    }

    pub fn required_channels(&self) -> usize {
        match self {
            ExtractorKind::GafxU => 2,
            ExtractorKind::GafxR | ExtractorKind::GafxA => 1,
        }
    }

    pub fn feature_source(&self) -> FeatureSource {
        match self {
            ExtractorKind::GafxU => FeatureSource::GafxU,
            ExtractorKind::GafxR => FeatureSource::GafxR,
            ExtractorKind::GafxA => FeatureSource::GafxA,
        }
    }
}

impl std::fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExtractorKind::GafxU => "gafx-u",
            ExtractorKind::GafxR => "gafx-r",
            ExtractorKind::GafxA => "gafx-a",
        };
        f.write_str(s)
    }
}

/// Variant-tagged extractor configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExtractorConfig {
    GafxU(GafxUConfig),
    GafxR(GafxRConfig),
    GafxA(GafxAConfig),
}

impl ExtractorConfig {
    pub fn for_kind(kind: ExtractorKind, width_scale: usize) -> Self {
        match kind {
            ExtractorKind::GafxU => ExtractorConfig::GafxU(GafxUConfig::new(width_scale)),
            ExtractorKind::GafxR => ExtractorConfig::GafxR(GafxRConfig::new(width_scale)),
            ExtractorKind::GafxA => ExtractorConfig::GafxA(GafxAConfig::new(width_scale)),
        }
    }

    pub fn kind(&self) -> ExtractorKind {
        match self {
            ExtractorConfig::GafxU(_) => ExtractorKind::GafxU,
            ExtractorConfig::GafxR(_) => ExtractorKind::GafxR,
            ExtractorConfig::GafxA(_) => ExtractorKind::GafxA,
        }
    }

    pub fn width_scale(&self) -> usize {
        match self {
            ExtractorConfig::GafxU(c) => c.width_scale,
            ExtractorConfig::GafxR(c) => c.width_scale,
            ExtractorConfig::GafxA(c) => c.backbone.width_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExtractorConfig::GafxU(c) => c.validate(),
            ExtractorConfig::GafxR(c) => c.validate(),
            ExtractorConfig::GafxA(c) => c.validate(),
        }
    }

    /// Exact trainable-parameter count, by closed-form sums over the config.
    pub fn parameter_count(&self) -> usize {
        match self {
            ExtractorConfig::GafxU(c) => c.parameter_count(),
            ExtractorConfig::GafxR(c) => c.parameter_count(),
            ExtractorConfig::GafxA(c) => c.parameter_count(),
        }
    }
}

/// Auxiliary dual U-Net outputs captured for inspection: the four separated
/// stereo sources and their spectral residual maps.
pub struct UAux<E: Element> {
    /// Four `[2, L]` stereo waveforms.
    pub sources: Vec<Tensor<E>>,
    /// Four `[T, 2048]` spectral-decoder maps.
    pub spectral_residuals: Vec<Tensor<E>>,
    /// The assembled `[4T, 2048]` map before frequency pooling.
    pub assembled: Tensor<E>,
}

/// A constructed extractor of any variant.
pub enum Extractor<E: Element> {
    U(GafxU<E>),
    R(GafxR<E>),
    A(GafxA<E>),
}

impl<E: Element> Extractor<E> {
    pub fn new(config: &ExtractorConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ExtractorConfig::GafxU(c) => Extractor::U(GafxU::new(c.clone(), seed)?),
            ExtractorConfig::GafxR(c) => Extractor::R(GafxR::new(c.clone(), seed)?),
            ExtractorConfig::GafxA(c) => Extractor::A(GafxA::new(c.clone(), seed)?),
        })
    }

    pub fn kind(&self) -> ExtractorKind {
        match self {
            Extractor::U(_) => ExtractorKind::GafxU,
            Extractor::R(_) => ExtractorKind::GafxR,
            Extractor::A(_) => ExtractorKind::GafxA,
        }
    }

    pub fn config(&self) -> ExtractorConfig {
        match self {
            Extractor::U(m) => ExtractorConfig::GafxU(m.cfg.clone()),
            Extractor::R(m) => ExtractorConfig::GafxR(m.cfg.clone()),
            Extractor::A(m) => ExtractorConfig::GafxA(m.cfg.clone()),
        }
    }

    /// Runs the extractor on a clip, enforcing the variant's channel/rate
    /// contract. Returns the `[T, 128]` feature tensor (on the tape) and,
    /// for the dual U-Net, the captured auxiliary outputs.
    pub fn forward_clip(
        &self,
        tape: &Tape<E>,
        clip: &AudioClip,
        training: bool,
    ) -> Result<(Tensor<E>, Option<UAux<E>>)> {
        let kind = self.kind();
        if clip.channels() != kind.required_channels() {
            return Err(TensorError::Config(format!(
                "{kind} requires {} channel(s), got {}; convert with to_stereo/to_mono first",
                kind.required_channels(),
                clip.channels()
            )));
        }
        if clip.sample_rate() != kind.required_rate() {
            return Err(TensorError::Config(format!(
                "{kind} requires {} Hz input, got {} Hz",
                kind.required_rate(),
                clip.sample_rate()
            )));
        }
        let (feature, aux) = match self {
            Extractor::U(m) => {
                let input = clip_tensor(clip);
                let fwd = m.forward(tape, &input)?;
                let feature = fwd.feature.clone();
                (feature, Some(fwd.into_aux()))
            }
            Extractor::R(m) => {
                let input = channel_tensor(clip, 0);
                (m.forward(tape, &input, training)?, None)
            }
            Extractor::A(m) => {
                let input = channel_tensor(clip, 0);
                (m.forward(tape, &input, training)?, None)
            }
        };
        feature.assert_finite(&format!("{kind} feature"))?;
        Ok((feature, aux))
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        match self {
            Extractor::U(m) => m.state_into(prefix, out),
            Extractor::R(m) => m.state_into(prefix, out),
            Extractor::A(m) => m.state_into(prefix, out),
        }
    }
}

/// `[channels, L]` tensor of a whole clip.
pub fn clip_tensor<E: Element>(clip: &AudioClip) -> Tensor<E> {
    let mut data = Vec::with_capacity(clip.channels() * clip.len());
    for c in 0..clip.channels() {
        data.extend(clip.channel(c).iter().map(|&v| E::lit(v as f64)));
    }
    Tensor::new(data, &[clip.channels(), clip.len()]).expect("clip shape")
}

/// `[L]` tensor of one channel.
pub fn channel_tensor<E: Element>(clip: &AudioClip, channel: usize) -> Tensor<E> {
    let data = clip.channel(channel).iter().map(|&v| E::lit(v as f64)).collect();
    Tensor::new(data, &[clip.len()]).expect("channel shape")
}

/// Divides a base channel count by the width scale, rejecting configs that
/// collapse a layer to zero channels.
pub(crate) fn scaled_channels(base: usize, width_scale: usize) -> Result<usize> {
    if width_scale == 0 {
        return Err(TensorError::Config("width_scale must be >= 1".into()));
    }
    let c = base / width_scale;
    if c == 0 {
        return Err(TensorError::Config(format!(
            "width_scale {width_scale} reduces a {base}-channel layer to 0 channels"
        )));
    }
    Ok(c)
}
