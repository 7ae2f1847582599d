//! Deterministic signal layer: WAV I/O, resampling, STFT, mel spectrograms,
//! and feature-map plumbing. Everything here is a pure function of its
//! inputs and safe to call concurrently on distinct data.

pub mod feature;
pub mod mel;
pub mod resample;
pub mod stft;
pub mod wav;

pub use feature::{
    freq_group_pool, normalize_feature, read_feature, write_feature, FeatureMap, FeatureSource,
};
pub use mel::{mel_spectrogram, MelFilterbank, MelProfile};
pub use resample::resample;
pub use stft::{stft, Spectrogram, SpectrogramConfig};
pub use wav::{load_wav, save_wav, wav_info, WavInfo};

/// Errors from the signal layer.
#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("wav format error at byte {offset}: {message}")]
    WavFormat { offset: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Sampled waveform: one or two equal-length channels of values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(DspError::Config("sample rate must be positive".into()));
        }
        if samples.is_empty() || samples.len() > 2 {
            return Err(DspError::Config(format!(
                "expected 1 or 2 channels, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|c| c.len() != samples[0].len()) {
            return Err(DspError::Config("channel lengths differ".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.samples[i]
    }

    pub fn channels_slice(&self) -> &[Vec<f32>] {
        &self.samples
    }

    /// Mono mix: the per-sample mean of all channels.
    pub fn to_mono(&self) -> AudioClip {
        if self.channels() == 1 {
            return self.clone();
        }
        let mixed: Vec<f32> = self.samples[0]
            .iter()
            .zip(&self.samples[1])
            .map(|(&a, &b)| (a + b) / 2.0)
            .collect();
        AudioClip {
            samples: vec![mixed],
            sample_rate: self.sample_rate,
        }
    }

    /// Stereo by duplication; already-stereo clips pass through.
    pub fn to_stereo(&self) -> AudioClip {
        if self.channels() == 2 {
            return self.clone();
        }
        AudioClip {
            samples: vec![self.samples[0].clone(), self.samples[0].clone()],
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pads or truncates every channel to exactly `len` samples.
    pub fn fit_length(&self, len: usize) -> AudioClip {
        let samples = self
            .samples
            .iter()
            .map(|c| {
                let mut v = c.clone();
                v.resize(len, 0.0);
                v
            })
            .collect();
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Per-channel slice `[start, start+len)`; must be in range.
    pub fn slice(&self, start: usize, len: usize) -> Result<AudioClip> {
        if start + len > self.len() {
            return Err(DspError::Config(format!(
                "slice {start}..{} beyond clip length {}",
                start + len,
                self.len()
            )));
        }
        Ok(AudioClip {
            samples: self
                .samples
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
            sample_rate: self.sample_rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mono_stereo_round_trip() {
        let clip = AudioClip::new(vec![vec![0.1, -0.2, 0.3]], 22050).unwrap();
        let stereo = clip.to_stereo();
        assert_eq!(stereo.channels(), 2);
        assert_eq!(stereo.channel(0), stereo.channel(1));
        assert_eq!(stereo.to_mono(), clip);
    }

    #[test]
    fn stereo_mix_is_elementwise_mean() {
        let clip =
            AudioClip::new(vec![vec![0.2, 0.4], vec![-0.2, 0.0]], 16000).unwrap();
        assert_eq!(clip.to_mono().channel(0), &[0.0, 0.2]);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(AudioClip::new(vec![], 22050).is_err());
        assert!(AudioClip::new(vec![vec![0.0], vec![0.0], vec![0.0]], 22050).is_err());
        assert!(AudioClip::new(vec![vec![0.0], vec![0.0, 0.0]], 22050).is_err());
        assert!(AudioClip::new(vec![vec![0.0]], 0).is_err());
    }
}
