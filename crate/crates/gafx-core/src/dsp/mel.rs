//! Mel filterbanks and the two mel-spectrogram profiles of the pipeline.

use super::feature::{FeatureMap, FeatureSource};
use super::stft::{stft, SpectrogramConfig};
use super::{AudioClip, DspError, Result};

const LOG_OFFSET: f32 = 1e-6;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over one-sided FFT bins.
///
/// Weights are the average of each triangle over the bin's frequency
/// interval (exact piecewise integral), not a point sample at the bin
/// center: with 128 mels over a 512-point FFT the narrow low-frequency
/// triangles fall between bin centers, and point sampling would leave
/// all-zero rows.
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    /// `[n_mels, bins]` row-major, all nonnegative.
    pub weights: Vec<f32>,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    pub fn new(
        n_mels: usize,
        fft_length: usize,
        sample_rate: u32,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        if n_mels == 0 || f_max <= f_min || f_max > sample_rate as f64 / 2.0 + 1e-9 {
            return Err(DspError::Config(format!(
                "bad filterbank spec: {n_mels} mels over [{f_min}, {f_max}] at {sample_rate} Hz"
            )));
        }
        let bins = fft_length / 2 + 1;
        let bin_width = sample_rate as f64 / fft_length as f64;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut weights = vec![0.0f32; n_mels * bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            // exact integral over [a,b] of the triangle with knots lo/mid/hi
            let tri_integral = |a: f64, b: f64| -> f64 {
                let mut acc = 0.0;
                let (ra, rb) = (a.max(lo), b.min(mid));
                if rb > ra && mid - lo > 1e-12 {
                    let prim = |f: f64| (f - lo) * (f - lo) / (2.0 * (mid - lo));
                    acc += prim(rb) - prim(ra);
                }
                let (fa, fb) = (a.max(mid), b.min(hi));
                if fb > fa && hi - mid > 1e-12 {
                    let prim = |f: f64| -(hi - f) * (hi - f) / (2.0 * (hi - mid));
                    acc += prim(fb) - prim(fa);
                }
                acc
            };
            for k in 0..bins {
                let x0 = (k as f64 - 0.5) * bin_width;
                let x1 = (k as f64 + 0.5) * bin_width;
                let v = tri_integral(x0, x1) / bin_width;
                if v > 0.0 {
                    weights[m * bins + k] = v as f32;
                }
            }
        }
        let fb = MelFilterbank {
            n_mels,
            bins,
            weights,
            f_min,
            f_max,
        };
        debug_assert!(fb.rows_nonempty());
        Ok(fb)
    }

    pub fn rows_nonempty(&self) -> bool {
        (0..self.n_mels).all(|m| {
            self.weights[m * self.bins..(m + 1) * self.bins]
                .iter()
                .any(|&w| w > 0.0)
        })
    }

    /// Projects a `[frames, bins]` power spectrogram to `[frames, n_mels]`.
    pub fn apply(&self, power: &[f32], frames: usize) -> Vec<f32> {
        assert_eq!(power.len(), frames * self.bins);
        let mut out = vec![0.0f32; frames * self.n_mels];
        for t in 0..frames {
            let row = &power[t * self.bins..(t + 1) * self.bins];
            let dst = &mut out[t * self.n_mels..(t + 1) * self.n_mels];
            for (m, o) in dst.iter_mut().enumerate() {
                let w = &self.weights[m * self.bins..(m + 1) * self.bins];
                *o = w.iter().zip(row).map(|(&a, &b)| a * b).sum();
            }
        }
        out
    }
}

/// The two mel profiles the pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MelProfile {
    /// Classifier baseline input: fft 512, hop 200, 22050 Hz.
    Baseline22k,
    /// Pretraining target: fft 512, hop 160, 16 kHz; the signal is cut to
    /// 10 s and zero-padded so exactly 1024 frames come out.
    Pretrain16k,
}

impl MelProfile {
    pub fn sample_rate(&self) -> u32 {
        match self {
            MelProfile::Baseline22k => 22050,
            MelProfile::Pretrain16k => 16000,
        }
    }

    pub fn stft_config(&self) -> SpectrogramConfig {
        let hop = match self {
            MelProfile::Baseline22k => 200,
            MelProfile::Pretrain16k => 160,
        };
        SpectrogramConfig {
            fft_length: 512,
            hop,
            centered: true,
            bins_kept: 257,
        }
    }

    pub fn source(&self) -> FeatureSource {
        FeatureSource::MelBaseline
    }
}

/// Log-mel spectrogram (`log(mel_power + 1e-6)`), 128 bins.
pub fn mel_spectrogram(clip: &AudioClip, profile: MelProfile) -> Result<FeatureMap> {
    if clip.sample_rate() != profile.sample_rate() {
        return Err(DspError::Config(format!(
            "{:?} profile requires {} Hz input, got {}",
            profile,
            profile.sample_rate(),
            clip.sample_rate()
        )));
    }
    let mono = clip.to_mono();
    let cfg = profile.stft_config();
    let signal: Vec<f32> = match profile {
        MelProfile::Baseline22k => mono.channel(0).to_vec(),
        MelProfile::Pretrain16k => {
            // 10 s cut, then pad in samples until floor(L/hop)+1 == 1024
            let mut s = mono.channel(0).to_vec();
            s.truncate(10 * 16000);
            s.resize(1023 * cfg.hop, 0.0);
            s
        }
    };
    let spec = stft(&signal, &cfg)?;
    let fb = MelFilterbank::new(
        128,
        cfg.fft_length,
        profile.sample_rate(),
        0.0,
        profile.sample_rate() as f64 / 2.0,
    )?;
    let mel = fb.apply(&spec.power(), spec.frames);
    let values: Vec<f32> = mel.iter().map(|&v| (v + LOG_OFFSET).ln()).collect();
    FeatureMap::new(values, spec.frames, 128, profile.source())
        .map_err(|e| DspError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_profile_frame_count() {
        let clip = AudioClip::new(vec![vec![0.0; 661500]], 22050).unwrap();
        let fm = mel_spectrogram(&clip, MelProfile::Baseline22k).unwrap();
        assert_eq!((fm.time_steps, fm.freq_bins), (3308, 128));
    }

    #[test]
    fn pretrain_profile_always_1024_frames() {
        for len in [160000usize, 170000, 163680] {
            let clip = AudioClip::new(vec![vec![0.01; len]], 16000).unwrap();
            let fm = mel_spectrogram(&clip, MelProfile::Pretrain16k).unwrap();
            assert_eq!((fm.time_steps, fm.freq_bins), (1024, 128));
        }
    }

    #[test]
    fn zero_signal_is_constant_log_floor() {
        let clip = AudioClip::new(vec![vec![0.0; 160000]], 16000).unwrap();
        let fm = mel_spectrogram(&clip, MelProfile::Pretrain16k).unwrap();
        let want = (1e-6f32).ln();
        assert!(fm.values.iter().all(|&v| v == want));
    }

    #[test]
    fn wrong_rate_is_config_error() {
        let clip = AudioClip::new(vec![vec![0.0; 1000]], 16000).unwrap();
        assert!(matches!(
            mel_spectrogram(&clip, MelProfile::Baseline22k),
            Err(DspError::Config(_))
        ));
    }

    #[test]
    fn filterbank_rows_nonneg_nonempty_unimodal() {
        let fb = MelFilterbank::new(128, 512, 22050, 0.0, 11025.0).unwrap();
        assert!(fb.rows_nonempty());
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        for m in 0..fb.n_mels {
            let row = &fb.weights[m * fb.bins..(m + 1) * fb.bins];
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            for k in 1..=peak {
                assert!(row[k] >= row[k - 1] - 1e-9, "row {m} not rising at {k}");
            }
            for k in peak + 1..row.len() {
                assert!(row[k] <= row[k - 1] + 1e-9, "row {m} not falling at {k}");
            }
        }
    }

    #[test]
    fn filterbank_covers_interior_bins_without_gaps() {
        let fb = MelFilterbank::new(128, 512, 22050, 0.0, 11025.0).unwrap();
        let bin_width = 22050.0 / 512.0;
        for k in 0..fb.bins {
            let center = k as f64 * bin_width;
            if center > 1.0 && center < 11025.0 - bin_width {
                let col: f32 = (0..fb.n_mels).map(|m| fb.weights[m * fb.bins + k]).sum();
                assert!(col > 0.0, "gap at bin {k} ({center:.0} Hz)");
            }
        }
    }

    #[test]
    fn mel_projection_matches_dense_oracle_on_noise() {
        let fb = MelFilterbank::new(128, 512, 22050, 0.0, 11025.0).unwrap();
        let frames = 4;
        let mut state = 99u64;
        let power: Vec<f32> = (0..frames * fb.bins)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((state >> 40) as f32) / (1u32 << 24) as f32
            })
            .collect();
        let fast = fb.apply(&power, frames);
        for t in 0..frames {
            for m in 0..fb.n_mels {
                let mut acc = 0.0f64;
                for k in 0..fb.bins {
                    acc += fb.weights[m * fb.bins + k] as f64 * power[t * fb.bins + k] as f64;
                }
                let got = fast[t * fb.n_mels + m] as f64;
                let denom = acc.abs().max(1e-9);
                assert!((got - acc).abs() / denom < 1e-5);
            }
        }
    }
}
