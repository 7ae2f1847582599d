//! Short-time Fourier transform.

use num_complex::Complex;

use crate::fft::{hann_window, is_power_of_two, FftPlan};
use crate::tensor::spectral::stft_real;

use super::{DspError, Result};

/// STFT parameters. The window is always a periodic Hann.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SpectrogramConfig {
    pub fft_length: usize,
    pub hop: usize,
    /// Frames are centered (half-window zero padding on both sides) when
    /// set; the pipeline always uses centered framing.
    pub centered: bool,
    /// One-sided bins to keep; `fft_length/2` drops the Nyquist bin.
    pub bins_kept: usize,
}

impl SpectrogramConfig {
    pub fn new(fft_length: usize, hop: usize, bins_kept: usize) -> Result<Self> {
        let cfg = SpectrogramConfig {
            fft_length,
            hop,
            centered: true,
            bins_kept,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_power_of_two(self.fft_length) {
            return Err(DspError::Config(format!(
                "fft length {} must be a power of two",
                self.fft_length
            )));
        }
        if self.hop == 0 || self.hop > self.fft_length {
            return Err(DspError::Config(format!(
                "hop {} must be in 1..={}",
                self.hop, self.fft_length
            )));
        }
        if self.bins_kept == 0 || self.bins_kept > self.fft_length / 2 + 1 {
            return Err(DspError::Config(format!(
                "bins_kept {} must be in 1..={}",
                self.bins_kept,
                self.fft_length / 2 + 1
            )));
        }
        Ok(())
    }

    /// Frame count for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        if self.centered {
            len / self.hop + 1
        } else {
            (len.saturating_sub(self.fft_length)) / self.hop + 1
        }
    }
}

/// Complex STFT frames, `[frames, bins]` row-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub re: Vec<f32>,
    pub im: Vec<f32>,
    pub frames: usize,
    pub bins: usize,
}

impl Spectrogram {
    pub fn magnitude(&self) -> Vec<f32> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .collect()
    }

    pub fn power(&self) -> Vec<f32> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| a * a + b * b)
            .collect()
    }
}

/// STFT of one channel. Centered configs share the exact framing code of the
/// differentiable magnitude op, so the two routes agree bit for bit.
pub fn stft(signal: &[f32], cfg: &SpectrogramConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if signal.is_empty() {
        return Err(DspError::Config("stft of an empty signal".into()));
    }
    if cfg.centered {
        let (re, im, frames) = stft_real(signal, cfg.fft_length, cfg.hop, cfg.bins_kept);
        return Ok(Spectrogram {
            re,
            im,
            frames,
            bins: cfg.bins_kept,
        });
    }
    if signal.len() < cfg.fft_length {
        return Err(DspError::Config(format!(
            "uncentered stft needs at least {} samples, got {}",
            cfg.fft_length,
            signal.len()
        )));
    }
    let frames = cfg.frames(signal.len());
    let plan = FftPlan::<f32>::new(cfg.fft_length);
    let window = hann_window::<f32>(cfg.fft_length);
    let mut re = vec![0.0; frames * cfg.bins_kept];
    let mut im = vec![0.0; frames * cfg.bins_kept];
    let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.fft_length];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(signal[start + n] * window[n], 0.0);
        }
        plan.forward(&mut buf);
        for k in 0..cfg.bins_kept {
            re[t * cfg.bins_kept + k] = buf[k].re;
            im[t * cfg.bins_kept + k] = buf[k].im;
        }
    }
    Ok(Spectrogram {
        re,
        im,
        frames,
        bins: cfg.bins_kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(N^2) windowed DFT used as the independent oracle.
    pub(crate) fn naive_stft(signal: &[f32], cfg: &SpectrogramConfig) -> (Vec<f64>, Vec<f64>) {
        let frames = cfg.frames(signal.len());
        let n = cfg.fft_length;
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let mut re = vec![0.0; frames * cfg.bins_kept];
        let mut im = vec![0.0; frames * cfg.bins_kept];
        for t in 0..frames {
            let start = t as isize * cfg.hop as isize - if cfg.centered { (n / 2) as isize } else { 0 };
            for k in 0..cfg.bins_kept {
                let mut acc_re = 0.0;
                let mut acc_im = 0.0;
                for i in 0..n {
                    let idx = start + i as isize;
                    let s = if idx >= 0 && (idx as usize) < signal.len() {
                        signal[idx as usize] as f64
                    } else {
                        0.0
                    };
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    acc_re += s * window[i] * ang.cos();
                    acc_im += s * window[i] * ang.sin();
                }
                re[t * cfg.bins_kept + k] = acc_re;
                im[t * cfg.bins_kept + k] = acc_im;
            }
        }
        (re, im)
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let cfg = SpectrogramConfig::new(512, 128, 256).unwrap();
        let s = stft(&vec![0.0; 4096], &cfg).unwrap();
        assert!(s.re.iter().all(|&v| v == 0.0));
        assert!(s.im.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dual_unet_spectral_shape() {
        let cfg = SpectrogramConfig::new(4096, 1024, 2048).unwrap();
        let s = stft(&vec![0.01; 480000], &cfg).unwrap();
        assert_eq!((s.frames, s.bins), (469, 2048));
    }

    #[test]
    fn cosine_at_exact_bin_peaks_there_and_matches_naive_dft() {
        let fft = 256;
        let bin = 19;
        let len = 2048;
        let signal: Vec<f32> = (0..len)
            .map(|i| (2.0 * std::f64::consts::PI * bin as f64 * i as f64 / fft as f64).cos() as f32)
            .collect();
        let cfg = SpectrogramConfig::new(fft, 64, fft / 2).unwrap();
        let s = stft(&signal, &cfg).unwrap();
        let mag = s.magnitude();
        // interior frames: peak bin is `bin`
        for t in 3..s.frames - 3 {
            let row = &mag[t * s.bins..(t + 1) * s.bins];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, bin, "frame {t}");
        }
        let (nre, nim) = naive_stft(&signal, &cfg);
        let scale: f64 = nre.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..nre.len() {
            assert!((s.re[i] as f64 - nre[i]).abs() / scale < 1e-5);
            assert!((s.im[i] as f64 - nim[i]).abs() / scale < 1e-5);
        }
    }

    #[test]
    fn parseval_power_within_two_percent() {
        // hop = fft/4, Hann window; total spectral power tracks windowed
        // signal power scaled by N (one-sided bins double except DC/Nyquist)
        let fft = 256usize;
        let cfg = SpectrogramConfig::new(fft, fft / 4, fft / 2 + 1).unwrap();
        let mut state = 0x12345u64;
        let signal: Vec<f32> = (0..8192)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64 - 1.0) as f32 * 0.5
            })
            .collect();
        let s = stft(&signal, &cfg).unwrap();
        let window = crate::fft::hann_window::<f64>(fft);
        let mut spectral = 0.0f64;
        for t in 0..s.frames {
            for k in 0..s.bins {
                let p = (s.re[t * s.bins + k] as f64).powi(2) + (s.im[t * s.bins + k] as f64).powi(2);
                let double = if k == 0 || k == fft / 2 { 1.0 } else { 2.0 };
                spectral += p * double;
            }
        }
        spectral /= fft as f64;
        let mut windowed = 0.0f64;
        for t in 0..s.frames {
            let start = t as isize * cfg.hop as isize - (fft / 2) as isize;
            for i in 0..fft {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < signal.len() {
                    windowed += (signal[idx as usize] as f64 * window[i]).powi(2);
                }
            }
        }
        let rel = (spectral - windowed).abs() / windowed;
        assert!(rel < 0.02, "parseval mismatch {rel}");
    }
}
