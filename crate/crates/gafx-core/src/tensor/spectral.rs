//! Differentiable STFT magnitude.
//!
//! The dual U-Net assembles features from `|STFT|` of its separated sources,
//! so the transform must sit on the tape: the backward pass routes magnitude
//! gradients through the windowed DFT back onto the waveform via one inverse
//! FFT per frame.

use num_complex::Complex;

use crate::fft::{hann_window, is_power_of_two, FftPlan};

use super::{Element, Result, Tape, Tensor, TensorError};

/// Shared framing: centered frames (`floor(L/hop)+1` of them), periodic Hann
/// window, one-sided spectrum truncated to `bins` bins. Returns interleaved
/// (re, im) per frame row.
pub(crate) fn stft_real<E: Element>(
    x: &[E],
    fft_len: usize,
    hop: usize,
    bins: usize,
) -> (Vec<E>, Vec<E>, usize) {
    let frames = x.len() / hop + 1;
    let plan = FftPlan::<E>::new(fft_len);
    let window = hann_window::<E>(fft_len);
    let half = (fft_len / 2) as isize;
    let mut re = vec![E::zero(); frames * bins];
    let mut im = vec![E::zero(); frames * bins];
    let mut buf = vec![Complex::new(E::zero(), E::zero()); fft_len];
    for t in 0..frames {
        let start = (t * hop) as isize - half;
        for (n, b) in buf.iter_mut().enumerate() {
            let idx = start + n as isize;
            let sample = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize]
            } else {
                E::zero()
            };
            *b = Complex::new(sample * window[n], E::zero());
        }
        plan.forward(&mut buf);
        for k in 0..bins {
            re[t * bins + k] = buf[k].re;
            im[t * bins + k] = buf[k].im;
        }
    }
    (re, im, frames)
}

pub(crate) fn validate_stft_params(
    len: usize,
    fft_len: usize,
    hop: usize,
    bins: usize,
) -> Result<()> {
    if !is_power_of_two(fft_len) {
        return Err(TensorError::Config(format!(
            "fft length {fft_len} must be a power of two"
        )));
    }
    if hop == 0 || hop > fft_len {
        return Err(TensorError::Config(format!(
            "hop {hop} must be in 1..={fft_len}"
        )));
    }
    if bins == 0 || bins > fft_len / 2 + 1 {
        return Err(TensorError::Config(format!(
            "bins {bins} must be in 1..={}",
            fft_len / 2 + 1
        )));
    }
    if len == 0 {
        return Err(TensorError::Dim("stft of an empty signal".into()));
    }
    Ok(())
}

/// `|STFT(x)|` of a 1-d signal: `[L] -> [frames, bins]`.
pub fn stft_mag<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    fft_len: usize,
    hop: usize,
    bins: usize,
) -> Result<Tensor<E>> {
    if x.shape().len() != 1 {
        return Err(TensorError::Dim(format!(
            "stft_mag expects a 1-d signal, got {:?}",
            x.shape()
        )));
    }
    let len = x.numel();
    validate_stft_params(len, fft_len, hop, bins)?;
    let (re, im, frames) = stft_real(&x.values(), fft_len, hop, bins);
    let data: Vec<E> = re
        .iter()
        .zip(im.iter())
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();
    let out = Tensor::from_op(data, vec![frames, bins], tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        let o = out.clone();
        tape.record(&out, move |g| {
            let mag = o.values();
            let plan = FftPlan::<E>::new(fft_len);
            let window = hann_window::<E>(fft_len);
            let half = (fft_len / 2) as isize;
            let mut dx = vec![E::zero(); len];
            let mut buf = vec![Complex::new(E::zero(), E::zero()); fft_len];
            for t in 0..frames {
                // c_k = g_k (re_k + i im_k)/|X_k|; dL/dx_n = w_n Re{IDFT(c)}_n
                for b in buf.iter_mut() {
                    *b = Complex::new(E::zero(), E::zero());
                }
                for k in 0..bins {
                    let i = t * bins + k;
                    let m = mag[i];
                    if m > E::zero() {
                        let s = g[i] / m;
                        buf[k] = Complex::new(re[i] * s, im[i] * s);
                    }
                }
                plan.inverse_unscaled(&mut buf);
                let start = (t * hop) as isize - half;
                for (n, b) in buf.iter().enumerate() {
                    let idx = start + n as isize;
                    if idx >= 0 && (idx as usize) < len {
                        dx[idx as usize] = dx[idx as usize] + window[n] * b.re;
                    }
                }
            }
            drop(mag);
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}
