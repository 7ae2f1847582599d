//! Iterative radix-2 complex FFT, shared by the signal layer and the
//! differentiable spectral ops.
//!
//! Only power-of-two lengths are supported; every transform in the pipeline
//! uses 512 or 4096. Twiddle factors are evaluated in `f64` and cast down so
//! the `f32` path keeps full window/twiddle accuracy.

use num_complex::Complex;
use num_traits::Float;

/// Returns true when `n` is a nonzero power of two.
pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Precomputed bit-reversal permutation and twiddle table for length `n`.
pub struct FftPlan<E> {
    n: usize,
    rev: Vec<u32>,
    // twiddles[s] holds the m/2 factors for stage size m = 2 << s
    twiddles: Vec<Vec<Complex<E>>>,
}

impl<E: Float> FftPlan<E> {
    /// Builds a plan for length `n`, which must be a power of two.
    pub fn new(n: usize) -> Self {
        assert!(is_power_of_two(n), "fft length must be a power of two, got {n}");
        let bits = n.trailing_zeros();
        let mut rev = vec![0u32; n];
        for (i, r) in rev.iter_mut().enumerate() {
            *r = (i as u32).reverse_bits() >> (32 - bits.max(1));
        }
        if bits == 0 {
            rev[0] = 0;
        }
        let mut twiddles = Vec::new();
        let mut m = 2usize;
        while m <= n {
            let half = m / 2;
            let mut row = Vec::with_capacity(half);
            for j in 0..half {
                let ang = -2.0 * std::f64::consts::PI * j as f64 / m as f64;
                row.push(Complex::new(
                    E::from(ang.cos()).unwrap(),
                    E::from(ang.sin()).unwrap(),
                ));
            }
            twiddles.push(row);
            m *= 2;
        }
        FftPlan { n, rev, twiddles }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward DFT (negative-exponent convention) of `buf`.
    pub fn forward(&self, buf: &mut [Complex<E>]) {
        assert_eq!(buf.len(), self.n);
        for i in 0..self.n {
            let j = self.rev[i] as usize;
            if i < j {
                buf.swap(i, j);
            }
        }
        for (s, row) in self.twiddles.iter().enumerate() {
            let m = 2usize << s;
            let half = m / 2;
            let mut start = 0;
            while start < self.n {
                for j in 0..half {
                    let w = row[j];
                    let a = buf[start + j];
                    let b = buf[start + j + half] * w;
                    buf[start + j] = a + b;
                    buf[start + j + half] = a - b;
                }
                start += m;
            }
        }
    }

    /// In-place inverse DFT without the 1/N scaling (pure adjoint of
    /// [`forward`](Self::forward)).
    pub fn inverse_unscaled(&self, buf: &mut [Complex<E>]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
}

/// Periodic Hann window of length `n`, evaluated in `f64`.
pub fn hann_window<E: Float>(n: usize) -> Vec<E> {
    (0..n)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            E::from(0.5 - 0.5 * x.cos()).unwrap()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                    acc += v * Complex::new(ang.cos(), ang.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for &n in &[1usize, 2, 8, 64, 512] {
            let x: Vec<Complex<f64>> = (0..n)
                .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
                .collect();
            let want = naive_dft(&x);
            let mut got = x.clone();
            FftPlan::new(n).forward(&mut got);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).norm() < 1e-9 * (n as f64), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_is_adjoint() {
        let n = 128;
        let plan = FftPlan::new(n);
        let x: Vec<Complex<f64>> = (0..n)
            .map(|i| Complex::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).sin()))
            .collect();
        let mut buf = x.clone();
        plan.forward(&mut buf);
        plan.inverse_unscaled(&mut buf);
        for (a, b) in buf.iter().zip(&x) {
            assert!((a / n as f64 - b).norm() < 1e-10);
        }
    }

    #[test]
    #[should_panic(expected = "power of two")]
    fn rejects_non_power_of_two() {
        FftPlan::<f64>::new(48);
    }
}
