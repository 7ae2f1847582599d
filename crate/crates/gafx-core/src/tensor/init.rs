//! Seeded weight initialization.
//!
//! Kaiming-uniform for convolutions and linear maps, plain `±1/sqrt(fan_in)`
//! uniform for recurrent weights. All draws go through a caller-owned
//! `ChaCha8Rng`, so a fixed seed reproduces every parameter bit-for-bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Element, Tensor};

fn uniform<E: Element>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<E> {
    (0..n).map(|_| E::lit(rng.gen_range(-bound..bound))).collect()
}

/// Kaiming-uniform values: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform<E: Element>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::param(uniform(rng, n, bound), shape).expect("init shape")
}

/// Plain `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, used for LSTM weights.
pub fn uniform_fan_in<E: Element>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::param(uniform(rng, n, bound), shape).expect("init shape")
}

/// Zero-initialized parameter (biases, positional embeddings).
pub fn zeros_param<E: Element>(shape: &[usize]) -> Tensor<E> {
    Tensor::param(vec![E::zero(); shape.iter().product()], shape).expect("init shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn same_seed_same_bits() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let ta: Tensor<f32> = kaiming_uniform(&mut a, &[4, 5], 5);
        let tb: Tensor<f32> = kaiming_uniform(&mut b, &[4, 5], 5);
        assert_eq!(
            ta.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            tb.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bounds_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = kaiming_uniform(&mut rng, &[100], 24);
        let bound = (6.0 / 24.0f64).sqrt();
        assert!(t.to_vec().iter().all(|v| v.abs() <= bound));
        assert!(t.requires_grad());
    }
}
