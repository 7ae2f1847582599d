//! Normalization ops and softmax.

use super::{Element, Result, Tape, Tensor, TensorError};

/// Layer norm over the last axis with affine parameters.
pub fn layer_norm<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: E,
) -> Result<Tensor<E>> {
    let shape = x.shape();
    let d = *shape.last().ok_or_else(|| TensorError::Dim("layer_norm on 0-d".into()))?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(TensorError::ShapeMismatch {
            context: "layer_norm affine",
            lhs: vec![d],
            rhs: gamma.shape().to_vec(),
        });
    }
    let rows = x.numel() / d;
    let values = x.values();
    let gv = gamma.values();
    let bv = beta.values();
    let mut data = vec![E::zero(); values.len()];
    let mut inv_stds = Vec::with_capacity(rows);
    let inv_d = E::one() / E::lit(d as f64);
    for r in 0..rows {
        let row = &values[r * d..(r + 1) * d];
        let mean = row.iter().fold(E::zero(), |a, &v| a + v) * inv_d;
        let var = row.iter().fold(E::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let inv_std = E::one() / (var + eps).sqrt();
        inv_stds.push(inv_std);
        for i in 0..d {
            data[r * d + i] = (row[i] - mean) * inv_std * gv[i] + bv[i];
        }
    }
    drop((values, gv, bv));
    let out = Tensor::from_op(data, shape.to_vec(), tape.wants_grad(&[x, gamma, beta]));
    if out.requires_grad() {
        let (x, gamma, beta) = (x.clone(), gamma.clone(), beta.clone());
        tape.record(&out, move |g| {
            let values = x.values();
            let gv = gamma.values();
            let mut dx = vec![E::zero(); values.len()];
            let mut dgamma = vec![E::zero(); d];
            let mut dbeta = vec![E::zero(); d];
            let inv_d = E::one() / E::lit(d as f64);
            for r in 0..rows {
                let row = &values[r * d..(r + 1) * d];
                let grow = &g[r * d..(r + 1) * d];
                let mean = row.iter().fold(E::zero(), |a, &v| a + v) * inv_d;
                let inv_std = inv_stds[r];
                let mut sum_dxhat = E::zero();
                let mut sum_dxhat_xhat = E::zero();
                for i in 0..d {
                    let xhat = (row[i] - mean) * inv_std;
                    let dxhat = grow[i] * gv[i];
                    dgamma[i] = dgamma[i] + grow[i] * xhat;
                    dbeta[i] = dbeta[i] + grow[i];
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                }
                for i in 0..d {
                    let xhat = (row[i] - mean) * inv_std;
                    let dxhat = grow[i] * gv[i];
                    dx[r * d + i] =
                        inv_std * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                }
            }
            drop((values, gv));
            x.accumulate_grad(&dx);
            gamma.accumulate_grad(&dgamma);
            beta.accumulate_grad(&dbeta);
        });
    }
    Ok(out)
}

/// Per-channel batch norm over `[C, ...]`.
///
/// In training mode the batch statistics normalize the input and are
/// returned so the owning layer can update its running buffers; in eval mode
/// `running` supplies the (non-differentiable) statistics.
pub struct BatchNormOutput<E: Element> {
    pub out: Tensor<E>,
    /// `(mean, var)` per channel, present in training mode.
    pub batch_stats: Option<(Vec<E>, Vec<E>)>,
}

pub fn batch_norm<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running: (&[E], &[E]),
    training: bool,
    eps: E,
) -> Result<BatchNormOutput<E>> {
    let shape = x.shape();
    let c = *shape.first().ok_or_else(|| TensorError::Dim("batch_norm on 0-d".into()))?;
    if gamma.shape() != [c] || beta.shape() != [c] || running.0.len() != c || running.1.len() != c {
        return Err(TensorError::ShapeMismatch {
            context: "batch_norm parameters",
            lhs: vec![c],
            rhs: gamma.shape().to_vec(),
        });
    }
    let inner: usize = shape[1..].iter().product();
    let inv_n = E::one() / E::lit(inner as f64);
    let values = x.values();
    let (mean, var): (Vec<E>, Vec<E>) = if training {
        let mut mean = vec![E::zero(); c];
        let mut var = vec![E::zero(); c];
        for ch in 0..c {
            let plane = &values[ch * inner..(ch + 1) * inner];
            let m = plane.iter().fold(E::zero(), |a, &v| a + v) * inv_n;
            mean[ch] = m;
            var[ch] = plane.iter().fold(E::zero(), |a, &v| a + (v - m) * (v - m)) * inv_n;
        }
        (mean, var)
    } else {
        (running.0.to_vec(), running.1.to_vec())
    };
    let gv = gamma.values();
    let bv = beta.values();
    let mut data = vec![E::zero(); values.len()];
    for ch in 0..c {
        let inv_std = E::one() / (var[ch] + eps).sqrt();
        let plane = &values[ch * inner..(ch + 1) * inner];
        let dst = &mut data[ch * inner..(ch + 1) * inner];
        for (o, &v) in dst.iter_mut().zip(plane) {
            *o = (v - mean[ch]) * inv_std * gv[ch] + bv[ch];
        }
    }
    drop((values, gv, bv));
    let out = Tensor::from_op(data, shape.to_vec(), tape.wants_grad(&[x, gamma, beta]));
    if out.requires_grad() {
        let (x, gamma, beta) = (x.clone(), gamma.clone(), beta.clone());
        let mean_c = mean.clone();
        let var_c = var.clone();
        tape.record(&out, move |g| {
            let values = x.values();
            let gv = gamma.values();
            let mut dx = vec![E::zero(); values.len()];
            let mut dgamma = vec![E::zero(); c];
            let mut dbeta = vec![E::zero(); c];
            for ch in 0..c {
                let inv_std = E::one() / (var_c[ch] + eps).sqrt();
                let plane = &values[ch * inner..(ch + 1) * inner];
                let grow = &g[ch * inner..(ch + 1) * inner];
                let mut sum_g = E::zero();
                let mut sum_g_xhat = E::zero();
                for i in 0..inner {
                    let xhat = (plane[i] - mean_c[ch]) * inv_std;
                    sum_g = sum_g + grow[i];
                    sum_g_xhat = sum_g_xhat + grow[i] * xhat;
                }
                dgamma[ch] = sum_g_xhat;
                dbeta[ch] = sum_g;
                let dst = &mut dx[ch * inner..(ch + 1) * inner];
                if training {
                    for i in 0..inner {
                        let xhat = (plane[i] - mean_c[ch]) * inv_std;
                        dst[i] = gv[ch]
                            * inv_std
                            * (grow[i] - inv_n * sum_g - xhat * inv_n * sum_g_xhat);
                    }
                } else {
                    // Stats are constants in eval mode.
                    for i in 0..inner {
                        dst[i] = grow[i] * gv[ch] * inv_std;
                    }
                }
            }
            drop((values, gv));
            x.accumulate_grad(&dx);
            gamma.accumulate_grad(&dgamma);
            beta.accumulate_grad(&dbeta);
        });
    }
    Ok(BatchNormOutput {
        out,
        batch_stats: training.then_some((mean, var)),
    })
}

/// Row softmax over the last axis, stabilized by max subtraction.
pub fn softmax_last<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = x.shape();
    let d = *shape.last().ok_or_else(|| TensorError::Dim("softmax on 0-d".into()))?;
    let rows = x.numel() / d;
    let values = x.values();
    let mut data = vec![E::zero(); values.len()];
    for r in 0..rows {
        let row = &values[r * d..(r + 1) * d];
        let max = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
        let mut sum = E::zero();
        for i in 0..d {
            let e = (row[i] - max).exp();
            data[r * d + i] = e;
            sum = sum + e;
        }
        let inv = E::one() / sum;
        for i in 0..d {
            data[r * d + i] = data[r * d + i] * inv;
        }
    }
    drop(values);
    let out = Tensor::from_op(data, shape.to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.record(&out, move |g| {
            let sv = o.values();
            let mut dx = vec![E::zero(); sv.len()];
            for r in 0..rows {
                let srow = &sv[r * d..(r + 1) * d];
                let grow = &g[r * d..(r + 1) * d];
                let dot = srow
                    .iter()
                    .zip(grow)
                    .fold(E::zero(), |a, (&s, &gv)| a + s * gv);
                for i in 0..d {
                    dx[r * d + i] = srow[i] * (grow[i] - dot);
                }
            }
            drop(sv);
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Global standardization: `(x - mean) / max(std, 1e-5)` over all elements.
/// The clamp keeps constant inputs at exactly zero instead of blowing up.
pub fn standardize<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let clamp = E::lit(1e-5);
    let n = x.numel();
    let inv_n = E::one() / E::lit(n as f64);
    let values = x.values();
    let mean = values.iter().fold(E::zero(), |a, &v| a + v) * inv_n;
    let var = values.iter().fold(E::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_n;
    let std = var.sqrt();
    let clamped = std < clamp;
    let denom = if clamped { clamp } else { std };
    let inv_denom = E::one() / denom;
    let data: Vec<E> = values.iter().map(|&v| (v - mean) * inv_denom).collect();
    drop(values);
    let out = Tensor::from_op(data, x.shape().to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.record(&out, move |g| {
            let mean_g = g.iter().fold(E::zero(), |a, &v| a + v) * inv_n;
            let dx: Vec<E> = if clamped {
                g.iter().map(|&gv| (gv - mean_g) * inv_denom).collect()
            } else {
                let ov = o.values();
                let mean_g_xhat = g
                    .iter()
                    .zip(ov.iter())
                    .fold(E::zero(), |a, (&gv, &xh)| a + gv * xh)
                    * inv_n;
                g.iter()
                    .zip(ov.iter())
                    .map(|(&gv, &xh)| inv_denom * (gv - mean_g - xh * mean_g_xhat))
                    .collect()
            };
            x.accumulate_grad(&dx);
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_of_constant_row_is_zero_before_affine() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![4.0f64; 6], &[2, 3]).unwrap();
        let gamma = Tensor::new(vec![1.0f64; 3], &[3]).unwrap();
        let beta = Tensor::new(vec![0.0f64; 3], &[3]).unwrap();
        let y = layer_norm(&tape, &x, &gamma, &beta, 1e-5).unwrap();
        for v in y.to_vec() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![1.0f64, 2.0, 3.0, 4.0, -1.0, 0.5, 2.5, 9.0], &[2, 4]).unwrap();
        let gamma = Tensor::new(vec![1.0f64; 4], &[4]).unwrap();
        let beta = Tensor::new(vec![0.0f64; 4], &[4]).unwrap();
        let y = layer_norm(&tape, &x, &gamma, &beta, 1e-12).unwrap();
        for row in y.to_vec().chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![1.0f32, 2.0, 3.0, -5.0, 0.0, 5.0], &[2, 3]).unwrap();
        let s = softmax_last(&tape, &x).unwrap();
        for row in s.to_vec().chunks(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn standardize_constant_input_gives_zeros() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![7.5f32; 10], &[10]).unwrap();
        let y = standardize(&tape, &x);
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_is_idempotent_within_tolerance() {
        let tape = Tape::inference();
        let raw: Vec<f64> = (0..64).map(|i| ((i * 37 % 19) as f64) * 0.3 - 2.0).collect();
        let x = Tensor::new(raw, &[64]).unwrap();
        let once = standardize(&tape, &x);
        let twice = standardize(&tape, &once);
        for (a, b) in once.to_vec().iter().zip(twice.to_vec()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_eval_with_identity_stats_passes_zeros() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![0.0f32; 12], &[3, 4]).unwrap();
        let gamma = Tensor::new(vec![1.0f32; 3], &[3]).unwrap();
        let beta = Tensor::new(vec![0.0f32; 3], &[3]).unwrap();
        let mean = vec![0.0f32; 3];
        let var = vec![1.0f32; 3];
        let r = batch_norm(&tape, &x, &gamma, &beta, (&mean, &var), false, 1e-5).unwrap();
        assert!(r.out.to_vec().iter().all(|&v| v == 0.0));
        assert!(r.batch_stats.is_none());
    }

    #[test]
    fn batch_norm_train_returns_batch_stats() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![1.0f64, 3.0, 10.0, 14.0], &[2, 2]).unwrap();
        let gamma = Tensor::new(vec![1.0f64; 2], &[2]).unwrap();
        let beta = Tensor::new(vec![0.0f64; 2], &[2]).unwrap();
        let running = (vec![0.0f64; 2], vec![1.0f64; 2]);
        let r = batch_norm(&tape, &x, &gamma, &beta, (&running.0, &running.1), true, 0.0).unwrap();
        let (mean, var) = r.batch_stats.unwrap();
        assert_eq!(mean, vec![2.0, 12.0]);
        assert_eq!(var, vec![1.0, 4.0]);
    }
}
