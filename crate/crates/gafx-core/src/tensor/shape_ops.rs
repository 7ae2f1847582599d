//! Shape manipulation, reductions, and index-mapped ops.

use super::{Element, Result, Tape, Tensor, TensorError};

/// Row-major reshape (copying). The element count must be preserved.
pub fn reshape<E: Element>(tape: &Tape<E>, x: &Tensor<E>, shape: &[usize]) -> Result<Tensor<E>> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() {
        return Err(TensorError::Dim(format!(
            "reshape {:?} -> {:?} changes element count",
            x.shape(),
            shape
        )));
    }
    let out = Tensor::from_op(x.to_vec(), shape.to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| x.accumulate_grad(g));
    }
    Ok(out)
}

/// Splits a shape at `dim` into (outer, extent, inner) strides.
fn split_at_dim(shape: &[usize], dim: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..dim].iter().product();
    let inner: usize = shape[dim + 1..].iter().product();
    (outer, shape[dim], inner)
}

/// Contiguous slice `[start, start+len)` along `dim`.
pub fn narrow<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    dim: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<E>> {
    let shape = x.shape();
    if dim >= shape.len() || start + len > shape[dim] || len == 0 {
        return Err(TensorError::Dim(format!(
            "narrow dim {dim} range {start}..{} out of bounds for {:?}",
            start + len,
            shape
        )));
    }
    let (outer, extent, inner) = split_at_dim(shape, dim);
    let values = x.values();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&values[base..base + len * inner]);
    }
    drop(values);
    let mut out_shape = shape.to_vec();
    out_shape[dim] = len;
    let out = Tensor::from_op(data, out_shape, tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let mut dx = vec![E::zero(); outer * extent * inner];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * extent + start) * inner;
                dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Zero-pads along `dim` with `before`/`after` rows.
pub fn pad_dim<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    dim: usize,
    before: usize,
    after: usize,
) -> Result<Tensor<E>> {
    let shape = x.shape();
    if dim >= shape.len() {
        return Err(TensorError::Dim(format!("pad dim {dim} for {:?}", shape)));
    }
    if before == 0 && after == 0 {
        return narrow(tape, x, dim, 0, shape[dim]);
    }
    let (outer, extent, inner) = split_at_dim(shape, dim);
    let new_extent = extent + before + after;
    let values = x.values();
    let mut data = vec![E::zero(); outer * new_extent * inner];
    for o in 0..outer {
        let dst = (o * new_extent + before) * inner;
        let src = o * extent * inner;
        data[dst..dst + extent * inner].copy_from_slice(&values[src..src + extent * inner]);
    }
    drop(values);
    let mut out_shape = shape.to_vec();
    out_shape[dim] = new_extent;
    let out = Tensor::from_op(data, out_shape, tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let mut dx = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                let src = (o * new_extent + before) * inner;
                dx.extend_from_slice(&g[src..src + extent * inner]);
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Concatenates tensors along `dim`; all other extents must agree.
pub fn concat<E: Element>(tape: &Tape<E>, parts: &[&Tensor<E>], dim: usize) -> Result<Tensor<E>> {
    if parts.is_empty() {
        return Err(TensorError::Dim("concat of zero tensors".into()));
    }
    let first = parts[0].shape();
    if dim >= first.len() {
        return Err(TensorError::Dim(format!("concat dim {dim} for {:?}", first)));
    }
    let mut total = 0;
    for p in parts {
        let s = p.shape();
        if s.len() != first.len()
            || s.iter().zip(first).enumerate().any(|(i, (a, b))| i != dim && a != b)
        {
            return Err(TensorError::ShapeMismatch {
                context: "concat",
                lhs: first.to_vec(),
                rhs: s.to_vec(),
            });
        }
        total += s[dim];
    }
    let (outer, _, inner) = split_at_dim(first, dim);
    let mut out_shape = first.to_vec();
    out_shape[dim] = total;
    let mut data = vec![E::zero(); outer * total * inner];
    let mut offset = 0;
    for p in parts {
        let extent = p.shape()[dim];
        let values = p.values();
        for o in 0..outer {
            let dst = (o * total + offset) * inner;
            let src = o * extent * inner;
            data[dst..dst + extent * inner].copy_from_slice(&values[src..src + extent * inner]);
        }
        offset += extent;
    }
    let out = Tensor::from_op(data, out_shape, tape.wants_grad(parts));
    if out.requires_grad() {
        let parts: Vec<Tensor<E>> = parts.iter().map(|&p| p.clone()).collect();
        tape.record(&out, move |g| {
            let mut offset = 0;
            for p in &parts {
                let extent = p.shape()[dim];
                let mut dp = Vec::with_capacity(outer * extent * inner);
                for o in 0..outer {
                    let src = (o * total + offset) * inner;
                    dp.extend_from_slice(&g[src..src + extent * inner]);
                }
                p.accumulate_grad(&dp);
                offset += extent;
            }
        });
    }
    Ok(out)
}

/// Mean over one axis, removing it.
pub fn mean_axis<E: Element>(tape: &Tape<E>, x: &Tensor<E>, dim: usize) -> Result<Tensor<E>> {
    let shape = x.shape();
    if dim >= shape.len() {
        return Err(TensorError::Dim(format!("mean_axis dim {dim} for {:?}", shape)));
    }
    let (outer, extent, inner) = split_at_dim(shape, dim);
    let inv = E::one() / E::lit(extent as f64);
    let values = x.values();
    let mut data = vec![E::zero(); outer * inner];
    for o in 0..outer {
        for e in 0..extent {
            let src = (o * extent + e) * inner;
            let dst = o * inner;
            for i in 0..inner {
                data[dst + i] = data[dst + i] + values[src + i];
            }
        }
    }
    for v in data.iter_mut() {
        *v = *v * inv;
    }
    drop(values);
    let mut out_shape: Vec<usize> = shape.to_vec();
    out_shape.remove(dim);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let out = Tensor::from_op(data, out_shape, tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let mut dx = vec![E::zero(); outer * extent * inner];
            for o in 0..outer {
                for e in 0..extent {
                    let dst = (o * extent + e) * inner;
                    let src = o * inner;
                    for i in 0..inner {
                        dx[dst + i] = g[src + i] * inv;
                    }
                }
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

pub fn sum_all<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let s = x.values().iter().fold(E::zero(), |acc, &v| acc + v);
    let out = Tensor::from_op(vec![s], vec![1], tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            x.accumulate_grad(&vec![g[0]; x.numel()]);
        });
    }
    out
}

pub fn mean_all<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let n = E::lit(x.numel() as f64);
    let s = x.values().iter().fold(E::zero(), |acc, &v| acc + v) / n;
    let out = Tensor::from_op(vec![s], vec![1], tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let gv = g[0] / n;
            x.accumulate_grad(&vec![gv; x.numel()]);
        });
    }
    out
}

/// Cuts a `[T, F]` map into non-overlapping `ph x pw` patches in row-major
/// grid order, flattening each patch row-major. `T` and `F` must be
/// multiples of the patch extents (pad first).
pub fn extract_patches<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    ph: usize,
    pw: usize,
) -> Result<Tensor<E>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(TensorError::Dim(format!("extract_patches on {:?}", shape)));
    }
    let (t, f) = (shape[0], shape[1]);
    if t % ph != 0 || f % pw != 0 {
        return Err(TensorError::Dim(format!(
            "patch {ph}x{pw} does not divide {:?}",
            shape
        )));
    }
    let rows = t / ph;
    let cols = f / pw;
    let count = rows * cols;
    let values = x.values();
    let mut data = Vec::with_capacity(count * ph * pw);
    for r in 0..rows {
        for c in 0..cols {
            for a in 0..ph {
                let base = (r * ph + a) * f + c * pw;
                data.extend_from_slice(&values[base..base + pw]);
            }
        }
    }
    drop(values);
    let out = Tensor::from_op(data, vec![count, ph * pw], tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let mut dx = vec![E::zero(); t * f];
            let mut src = 0;
            for r in 0..rows {
                for c in 0..cols {
                    for a in 0..ph {
                        let base = (r * ph + a) * f + c * pw;
                        dx[base..base + pw].copy_from_slice(&g[src..src + pw]);
                        src += pw;
                    }
                }
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// Linear interpolation of a `[T, F]` map to `[T', F]` along the time axis,
/// with endpoints aligned.
pub fn time_resample_linear<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    new_t: usize,
) -> Result<Tensor<E>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(TensorError::Dim(format!("time_resample_linear on {:?}", shape)));
    }
    let (t, f) = (shape[0], shape[1]);
    if new_t == 0 {
        return Err(TensorError::Dim("time_resample_linear to zero rows".into()));
    }
    // (row index, lower source row, interpolation weight toward the next row)
    let taps: Vec<(usize, E)> = (0..new_t)
        .map(|r| {
            if t == 1 || new_t == 1 {
                return (0, E::zero());
            }
            let pos = r as f64 * (t - 1) as f64 / (new_t - 1) as f64;
            let lo = (pos.floor() as usize).min(t - 2);
            (lo, E::lit(pos - lo as f64))
        })
        .collect();
    let values = x.values();
    let mut data = Vec::with_capacity(new_t * f);
    for &(lo, w) in &taps {
        let a = &values[lo * f..(lo + 1) * f];
        if w == E::zero() {
            data.extend_from_slice(a);
        } else {
            let b = &values[(lo + 1) * f..(lo + 2) * f];
            data.extend(a.iter().zip(b).map(|(&av, &bv)| av + (bv - av) * w));
        }
    }
    drop(values);
    let out = Tensor::from_op(data, vec![new_t, f], tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let mut dx = vec![E::zero(); t * f];
            for (r, &(lo, w)) in taps.iter().enumerate() {
                let gr = &g[r * f..(r + 1) * f];
                for i in 0..f {
                    dx[lo * f + i] = dx[lo * f + i] + gr[i] * (E::one() - w);
                }
                if w != E::zero() {
                    for i in 0..f {
                        dx[(lo + 1) * f + i] = dx[(lo + 1) * f + i] + gr[i] * w;
                    }
                }
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}
