//! Matrix products and bias broadcasts.
//!
//! The raw GEMM kernels below back every linear, attention, and (via im2col)
//! convolution layer. Large products are split over row blocks with rayon;
//! each output row is produced by exactly one thread with a fixed summation
//! order, so results are bit-identical regardless of thread count.

use rayon::prelude::*;

use super::{Element, Result, Tape, Tensor, TensorError};

/// Products below this many multiply-adds stay single-threaded.
const PAR_THRESHOLD: usize = 1 << 21;

fn gemm_serial<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ip * bv;
            }
        }
    }
}

/// `out += a[m,k] @ b[k,n]`, row-major. `out` must hold `m*n` elements.
pub(crate) fn gemm<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        let threads = rayon::current_num_threads().max(1);
        let block = m.div_ceil(threads * 4).max(1);
        out.par_chunks_mut(block * n)
            .zip(a.par_chunks(block * k))
            .for_each(|(oc, ac)| gemm_serial(oc.len() / n, k, n, ac, b, oc));
    } else {
        gemm_serial(m, k, n, a, b, out);
    }
}

fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    // Four lanes keep the reduction pipelined; order is fixed, so results
    // stay deterministic.
    let mut acc = [E::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = E::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

fn gemm_nt_serial<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = *o + dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += a[m,k] @ b[n,k]^T`.
pub(crate) fn gemm_nt<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        let threads = rayon::current_num_threads().max(1);
        let block = m.div_ceil(threads * 4).max(1);
        out.par_chunks_mut(block * n)
            .zip(a.par_chunks(block * k))
            .for_each(|(oc, ac)| gemm_nt_serial(oc.len() / n, k, n, ac, b, oc));
    } else {
        gemm_nt_serial(m, k, n, a, b, out);
    }
}

fn gemm_tn_serial<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    // out[k,n] += a[m,k]^T @ b[m,n]
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_pi * bv;
            }
        }
    }
}

/// `out += a[m,k]^T @ b[m,n]`, producing `[k,n]`.
pub(crate) fn gemm_tn<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        let threads = rayon::current_num_threads().max(1);
        let block = k.div_ceil(threads * 4).max(1);
        // Parallelize over output row blocks; every thread scans all of a/b
        // but writes a disjoint row range.
        let ranges: Vec<(usize, usize)> = (0..k.div_ceil(block))
            .map(|c| (c * block, ((c + 1) * block).min(k)))
            .collect();
        out.par_chunks_mut(block * n)
            .zip(ranges)
            .for_each(|(oc, (lo, hi))| {
                for p in 0..m {
                    let a_row = &a[p * k..(p + 1) * k];
                    let b_row = &b[p * n..(p + 1) * n];
                    for i in lo..hi {
                        let a_pi = a_row[i];
                        let out_row = &mut oc[(i - lo) * n..(i - lo + 1) * n];
                        for (o, &bv) in out_row.iter_mut().zip(b_row) {
                            *o = *o + a_pi * bv;
                        }
                    }
                }
            });
    } else {
        gemm_tn_serial(m, k, n, a, b, out);
    }
}

fn dims2<E: Element>(t: &Tensor<E>, context: &'static str) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(TensorError::Dim(format!("{context} requires 2-d, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

/// `a[m,k] @ b[k,n] -> [m,n]` with the standard product gradients.
pub fn matmul<E: Element>(tape: &Tape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            context: "matmul inner extents",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut data = vec![E::zero(); m * n];
    gemm(m, k, n, &a.values(), &b.values(), &mut data);
    let out = Tensor::from_op(data, vec![m, n], tape.wants_grad(&[a, b]));
    if out.requires_grad() {
        let (a, b) = (a.clone(), b.clone());
        tape.record(&out, move |g| {
            if a.requires_grad() {
                let mut da = vec![E::zero(); m * k];
                gemm_nt(m, n, k, g, &b.values(), &mut da);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let mut db = vec![E::zero(); k * n];
                gemm_tn(m, k, n, &a.values(), g, &mut db);
                b.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// `a[m,k] @ b[n,k]^T -> [m,n]`; the transposed form attention and LSTM
/// gates want, without materializing the transpose.
pub fn matmul_nt<E: Element>(tape: &Tape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, k) = dims2(a, "matmul_nt")?;
    let (n, k2) = dims2(b, "matmul_nt")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            context: "matmul_nt inner extents",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut data = vec![E::zero(); m * n];
    gemm_nt(m, k, n, &a.values(), &b.values(), &mut data);
    let out = Tensor::from_op(data, vec![m, n], tape.wants_grad(&[a, b]));
    if out.requires_grad() {
        let (a, b) = (a.clone(), b.clone());
        tape.record(&out, move |g| {
            if a.requires_grad() {
                // da = g[m,n] @ b[n,k]
                let mut da = vec![E::zero(); m * k];
                gemm(m, n, k, g, &b.values(), &mut da);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                // db = g[m,n]^T @ a[m,k]
                let mut db = vec![E::zero(); n * k];
                gemm_tn(m, n, k, g, &a.values(), &mut db);
                b.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

pub fn transpose2d<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    let (r, c) = dims2(x, "transpose2d")?;
    let values = x.values();
    let mut data = vec![E::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = values[i * c + j];
        }
    }
    drop(values);
    let out = Tensor::from_op(data, vec![c, r], tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let mut dx = vec![E::zero(); r * c];
            for j in 0..c {
                for i in 0..r {
                    dx[i * c + j] = g[j * r + i];
                }
            }
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}

/// `x[r, d] + bias[d]` broadcast over rows.
pub fn add_row_bias<E: Element>(tape: &Tape<E>, x: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    let (r, d) = dims2(x, "add_row_bias")?;
    if bias.shape() != [d] {
        return Err(TensorError::ShapeMismatch {
            context: "add_row_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let bv = bias.values();
    let data: Vec<E> = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + bv[i % d])
        .collect();
    drop(bv);
    let out = Tensor::from_op(data, vec![r, d], tape.wants_grad(&[x, bias]));
    if out.requires_grad() {
        let (x, bias) = (x.clone(), bias.clone());
        tape.record(&out, move |g| {
            x.accumulate_grad(g);
            if bias.requires_grad() {
                let mut db = vec![E::zero(); d];
                for row in g.chunks_exact(d) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                bias.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// `x[c, ...] + bias[c]` broadcast over everything after the channel axis.
pub fn add_channel_bias<E: Element>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let shape = x.shape();
    let c = shape
        .first()
        .copied()
        .ok_or_else(|| TensorError::Dim("add_channel_bias on 0-d tensor".into()))?;
    if bias.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            context: "add_channel_bias",
            lhs: shape.to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let inner: usize = shape[1..].iter().product();
    let bv = bias.values();
    let mut data = x.to_vec();
    for (ch, chunk) in data.chunks_exact_mut(inner).enumerate() {
        let b = bv[ch];
        for v in chunk {
            *v = *v + b;
        }
    }
    drop(bv);
    let out = Tensor::from_op(data, shape.to_vec(), tape.wants_grad(&[x, bias]));
    if out.requires_grad() {
        let (x, bias) = (x.clone(), bias.clone());
        tape.record(&out, move |g| {
            x.accumulate_grad(g);
            if bias.requires_grad() {
                let db: Vec<E> = g
                    .chunks_exact(inner)
                    .map(|chunk| chunk.iter().fold(E::zero(), |acc, &v| acc + v))
                    .collect();
                bias.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}
