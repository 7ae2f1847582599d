//! Elementwise arithmetic and activations.

use super::{Element, Result, Tape, Tensor, TensorError};

fn check_same_shape<E: Element>(
    context: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            context,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add<E: Element>(tape: &Tape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    check_same_shape("add", a, b).expect("add shapes");
    let data: Vec<E> = a.values().iter().zip(b.values().iter()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::from_op(data, a.shape().to_vec(), tape.wants_grad(&[a, b]));
    if out.requires_grad() {
        let (a, b) = (a.clone(), b.clone());
        tape.record(&out, move |g| {
            a.accumulate_grad(g);
            b.accumulate_grad(g);
        });
    }
    out
}

pub fn sub<E: Element>(tape: &Tape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    check_same_shape("sub", a, b).expect("sub shapes");
    let data: Vec<E> = a.values().iter().zip(b.values().iter()).map(|(&x, &y)| x - y).collect();
    let out = Tensor::from_op(data, a.shape().to_vec(), tape.wants_grad(&[a, b]));
    if out.requires_grad() {
        let (a, b) = (a.clone(), b.clone());
        tape.record(&out, move |g| {
            a.accumulate_grad(g);
            let neg: Vec<E> = g.iter().map(|&v| -v).collect();
            b.accumulate_grad(&neg);
        });
    }
    out
}

pub fn mul<E: Element>(tape: &Tape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    check_same_shape("mul", a, b).expect("mul shapes");
    let data: Vec<E> = a.values().iter().zip(b.values().iter()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::from_op(data, a.shape().to_vec(), tape.wants_grad(&[a, b]));
    if out.requires_grad() {
        let (a, b) = (a.clone(), b.clone());
        tape.record(&out, move |g| {
            let da: Vec<E> = g.iter().zip(b.values().iter()).map(|(&gv, &bv)| gv * bv).collect();
            a.accumulate_grad(&da);
            let db: Vec<E> = g.iter().zip(a.values().iter()).map(|(&gv, &av)| gv * av).collect();
            b.accumulate_grad(&db);
        });
    }
    out
}

pub fn neg<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    scale(tape, x, -E::one())
}

pub fn scale<E: Element>(tape: &Tape<E>, x: &Tensor<E>, c: E) -> Tensor<E> {
    let data: Vec<E> = x.values().iter().map(|&v| v * c).collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let dx: Vec<E> = g.iter().map(|&v| v * c).collect();
            x.accumulate_grad(&dx);
        });
    }
    out
}

pub fn add_scalar<E: Element>(tape: &Tape<E>, x: &Tensor<E>, c: E) -> Tensor<E> {
    let data: Vec<E> = x.values().iter().map(|&v| v + c).collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| x.accumulate_grad(g));
    }
    out
}

pub fn relu<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let zero = E::zero();
    // NaN must stay visible so divergence surfaces instead of washing out
    let data: Vec<E> = x
        .values()
        .iter()
        .map(|&v| if v > zero || v.is_nan() { v } else { zero })
        .collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let dx: Vec<E> = g
                .iter()
                .zip(x.values().iter())
                .map(|(&gv, &xv)| if xv > E::zero() { gv } else { E::zero() })
                .collect();
            x.accumulate_grad(&dx);
        });
    }
    out
}

fn sigmoid_scalar<E: Element>(v: E) -> E {
    E::one() / (E::one() + (-v).exp())
}

pub fn sigmoid<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let data: Vec<E> = x.values().iter().map(|&v| sigmoid_scalar(v)).collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.record(&out, move |g| {
            let dx: Vec<E> = g
                .iter()
                .zip(o.values().iter())
                .map(|(&gv, &s)| gv * s * (E::one() - s))
                .collect();
            x.accumulate_grad(&dx);
        });
    }
    out
}

pub fn tanh<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let data: Vec<E> = x.values().iter().map(|&v| v.tanh()).collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let (x, o) = (x.clone(), out.clone());
        tape.record(&out, move |g| {
            let dx: Vec<E> = g
                .iter()
                .zip(o.values().iter())
                .map(|(&gv, &t)| gv * (E::one() - t * t))
                .collect();
            x.accumulate_grad(&dx);
        });
    }
    out
}

/// Tanh-approximated GELU.
pub fn gelu<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Tensor<E> {
    let c = E::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = E::lit(0.044715);
    let half = E::lit(0.5);
    let data: Vec<E> = x
        .values()
        .iter()
        .map(|&v| half * v * (E::one() + (c * (v + k * v * v * v)).tanh()))
        .collect();
    let out = Tensor::from_op(data, x.shape().to_vec(), tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let dx: Vec<E> = g
                .iter()
                .zip(x.values().iter())
                .map(|(&gv, &v)| {
                    let inner = c * (v + k * v * v * v);
                    let t = inner.tanh();
                    let sech2 = E::one() - t * t;
                    let dinner = c * (E::one() + E::lit(3.0) * k * v * v);
                    gv * (half * (E::one() + t) + half * v * sech2 * dinner)
                })
                .collect();
            x.accumulate_grad(&dx);
        });
    }
    out
}

/// Gated linear unit over the leading (channel) axis: the first half of the
/// channels is gated by the sigmoid of the second half, halving the channel
/// count.
pub fn glu<E: Element>(tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = x.shape();
    let channels = shape[0];
    if channels % 2 != 0 {
        return Err(TensorError::Dim(format!(
            "glu needs an even channel count, got {channels}"
        )));
    }
    let half = channels / 2;
    let inner: usize = shape[1..].iter().product();
    let values = x.values();
    let mut data = Vec::with_capacity(half * inner);
    for c in 0..half {
        let a = &values[c * inner..(c + 1) * inner];
        let b = &values[(half + c) * inner..(half + c + 1) * inner];
        data.extend(a.iter().zip(b).map(|(&av, &bv)| av * sigmoid_scalar(bv)));
    }
    drop(values);
    let mut out_shape = shape.to_vec();
    out_shape[0] = half;
    let out = Tensor::from_op(data, out_shape, tape.wants_grad(&[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.record(&out, move |g| {
            let values = x.values();
            let mut dx = vec![E::zero(); values.len()];
            for c in 0..half {
                let a = &values[c * inner..(c + 1) * inner];
                let b = &values[(half + c) * inner..(half + c + 1) * inner];
                let go = &g[c * inner..(c + 1) * inner];
                for i in 0..inner {
                    let s = sigmoid_scalar(b[i]);
                    dx[c * inner + i] = go[i] * s;
                    dx[(half + c) * inner + i] = go[i] * a[i] * s * (E::one() - s);
                }
            }
            drop(values);
            x.accumulate_grad(&dx);
        });
    }
    Ok(out)
}
