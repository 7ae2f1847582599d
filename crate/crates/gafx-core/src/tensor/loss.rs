//! Classification and regression losses.

use super::{Element, Result, Tape, Tensor, TensorError};

/// Mean negative log-softmax of the labelled class over a `[N, K]` batch of
/// logits, stabilized by max subtraction.
pub fn softmax_cross_entropy<E: Element>(
    tape: &Tape<E>,
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<Tensor<E>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(TensorError::Dim(format!(
            "softmax_cross_entropy expects [N,K] logits, got {shape:?}"
        )));
    }
    let (n, k) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(TensorError::Dim(format!(
            "{} labels for {} logit rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Dim(format!("label {bad} out of range 0..{k}")));
    }
    let values = logits.values();
    let mut total = E::zero();
    for (r, &label) in labels.iter().enumerate() {
        let row = &values[r * k..(r + 1) * k];
        let max = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
        let lse = row.iter().fold(E::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        total = total + lse - row[label];
    }
    drop(values);
    let loss = total / E::lit(n as f64);
    if !loss.is_finite() {
        return Err(TensorError::NonFinite("softmax_cross_entropy".into()));
    }
    let out = Tensor::from_op(vec![loss], vec![1], tape.wants_grad(&[logits]));
    if out.requires_grad() {
        let logits = logits.clone();
        let labels = labels.to_vec();
        tape.record(&out, move |g| {
            // d loss / d logit = (softmax - one_hot) / N
            let values = logits.values();
            let inv_n = E::one() / E::lit(labels.len() as f64);
            let mut dl = vec![E::zero(); values.len()];
            for (r, &label) in labels.iter().enumerate() {
                let row = &values[r * k..(r + 1) * k];
                let max = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
                let sum = row.iter().fold(E::zero(), |a, &v| a + (v - max).exp());
                for i in 0..k {
                    let p = (row[i] - max).exp() / sum;
                    let hot = if i == label { E::one() } else { E::zero() };
                    dl[r * k + i] = g[0] * (p - hot) * inv_n;
                }
            }
            drop(values);
            logits.accumulate_grad(&dl);
        });
    }
    Ok(out)
}

/// Mean binary cross-entropy with logits, in the overflow-safe form
/// `max(x,0) - x*t + ln(1 + exp(-|x|))`. Targets must lie in `[0,1]`.
pub fn bce_with_logits<E: Element>(
    tape: &Tape<E>,
    pred: &Tensor<E>,
    target: &Tensor<E>,
) -> Result<Tensor<E>> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            context: "bce_with_logits",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    {
        let tv = target.values();
        if tv.iter().any(|&t| t < E::zero() || t > E::one()) {
            return Err(TensorError::Config(
                "bce_with_logits target outside [0,1]".into(),
            ));
        }
    }
    let n = E::lit(pred.numel() as f64);
    let total = {
        let pv = pred.values();
        let tv = target.values();
        pv.iter().zip(tv.iter()).fold(E::zero(), |acc, (&x, &t)| {
            acc + x.max(E::zero()) - x * t + (E::one() + (-x.abs()).exp()).ln()
        })
    };
    let loss = total / n;
    if !loss.is_finite() {
        return Err(TensorError::NonFinite("bce_with_logits".into()));
    }
    let out = Tensor::from_op(vec![loss], vec![1], tape.wants_grad(&[pred]));
    if out.requires_grad() {
        let (pred, target) = (pred.clone(), target.clone());
        tape.record(&out, move |g| {
            // d/dx = sigmoid(x) - t, averaged
            let pv = pred.values();
            let tv = target.values();
            let dl: Vec<E> = pv
                .iter()
                .zip(tv.iter())
                .map(|(&x, &t)| g[0] * (E::one() / (E::one() + (-x).exp()) - t) / n)
                .collect();
            drop((pv, tv));
            pred.accumulate_grad(&dl);
        });
    }
    Ok(out)
}
