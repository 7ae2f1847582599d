//! Adam optimizer with bias correction.

use super::{Element, Result, Tensor, TensorError};

/// Hyperparameters. The paper fixes only the learning rate; betas and eps
/// are the conventional defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot<E> {
    first: Vec<E>,
    second: Vec<E>,
}

/// Optimizer state: per-parameter first/second moments plus the step count,
/// which increases by exactly one per [`Adam::step`].
pub struct Adam<E: Element> {
    params: Vec<Tensor<E>>,
    slots: Vec<Slot<E>>,
    cfg: AdamConfig,
    step_count: u64,
}

impl<E: Element> Adam<E> {
    pub fn new(params: Vec<Tensor<E>>, cfg: AdamConfig) -> Self {
        let slots = params
            .iter()
            .map(|p| Slot {
                first: vec![E::zero(); p.numel()],
                second: vec![E::zero(); p.numel()],
            })
            .collect();
        Adam {
            params,
            slots,
            cfg,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn params(&self) -> &[Tensor<E>] {
        &self.params
    }

    /// Applies one bias-corrected update from the gradients currently
    /// attached to the parameters (absent gradients count as zero).
    pub fn step(&mut self, lr: f64) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = E::lit(1.0 / (1.0 - b1.powf(t)));
        let bias2 = E::lit(1.0 / (1.0 - b2.powf(t)));
        let (b1, b2) = (E::lit(b1), E::lit(b2));
        let one_m_b1 = E::one() - b1;
        let one_m_b2 = E::one() - b2;
        let eps = E::lit(self.cfg.eps);
        let lr = E::lit(lr);
        for (param, slot) in self.params.iter().zip(self.slots.iter_mut()) {
            let grad = param.grad();
            let grad = match grad.as_deref() {
                Some(g) => {
                    if g.len() != param.numel() {
                        return Err(TensorError::ShapeMismatch {
                            context: "adam grad",
                            lhs: param.shape().to_vec(),
                            rhs: vec![g.len()],
                        });
                    }
                    g
                }
                None => continue, // zero gradient: moments stay at their decay of zero
            };
            let mut data = param.to_vec();
            for i in 0..data.len() {
                let g = grad[i];
                slot.first[i] = b1 * slot.first[i] + one_m_b1 * g;
                slot.second[i] = b2 * slot.second[i] + one_m_b2 * g * g;
                let m_hat = slot.first[i] * bias1;
                let v_hat = slot.second[i] * bias2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            param.set_data(data)?;
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
