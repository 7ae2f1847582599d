//! Parameterized building blocks over the tensor ops.
//!
//! A layer owns its parameter tensors and exposes `state_into`, which walks
//! the tree collecting `(name, tensor, trainable)` entries; the optimizer
//! takes the trainable subset, the checkpoint writer takes everything
//! (batch-norm running statistics ride along as non-trainable buffers).

use rand_chacha::ChaCha8Rng;

use crate::tensor::init::{kaiming_uniform, uniform_fan_in, zeros_param};
use crate::tensor::{ops, Element, Result, Tape, Tensor, TensorError};

/// `(name, tensor, trainable)` entries of a model.
pub type StateDict<E> = Vec<(String, Tensor<E>, bool)>;

/// Trainable tensors of a state dict, in collection order.
pub fn trainable<E: Element>(state: &StateDict<E>) -> Vec<Tensor<E>> {
    state
        .iter()
        .filter(|(_, _, t)| *t)
        .map(|(_, t, _)| t.clone())
        .collect()
}

/// Total element count of the trainable entries.
pub fn parameter_count<E: Element>(state: &StateDict<E>) -> usize {
    state
        .iter()
        .filter(|(_, _, t)| *t)
        .map(|(_, t, _)| t.numel())
        .sum()
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

// ---------------------------------------------------------------------------

pub struct Linear<E: Element> {
    pub weight: Tensor<E>, // [out, in]
    pub bias: Tensor<E>,   // [out]
}

impl<E: Element> Linear<E> {
    pub fn new(rng: &mut ChaCha8Rng, in_features: usize, out_features: usize) -> Self {
        Linear {
            weight: kaiming_uniform(rng, &[out_features, in_features], in_features),
            bias: zeros_param(&[out_features]),
        }
    }

    pub fn from_parts(weight: Tensor<E>, bias: Tensor<E>) -> Self {
        Linear { weight, bias }
    }

    /// `x[rows, in] -> [rows, out]`
    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = ops::matmul_nt(tape, x, &self.weight)?;
        ops::add_row_bias(tape, &y, &self.bias)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "weight"), self.weight.clone(), true));
        out.push((join(prefix, "bias"), self.bias.clone(), true));
    }
}

// ---------------------------------------------------------------------------

pub struct Conv1dLayer<E: Element> {
    pub weight: Tensor<E>, // [out, in, k]
    pub bias: Tensor<E>,   // [out]
    pub stride: usize,
    pub pad: usize,
}

impl<E: Element> Conv1dLayer<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv1dLayer {
            weight: kaiming_uniform(rng, &[out_ch, in_ch, kernel], in_ch * kernel),
            bias: zeros_param(&[out_ch]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = ops::conv1d(tape, x, &self.weight, self.stride, self.pad)?;
        ops::add_channel_bias(tape, &y, &self.bias)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "weight"), self.weight.clone(), true));
        out.push((join(prefix, "bias"), self.bias.clone(), true));
    }
}

pub struct Conv2dLayer<E: Element> {
    pub weight: Tensor<E>, // [out, in, kh, kw]
    pub bias: Tensor<E>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl<E: Element> Conv2dLayer<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        Conv2dLayer {
            weight: kaiming_uniform(
                rng,
                &[out_ch, in_ch, kernel.0, kernel.1],
                in_ch * kernel.0 * kernel.1,
            ),
            bias: zeros_param(&[out_ch]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = ops::conv2d(tape, x, &self.weight, self.stride, self.pad)?;
        ops::add_channel_bias(tape, &y, &self.bias)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "weight"), self.weight.clone(), true));
        out.push((join(prefix, "bias"), self.bias.clone(), true));
    }
}

pub struct ConvTranspose1dLayer<E: Element> {
    pub weight: Tensor<E>, // [in, out, k]
    pub bias: Tensor<E>,
    pub stride: usize,
    pub pad: usize,
}

impl<E: Element> ConvTranspose1dLayer<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvTranspose1dLayer {
            weight: kaiming_uniform(rng, &[in_ch, out_ch, kernel], in_ch * kernel),
            bias: zeros_param(&[out_ch]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = ops::conv_transpose1d(tape, x, &self.weight, self.stride, self.pad)?;
        ops::add_channel_bias(tape, &y, &self.bias)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "weight"), self.weight.clone(), true));
        out.push((join(prefix, "bias"), self.bias.clone(), true));
    }
}

pub struct ConvTranspose2dLayer<E: Element> {
    pub weight: Tensor<E>, // [in, out, kh, kw]
    pub bias: Tensor<E>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl<E: Element> ConvTranspose2dLayer<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        ConvTranspose2dLayer {
            weight: kaiming_uniform(
                rng,
                &[in_ch, out_ch, kernel.0, kernel.1],
                in_ch * kernel.0 * kernel.1,
            ),
            bias: zeros_param(&[out_ch]),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = ops::conv_transpose2d(tape, x, &self.weight, self.stride, self.pad)?;
        ops::add_channel_bias(tape, &y, &self.bias)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "weight"), self.weight.clone(), true));
        out.push((join(prefix, "bias"), self.bias.clone(), true));
    }
}

// ---------------------------------------------------------------------------

pub struct LayerNorm<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub eps: E,
}

impl<E: Element> LayerNorm<E> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::param(vec![E::one(); dim], &[dim]).expect("layer norm gamma"),
            beta: zeros_param(&[dim]),
            eps: E::lit(1e-5),
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        ops::layer_norm(tape, x, &self.gamma, &self.beta, self.eps)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "gamma"), self.gamma.clone(), true));
        out.push((join(prefix, "beta"), self.beta.clone(), true));
    }
}

/// Per-channel batch norm with running statistics kept as buffers.
pub struct BatchNorm<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub momentum: E,
    pub eps: E,
}

impl<E: Element> BatchNorm<E> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::param(vec![E::one(); channels], &[channels]).expect("bn gamma"),
            beta: zeros_param(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], E::one()),
            momentum: E::lit(0.1),
            eps: E::lit(1e-5),
        }
    }

    /// Training mode normalizes by batch statistics and folds them into the
    /// running buffers; eval mode uses the buffers.
    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let mean = self.running_mean.to_vec();
        let var = self.running_var.to_vec();
        let r = ops::batch_norm(tape, x, &self.gamma, &self.beta, (&mean, &var), training, self.eps)?;
        if let Some((bm, bv)) = r.batch_stats {
            let m = self.momentum;
            let keep = E::one() - m;
            let new_mean: Vec<E> = mean.iter().zip(&bm).map(|(&r, &b)| keep * r + m * b).collect();
            let new_var: Vec<E> = var.iter().zip(&bv).map(|(&r, &b)| keep * r + m * b).collect();
            self.running_mean.set_data(new_mean)?;
            self.running_var.set_data(new_var)?;
        }
        Ok(r.out)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "gamma"), self.gamma.clone(), true));
        out.push((join(prefix, "beta"), self.beta.clone(), true));
        out.push((join(prefix, "running_mean"), self.running_mean.clone(), false));
        out.push((join(prefix, "running_var"), self.running_var.clone(), false));
    }
}

// ---------------------------------------------------------------------------

/// One LSTM cell; gate order is (input, forget, cell, output).
pub struct LstmCell<E: Element> {
    pub w_input: Tensor<E>,  // [4H, In]
    pub w_hidden: Tensor<E>, // [4H, H]
    pub bias: Tensor<E>,     // [4H]
}

impl<E: Element> LstmCell<E> {
    pub fn new(rng: &mut ChaCha8Rng, input_dim: usize, hidden: usize) -> Self {
        LstmCell {
            w_input: uniform_fan_in(rng, &[4 * hidden, input_dim], input_dim),
            w_hidden: uniform_fan_in(rng, &[4 * hidden, hidden], hidden),
            bias: zeros_param(&[4 * hidden]),
        }
    }

    pub fn from_parts(w_input: Tensor<E>, w_hidden: Tensor<E>, bias: Tensor<E>) -> Self {
        LstmCell {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    /// One step: `x[1, In], h[1, H], c[1, H] -> (h', c')`.
    pub fn step(
        &self,
        tape: &Tape<E>,
        x: &Tensor<E>,
        h: &Tensor<E>,
        c: &Tensor<E>,
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        let hidden = self.hidden();
        let gx = ops::matmul_nt(tape, x, &self.w_input)?;
        let gh = ops::matmul_nt(tape, h, &self.w_hidden)?;
        let pre = ops::add(tape, &gx, &gh);
        let pre = ops::add_row_bias(tape, &pre, &self.bias)?;
        let input_gate = ops::sigmoid(tape, &ops::narrow(tape, &pre, 1, 0, hidden)?);
        let forget_gate = ops::sigmoid(tape, &ops::narrow(tape, &pre, 1, hidden, hidden)?);
        let cell_cand = ops::tanh(tape, &ops::narrow(tape, &pre, 1, 2 * hidden, hidden)?);
        let output_gate = ops::sigmoid(tape, &ops::narrow(tape, &pre, 1, 3 * hidden, hidden)?);
        let c_next = ops::add(
            tape,
            &ops::mul(tape, &forget_gate, c),
            &ops::mul(tape, &input_gate, &cell_cand),
        );
        let h_next = ops::mul(tape, &output_gate, &ops::tanh(tape, &c_next));
        Ok((h_next, c_next))
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        out.push((join(prefix, "w_input"), self.w_input.clone(), true));
        out.push((join(prefix, "w_hidden"), self.w_hidden.clone(), true));
        out.push((join(prefix, "bias"), self.bias.clone(), true));
    }
}

/// Stacked bidirectional LSTM over `[T, C]`, projected back to `C` channels.
pub struct BiLstm<E: Element> {
    pub layers: Vec<(LstmCell<E>, LstmCell<E>)>, // (forward, backward)
    pub proj: Linear<E>,                         // [2C -> C]
}

impl<E: Element> BiLstm<E> {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, num_layers: usize) -> Self {
        let mut layers = Vec::new();
        for l in 0..num_layers {
            let input_dim = if l == 0 { dim } else { 2 * dim };
            layers.push((
                LstmCell::new(rng, input_dim, dim),
                LstmCell::new(rng, input_dim, dim),
            ));
        }
        BiLstm {
            layers,
            proj: Linear::new(rng, 2 * dim, dim),
        }
    }

    pub fn from_parts(layers: Vec<(LstmCell<E>, LstmCell<E>)>, proj: Linear<E>) -> Self {
        BiLstm { layers, proj }
    }

    fn run_direction(
        &self,
        tape: &Tape<E>,
        cell: &LstmCell<E>,
        rows: &[Tensor<E>],
        reversed: bool,
    ) -> Result<Vec<Tensor<E>>> {
        let hidden = cell.hidden();
        let mut h = Tensor::zeros(&[1, hidden]);
        let mut c = Tensor::zeros(&[1, hidden]);
        let mut out = vec![None; rows.len()];
        let order: Box<dyn Iterator<Item = usize>> = if reversed {
            Box::new((0..rows.len()).rev())
        } else {
            Box::new(0..rows.len())
        };
        for t in order {
            let (nh, nc) = cell.step(tape, &rows[t], &h, &c)?;
            out[t] = Some(nh.clone());
            h = nh;
            c = nc;
        }
        Ok(out.into_iter().map(|o| o.expect("all steps visited")).collect())
    }

    /// `x[T, C] -> [T, C]`; the sequence must be nonempty.
    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let t = x.shape()[0];
        if t == 0 {
            return Err(TensorError::Dim("bilstm over an empty sequence".into()));
        }
        let mut rows: Vec<Tensor<E>> = (0..t)
            .map(|r| ops::narrow(tape, x, 0, r, 1))
            .collect::<Result<_>>()?;
        for (fwd, bwd) in &self.layers {
            let ahead = self.run_direction(tape, fwd, &rows, false)?;
            let behind = self.run_direction(tape, bwd, &rows, true)?;
            rows = ahead
                .iter()
                .zip(&behind)
                .map(|(a, b)| ops::concat(tape, &[a, b], 1))
                .collect::<Result<_>>()?;
        }
        let refs: Vec<&Tensor<E>> = rows.iter().collect();
        let stacked = ops::concat(tape, &refs, 0)?;
        self.proj.forward(tape, &stacked)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            fwd.state_into(&join(prefix, &format!("l{l}.fwd")), out);
            bwd.state_into(&join(prefix, &format!("l{l}.bwd")), out);
        }
        self.proj.state_into(&join(prefix, "proj"), out);
    }
}

// ---------------------------------------------------------------------------

pub struct MultiHeadAttention<E: Element> {
    pub query: Linear<E>,
    pub key: Linear<E>,
    pub value: Linear<E>,
    pub output: Linear<E>,
    pub heads: usize,
}

impl<E: Element> MultiHeadAttention<E> {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(TensorError::Config(format!(
                "attention dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(rng, dim, dim),
            key: Linear::new(rng, dim, dim),
            value: Linear::new(rng, dim, dim),
            output: Linear::new(rng, dim, dim),
            heads,
        })
    }

    pub fn from_parts(
        query: Linear<E>,
        key: Linear<E>,
        value: Linear<E>,
        output: Linear<E>,
        heads: usize,
    ) -> Self {
        MultiHeadAttention {
            query,
            key,
            value,
            output,
            heads,
        }
    }

    /// `x[T, D] -> ([T, D], per-head attention [T, T])`.
    pub fn forward_with_attn(
        &self,
        tape: &Tape<E>,
        x: &Tensor<E>,
    ) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        let dim = x.shape()[1];
        let head_dim = dim / self.heads;
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, x)?;
        let v = self.value.forward(tape, x)?;
        let inv_sqrt = E::lit(1.0 / (head_dim as f64).sqrt());
        let mut heads_out = Vec::with_capacity(self.heads);
        let mut attns = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ops::narrow(tape, &q, 1, h * head_dim, head_dim)?;
            let kh = ops::narrow(tape, &k, 1, h * head_dim, head_dim)?;
            let vh = ops::narrow(tape, &v, 1, h * head_dim, head_dim)?;
            let scores = ops::scale(tape, &ops::matmul_nt(tape, &qh, &kh)?, inv_sqrt);
            let attn = ops::softmax_last(tape, &scores)?;
            heads_out.push(ops::matmul(tape, &attn, &vh)?);
            attns.push(attn);
        }
        let refs: Vec<&Tensor<E>> = heads_out.iter().collect();
        let merged = ops::concat(tape, &refs, 1)?;
        Ok((self.output.forward(tape, &merged)?, attns))
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_with_attn(tape, x)?.0)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        self.query.state_into(&join(prefix, "q"), out);
        self.key.state_into(&join(prefix, "k"), out);
        self.value.state_into(&join(prefix, "v"), out);
        self.output.state_into(&join(prefix, "o"), out);
    }
}

pub struct Mlp<E: Element> {
    pub expand: Linear<E>,
    pub contract: Linear<E>,
}

impl<E: Element> Mlp<E> {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, hidden: usize) -> Self {
        Mlp {
            expand: Linear::new(rng, dim, hidden),
            contract: Linear::new(rng, hidden, dim),
        }
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let h = self.expand.forward(tape, x)?;
        let h = ops::gelu(tape, &h);
        self.contract.forward(tape, &h)
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        self.expand.state_into(&join(prefix, "expand"), out);
        self.contract.state_into(&join(prefix, "contract"), out);
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
pub struct TransformerBlock<E: Element> {
    pub norm_attn: LayerNorm<E>,
    pub attn: MultiHeadAttention<E>,
    pub norm_mlp: LayerNorm<E>,
    pub mlp: Mlp<E>,
}

impl<E: Element> TransformerBlock<E> {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(TransformerBlock {
            norm_attn: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, heads)?,
            norm_mlp: LayerNorm::new(dim),
            mlp: Mlp::new(rng, dim, dim * mlp_ratio),
        })
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.forward_with_attn(tape, x)?.0)
    }

    pub fn forward_with_attn(
        &self,
        tape: &Tape<E>,
        x: &Tensor<E>,
    ) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        let (a, attns) = self.attn.forward_with_attn(tape, &self.norm_attn.forward(tape, x)?)?;
        let x = ops::add(tape, x, &a);
        let m = self.mlp.forward(tape, &self.norm_mlp.forward(tape, &x)?)?;
        Ok((ops::add(tape, &x, &m), attns))
    }

    pub fn state_into(&self, prefix: &str, out: &mut StateDict<E>) {
        self.norm_attn.state_into(&join(prefix, "norm_attn"), out);
        self.attn.state_into(&join(prefix, "attn"), out);
        self.norm_mlp.state_into(&join(prefix, "norm_mlp"), out);
        self.mlp.state_into(&join(prefix, "mlp"), out);
    }
}

/// Fixed sinusoidal position table `[len, dim]`.
pub fn sinusoidal_positions<E: Element>(len: usize, dim: usize) -> Tensor<E> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let rate = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            let angle = pos as f64 * rate;
            data.push(E::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(data, &[len, dim]).expect("position table")
}

/// Gradient-check cases for the composed layers.
pub fn layer_suite<E: Element>() -> Vec<crate::tensor::gradcheck::CheckCase<E>> {
    use crate::tensor::gradcheck::{spread_loss, CheckCase, TensorSpec};
    use rand::Rng;

    fn vals<E: Element>(rng: &mut ChaCha8Rng, n: usize, b: f64) -> Vec<E> {
        (0..n).map(|_| E::lit(rng.gen_range(-b..b))).collect()
    }

    let mut cases = Vec::new();

    // Length-3, 4-channel bidirectional LSTM, checked end to end.
    cases.push(CheckCase::new(
        "bilstm",
        |rng| {
            let c = 4;
            let mut specs = Vec::new();
            for _ in 0..2 {
                specs.push(TensorSpec::param(vec![4 * c, c], vals(rng, 16 * c, 0.5)));
                specs.push(TensorSpec::param(vec![4 * c, c], vals(rng, 16 * c, 0.5)));
                specs.push(TensorSpec::param(vec![4 * c], vals(rng, 4 * c, 0.2)));
            }
            specs.push(TensorSpec::param(vec![c, 2 * c], vals(rng, 2 * c * c, 0.5)));
            specs.push(TensorSpec::param(vec![c], vals(rng, c, 0.2)));
            specs.push(TensorSpec::param(vec![3, c], vals(rng, 3 * c, 1.0)));
            specs
        },
        |tape, t| {
            let fwd = LstmCell::from_parts(t[0].clone(), t[1].clone(), t[2].clone());
            let bwd = LstmCell::from_parts(t[3].clone(), t[4].clone(), t[5].clone());
            let proj = Linear::from_parts(t[6].clone(), t[7].clone());
            let bilstm = BiLstm::from_parts(vec![(fwd, bwd)], proj);
            let y = bilstm.forward(tape, &t[8]).unwrap();
            spread_loss(tape, &y)
        },
    ));

    // T=3, D=8, 2-head attention.
    cases.push(CheckCase::new(
        "multi_head_attention",
        |rng| {
            let d = 8;
            let mut specs = Vec::new();
            for _ in 0..4 {
                specs.push(TensorSpec::param(vec![d, d], vals(rng, d * d, 0.5)));
                specs.push(TensorSpec::param(vec![d], vals(rng, d, 0.2)));
            }
            specs.push(TensorSpec::param(vec![3, d], vals(rng, 3 * d, 1.0)));
            specs
        },
        |tape, t| {
            let mha = MultiHeadAttention::from_parts(
                Linear::from_parts(t[0].clone(), t[1].clone()),
                Linear::from_parts(t[2].clone(), t[3].clone()),
                Linear::from_parts(t[4].clone(), t[5].clone()),
                Linear::from_parts(t[6].clone(), t[7].clone()),
                2,
            );
            let y = mha.forward(tape, &t[8]).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases
}
