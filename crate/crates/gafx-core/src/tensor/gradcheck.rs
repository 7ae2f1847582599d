//! Central finite-difference gradient checking.
//!
//! Every differentiable op gets a [`CheckCase`]: a seeded input generator
//! plus a forward closure producing a scalar loss. The harness compares the
//! tape's analytic gradients against `(f(x+h) - f(x-h)) / 2h` coordinate by
//! coordinate and reports the worst relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ops, Dtype, Element, Tape, Tensor};

/// One input tensor of a check case.
pub struct TensorSpec<E> {
    pub shape: Vec<usize>,
    pub values: Vec<E>,
    /// Whether the harness perturbs it (parameters) or treats it as a
    /// constant (labels, targets).
    pub differentiable: bool,
}

impl<E> TensorSpec<E> {
    pub fn param(shape: Vec<usize>, values: Vec<E>) -> Self {
        TensorSpec {
            shape,
            values,
            differentiable: true,
        }
    }

    pub fn constant(shape: Vec<usize>, values: Vec<E>) -> Self {
        TensorSpec {
            shape,
            values,
            differentiable: false,
        }
    }
}

type MakeFn<E> = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<TensorSpec<E>>>;
type ForwardFn<E> = Box<dyn Fn(&Tape<E>, &[Tensor<E>]) -> Tensor<E>>;

/// A named gradient-check target.
pub struct CheckCase<E: Element> {
    pub name: &'static str,
    make: MakeFn<E>,
    forward: ForwardFn<E>,
    /// Per-dtype tolerance override (f32, f64); `None` uses the defaults.
    pub tol_override: Option<(f64, f64)>,
}

impl<E: Element> CheckCase<E> {
    pub fn new(
        name: &'static str,
        make: impl Fn(&mut ChaCha8Rng) -> Vec<TensorSpec<E>> + 'static,
        forward: impl Fn(&Tape<E>, &[Tensor<E>]) -> Tensor<E> + 'static,
    ) -> Self {
        CheckCase {
            name,
            make: Box::new(make),
            forward: Box::new(forward),
            tol_override: None,
        }
    }

    pub fn with_tol(mut self, f32_tol: f64, f64_tol: f64) -> Self {
        self.tol_override = Some((f32_tol, f64_tol));
        self
    }

    pub fn tolerance(&self) -> f64 {
        match (E::DTYPE, self.tol_override) {
            (Dtype::F32, Some((t, _))) => t,
            (Dtype::F64, Some((_, t))) => t,
            (Dtype::F32, None) => 1e-3,
            (Dtype::F64, None) => 1e-6,
        }
    }
}

/// Result of checking one case across several seeds.
#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: &'static str,
    pub seeds: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl std::fmt::Display for CaseReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<22} max rel err {:.3e} (tol {:.0e}, {} seeds)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance,
            self.seeds
        )
    }
}

fn step_size<E: Element>() -> f64 {
    match E::DTYPE {
        Dtype::F32 => 1e-2,
        Dtype::F64 => 1e-5,
    }
}

fn eval_at<E: Element>(case: &CheckCase<E>, specs: &[TensorSpec<E>]) -> E {
    let tape = Tape::inference();
    let tensors: Vec<Tensor<E>> = specs
        .iter()
        .map(|s| Tensor::new(s.values.clone(), &s.shape).expect("spec shape"))
        .collect();
    (case.forward)(&tape, &tensors).item()
}

/// Runs `case` for seeds `base_seed..base_seed+seeds` and returns the worst
/// relative error `|analytic - fd| / max(1, |analytic|, |fd|)`.
pub fn run_case<E: Element>(case: &CheckCase<E>, seeds: usize, base_seed: u64) -> CaseReport {
    let h = step_size::<E>();
    let mut max_rel = 0.0f64;
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s as u64));
        let mut specs = (case.make)(&mut rng);
        let tensors: Vec<Tensor<E>> = specs
            .iter()
            .map(|sp| {
                if sp.differentiable {
                    Tensor::param(sp.values.clone(), &sp.shape).expect("spec shape")
                } else {
                    Tensor::new(sp.values.clone(), &sp.shape).expect("spec shape")
                }
            })
            .collect();
        let tape = Tape::new();
        let loss = (case.forward)(&tape, &tensors);
        tape.backward(&loss).expect("gradcheck backward");
        for (pi, tensor) in tensors.iter().enumerate() {
            if !specs[pi].differentiable {
                continue;
            }
            let analytic = tensor
                .grad()
                .unwrap_or_else(|| vec![E::zero(); tensor.numel()]);
            for i in 0..tensor.numel() {
                let orig = specs[pi].values[i];
                specs[pi].values[i] = orig + E::lit(h);
                let plus = eval_at(case, &specs).as_f64();
                specs[pi].values[i] = orig - E::lit(h);
                let minus = eval_at(case, &specs).as_f64();
                specs[pi].values[i] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let a = analytic[i].as_f64();
                let rel = (a - fd).abs() / 1.0f64.max(a.abs()).max(fd.abs());
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    CaseReport {
        name: case.name,
        seeds,
        max_rel_err: max_rel,
        tolerance: case.tolerance(),
    }
}

/// Fixed asymmetric weights folding any output into a scalar loss.
pub fn spread_loss<E: Element>(tape: &Tape<E>, t: &Tensor<E>) -> Tensor<E> {
    let weights: Vec<E> = (0..t.numel())
        .map(|i| E::lit(0.05 * ((0.7 * i as f64 + 0.3).sin() + 1.3)))
        .collect();
    let w = Tensor::new(weights, t.shape()).expect("weights");
    let prod = ops::mul(tape, t, &w);
    ops::sum_all(tape, &prod)
}

fn vals<E: Element>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<E> {
    (0..n).map(|_| E::lit(rng.gen_range(lo..hi))).collect()
}

/// Values bounded away from zero, for kinked ops like relu.
fn vals_off_zero<E: Element>(rng: &mut ChaCha8Rng, n: usize) -> Vec<E> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.08..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            E::lit(mag * sign)
        })
        .collect()
}

/// A shuffled coarse grid: pairwise gaps stay much larger than the FD step,
/// so pooling argmaxes cannot flip under perturbation.
fn vals_spread_grid<E: Element>(rng: &mut ChaCha8Rng, n: usize) -> Vec<E> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx.into_iter().map(|i| E::lit(i as f64 * 0.08)).collect()
}

/// Gradient-check cases for every differentiable op in this module tree.
pub fn op_suite<E: Element>() -> Vec<CheckCase<E>> {
    let mut cases = Vec::new();

    cases.push(
        CheckCase::new(
            "matmul",
            |rng| {
                vec![
                    TensorSpec::param(vec![5, 7], vals(rng, 35, -1.0, 1.0)),
                    TensorSpec::param(vec![7, 3], vals(rng, 21, -1.0, 1.0)),
                ]
            },
            |tape, t| {
                let y = ops::matmul(tape, &t[0], &t[1]).unwrap();
                spread_loss(tape, &y)
            },
        )
        .with_tol(1e-4, 1e-7),
    );

    cases.push(CheckCase::new(
        "matmul_nt",
        |rng| {
            vec![
                TensorSpec::param(vec![4, 6], vals(rng, 24, -1.0, 1.0)),
                TensorSpec::param(vec![3, 6], vals(rng, 18, -1.0, 1.0)),
            ]
        },
        |tape, t| {
            let y = ops::matmul_nt(tape, &t[0], &t[1]).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "conv2d",
        |rng| {
            vec![
                TensorSpec::param(vec![2, 5, 6], vals(rng, 60, -1.0, 1.0)),
                TensorSpec::param(vec![3, 2, 3, 3], vals(rng, 54, -0.7, 0.7)),
            ]
        },
        |tape, t| {
            let y = ops::conv2d(tape, &t[0], &t[1], (1, 2), (1, 1)).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "conv1d",
        |rng| {
            vec![
                TensorSpec::param(vec![2, 12], vals(rng, 24, -1.0, 1.0)),
                TensorSpec::param(vec![3, 2, 4], vals(rng, 24, -0.7, 0.7)),
            ]
        },
        |tape, t| {
            let y = ops::conv1d(tape, &t[0], &t[1], 2, 1).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "conv_transpose2d",
        |rng| {
            vec![
                TensorSpec::param(vec![2, 3, 4], vals(rng, 24, -1.0, 1.0)),
                TensorSpec::param(vec![2, 3, 2, 4], vals(rng, 48, -0.7, 0.7)),
            ]
        },
        |tape, t| {
            let y = ops::conv_transpose2d(tape, &t[0], &t[1], (2, 2), (0, 1)).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "conv_transpose1d",
        |rng| {
            vec![
                TensorSpec::param(vec![3, 5], vals(rng, 15, -1.0, 1.0)),
                TensorSpec::param(vec![3, 2, 4], vals(rng, 24, -0.7, 0.7)),
            ]
        },
        |tape, t| {
            let y = ops::conv_transpose1d(tape, &t[0], &t[1], 2, 1).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "max_pool2d",
        |rng| vec![TensorSpec::param(vec![1, 6, 6], vals_spread_grid(rng, 36))],
        |tape, t| {
            let y = ops::max_pool2d(tape, &t[0], (3, 3), (2, 2), (1, 1)).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "relu",
        |rng| vec![TensorSpec::param(vec![4, 5], vals_off_zero(rng, 20))],
        |tape, t| {
            let y = ops::relu(tape, &t[0]);
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "gelu",
        |rng| vec![TensorSpec::param(vec![4, 5], vals(rng, 20, -2.0, 2.0))],
        |tape, t| {
            let y = ops::gelu(tape, &t[0]);
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "sigmoid",
        |rng| vec![TensorSpec::param(vec![4, 5], vals(rng, 20, -2.0, 2.0))],
        |tape, t| {
            let y = ops::sigmoid(tape, &t[0]);
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "tanh",
        |rng| vec![TensorSpec::param(vec![4, 5], vals(rng, 20, -2.0, 2.0))],
        |tape, t| {
            let y = ops::tanh(tape, &t[0]);
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "glu",
        |rng| vec![TensorSpec::param(vec![4, 5], vals(rng, 20, -1.5, 1.5))],
        |tape, t| {
            let y = ops::glu(tape, &t[0]).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "mul_add_sub",
        |rng| {
            vec![
                TensorSpec::param(vec![3, 4], vals(rng, 12, -1.0, 1.0)),
                TensorSpec::param(vec![3, 4], vals(rng, 12, -1.0, 1.0)),
            ]
        },
        |tape, t| {
            let p = ops::mul(tape, &t[0], &t[1]);
            let q = ops::add(tape, &p, &t[0]);
            let r = ops::sub(tape, &q, &t[1]);
            spread_loss(tape, &r)
        },
    ));

    cases.push(CheckCase::new(
        "layer_norm",
        |rng| {
            vec![
                TensorSpec::param(vec![2, 6], vals(rng, 12, -1.5, 1.5)),
                TensorSpec::param(vec![6], vals(rng, 6, 0.5, 1.5)),
                TensorSpec::param(vec![6], vals(rng, 6, -0.5, 0.5)),
            ]
        },
        |tape, t| {
            let y = ops::layer_norm(tape, &t[0], &t[1], &t[2], E::lit(1e-5)).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "batch_norm_train",
        |rng| {
            vec![
                TensorSpec::param(vec![3, 10], vals(rng, 30, -1.5, 1.5)),
                TensorSpec::param(vec![3], vals(rng, 3, 0.5, 1.5)),
                TensorSpec::param(vec![3], vals(rng, 3, -0.5, 0.5)),
            ]
        },
        |tape, t| {
            let zeros = vec![E::zero(); 3];
            let ones = vec![E::one(); 3];
            let y = ops::batch_norm(tape, &t[0], &t[1], &t[2], (&zeros, &ones), true, E::lit(1e-5))
                .unwrap();
            spread_loss(tape, &y.out)
        },
    ));

    cases.push(CheckCase::new(
        "softmax",
        |rng| vec![TensorSpec::param(vec![3, 5], vals(rng, 15, -2.0, 2.0))],
        |tape, t| {
            let y = ops::softmax_last(tape, &t[0]).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "standardize",
        |rng| vec![TensorSpec::param(vec![24], vals(rng, 24, -2.0, 2.0))],
        |tape, t| {
            let y = ops::standardize(tape, &t[0]);
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "softmax_cross_entropy",
        |rng| {
            let labels: Vec<E> = (0..4).map(|_| E::lit(rng.gen_range(0..6) as f64)).collect();
            vec![
                TensorSpec::param(vec![4, 6], vals(rng, 24, -2.0, 2.0)),
                TensorSpec::constant(vec![4], labels),
            ]
        },
        |tape, t| {
            let labels: Vec<usize> = t[1].to_vec().iter().map(|v| v.as_f64() as usize).collect();
            ops::softmax_cross_entropy(tape, &t[0], &labels).unwrap()
        },
    ));

    cases.push(CheckCase::new(
        "bce_with_logits",
        |rng| {
            vec![
                TensorSpec::param(vec![3, 5], vals(rng, 15, -2.0, 2.0)),
                TensorSpec::constant(vec![3, 5], vals(rng, 15, 0.0, 1.0)),
            ]
        },
        |tape, t| ops::bce_with_logits(tape, &t[0], &t[1]).unwrap(),
    ));

    cases.push(CheckCase::new(
        "reductions",
        |rng| vec![TensorSpec::param(vec![3, 4, 2], vals(rng, 24, -1.0, 1.0))],
        |tape, t| {
            let m = ops::mean_axis(tape, &t[0], 1).unwrap();
            let s = ops::sum_all(tape, &m);
            let a = ops::mean_all(tape, &t[0]);
            let y = ops::add(tape, &s, &a);
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "shape_ops",
        |rng| vec![TensorSpec::param(vec![4, 6], vals(rng, 24, -1.0, 1.0))],
        |tape, t| {
            let n = ops::narrow(tape, &t[0], 0, 1, 2).unwrap();
            let p = ops::pad_dim(tape, &n, 1, 1, 2).unwrap();
            let tr = ops::transpose2d(tape, &p).unwrap();
            let r = ops::reshape(tape, &tr, &[2, 9]).unwrap();
            let c = ops::concat(tape, &[&r, &r], 0).unwrap();
            spread_loss(tape, &c)
        },
    ));

    cases.push(CheckCase::new(
        "extract_patches",
        |rng| vec![TensorSpec::param(vec![4, 8], vals(rng, 32, -1.0, 1.0))],
        |tape, t| {
            let p = ops::extract_patches(tape, &t[0], 2, 4).unwrap();
            spread_loss(tape, &p)
        },
    ));

    cases.push(CheckCase::new(
        "time_resample_linear",
        |rng| vec![TensorSpec::param(vec![5, 3], vals(rng, 15, -1.0, 1.0))],
        |tape, t| {
            let y = ops::time_resample_linear(tape, &t[0], 8).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases.push(CheckCase::new(
        "bias_broadcasts",
        |rng| {
            vec![
                TensorSpec::param(vec![4, 3], vals(rng, 12, -1.0, 1.0)),
                TensorSpec::param(vec![3], vals(rng, 3, -0.5, 0.5)),
                TensorSpec::param(vec![4], vals(rng, 4, -0.5, 0.5)),
            ]
        },
        |tape, t| {
            let r = ops::add_row_bias(tape, &t[0], &t[1]).unwrap();
            let c = ops::add_channel_bias(tape, &r, &t[2]).unwrap();
            spread_loss(tape, &c)
        },
    ));

    cases.push(CheckCase::new(
        "stft_mag",
        |rng| vec![TensorSpec::param(vec![48], stft_safe_signal(rng, 48, 16, 8, 8))],
        |tape, t| {
            let y = ops::stft_mag(tape, &t[0], 16, 8, 8).unwrap();
            spread_loss(tape, &y)
        },
    ));

    cases
}

/// Magnitude has a kink at zero, so finite differences only make sense on
/// signals whose kept bins all carry real energy; redraw until they do.
fn stft_safe_signal<E: Element>(
    rng: &mut ChaCha8Rng,
    len: usize,
    fft: usize,
    hop: usize,
    bins: usize,
) -> Vec<E> {
    for _ in 0..500 {
        let candidate: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let (re, im, _) = super::spectral::stft_real(&candidate, fft, hop, bins);
        let min_mag = re
            .iter()
            .zip(&im)
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(f64::INFINITY, f64::min);
        if min_mag > 0.4 {
            return candidate.into_iter().map(E::lit).collect();
        }
    }
    panic!("no well-conditioned stft signal found");
}
