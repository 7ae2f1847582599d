//! Minimal reverse-mode autodiff engine.
//!
//! A [`Tensor`] is an immutable row-major n-d array (parameter data is only
//! ever rewritten by the optimizer). Ops are free functions in [`ops`] that
//! take a [`Tape`]; when the tape is recording and any input participates in
//! differentiation, the op pushes a backward step. Steps are recorded in
//! execution order — a topological order by construction — and
//! [`Tape::backward`] replays them in exact reverse order, accumulating
//! gradients into every tensor that requires them. Calling `backward` twice
//! without zeroing leaf gradients accumulates exactly twice the gradient.
//!
//! A tape is single-owner and must not be shared across threads; concurrent
//! graph executions need disjoint tapes.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod adam;
pub mod conv;
pub mod elementwise;
pub mod gradcheck;
pub mod init;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod ops;
pub mod shape_ops;
pub mod spectral;

pub use adam::{Adam, AdamConfig};

/// Element dtype tag, used by the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

/// Scalar types the engine computes in. f32 is the pipeline default; f64 is
/// used by gradient-check builds.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: Dtype;

    /// Shorthand for converting an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite or representable")
    }
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
}

/// Errors surfaced by tensor construction and ops.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dimension error: {0}")]
    Dim(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite value surfaced in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

struct Inner<E: Element> {
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
}

/// Shared handle to an n-dimensional array, optionally tracked for gradients.
pub struct Tensor<E: Element> {
    inner: Rc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<E: Element> Tensor<E> {
    fn build(data: Vec<E>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
            }),
        }
    }

    /// New constant tensor; `data.len()` must equal the shape product.
    pub fn new(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(TensorError::Dim(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Dim(format!("zero extent in shape {shape:?}")));
        }
        Ok(Self::build(data, shape.to_vec(), false))
    }

    /// New trainable parameter.
    pub fn param(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape: t.inner.shape.clone(),
                data: RefCell::new(t.to_vec()),
                grad: RefCell::new(None),
                requires_grad: true,
            }),
        })
    }

    pub fn scalar(v: E) -> Self {
        Self::build(vec![v], vec![1], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![E::zero(); shape.iter().product()], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        Self::build(vec![v; shape.iter().product()], shape.to_vec(), false)
    }

    /// Op-output constructor; shape/data agreement is the caller's invariant.
    pub(crate) fn from_op(data: Vec<E>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Self::build(data, shape, requires_grad)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow of the underlying values.
    pub fn values(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    /// Replaces the values in place. Only the optimizer (and tests) should
    /// call this; shapes must match.
    pub fn set_data(&self, data: Vec<E>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::Dim(format!(
                "set_data length {} for shape {:?}",
                data.len(),
                self.shape()
            )));
        }
        *self.inner.data.borrow_mut() = data;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        if !self.inner.requires_grad {
            return;
        }
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a = *a + v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Copy that does not participate in differentiation.
    pub fn detach(&self) -> Tensor<E> {
        Self::build(self.to_vec(), self.inner.shape.clone(), false)
    }

    pub fn ptr_eq(&self, other: &Tensor<E>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Errors with `context` if any value is NaN or infinite.
    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.inner.data.borrow().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite(context.to_string()))
        }
    }
}

struct Step<E: Element> {
    out: Tensor<E>,
    back: Box<dyn Fn(&[E])>,
}

/// Ordered record of performed ops. Creation order is a topological order:
/// every op's inputs were produced before it.
pub struct Tape<E: Element> {
    steps: RefCell<Vec<Step<E>>>,
    enabled: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    /// Recording tape for training/gradient work.
    pub fn new() -> Self {
        Tape {
            steps: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    /// Non-recording tape: ops run as pure functions and intermediates are
    /// freed as they go out of scope.
    pub fn inference() -> Self {
        Tape {
            steps: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    pub fn recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether an op over `inputs` must record a backward step.
    pub(crate) fn wants_grad(&self, inputs: &[&Tensor<E>]) -> bool {
        self.enabled && inputs.iter().any(|t| t.requires_grad())
    }

    pub(crate) fn record(&self, out: &Tensor<E>, back: impl Fn(&[E]) + 'static) {
        debug_assert!(self.enabled);
        self.steps.borrow_mut().push(Step {
            out: out.clone(),
            back: Box::new(back),
        });
    }

    /// Runs reverse-mode accumulation from a scalar `loss`.
    ///
    /// Intermediate gradients are cleared first, so repeated calls on the
    /// same tape accumulate exactly once more into every leaf.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::Dim(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.item().is_finite() {
            return Err(TensorError::NonFinite("loss".to_string()));
        }
        let steps = self.steps.borrow();
        for s in steps.iter() {
            s.out.zero_grad();
        }
        // Seed. The loss may be a leaf (constant graph); nothing to do then.
        {
            let mut slot = loss.inner.grad.borrow_mut();
            *slot = Some(vec![E::one()]);
        }
        for s in steps.iter().rev() {
            let grad = s.out.inner.grad.borrow();
            if let Some(g) = grad.as_ref() {
                (s.back)(g);
            }
        }
        Ok(())
    }
}
