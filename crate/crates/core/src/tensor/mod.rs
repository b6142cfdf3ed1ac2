//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are row-major, double precision, and immutable once created except
//! for their gradient slot (and, for trainable parameters, in-place updates by
//! the optimizer). Every operation whose inputs require gradients records a
//! node in a per-forward-pass graph; [`Tensor::backward`] replays the graph in
//! reverse topological order and then frees it, so a second backward through
//! the same graph is an error rather than a silent accumulation.
//!
//! Elementwise broadcasting is restricted to leading axes: two shapes conform
//! when they are equal or when one is a suffix of the other, in which case the
//! smaller operand is repeated across the leading axes of the larger.

mod ops;

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::rng::Rng;

/// Errors from tensor construction and operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// A constructor received an invalid shape or init parameter.
    InvalidArgument(String),
    /// Two operands do not conform for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An axis or index is out of range for the tensor's shape.
    AxisOutOfRange { op: &'static str, axis: usize, shape: Vec<usize> },
    /// backward was called on a non-scalar tensor.
    NotScalar(Vec<usize>),
    /// backward was already run through this graph.
    GraphConsumed,
    /// A reachable leaf still holds a gradient from a previous backward.
    GradsNotCleared,
    /// An embedding lookup met an id outside the table.
    IndexOutOfRange { index: usize, bound: usize, position: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            TensorError::AxisOutOfRange { op, axis, shape } => {
                write!(f, "axis {axis} out of range in {op} for shape {shape:?}")
            }
            TensorError::NotScalar(shape) => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::GraphConsumed => {
                write!(f, "backward was already run through this graph; re-run the forward pass")
            }
            TensorError::GradsNotCleared => {
                write!(f, "a reachable parameter still holds a gradient; clear grads before backward")
            }
            TensorError::IndexOutOfRange { index, bound, position } => {
                write!(f, "index {index} out of range (bound {bound}) at position {position}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
    parents: RefCell<Vec<Tensor>>,
    backward_fn: RefCell<Option<BackwardFn>>,
    consumed: Cell<bool>,
}

/// A dense row-major f64 tensor. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.inner.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={}, data={:?}{})",
            self.inner.shape,
            self.inner.requires_grad.get(),
            preview,
            if data.len() > 8 { ", ..." } else { "" }
        )
    }
}

/// Initialization schemes for [`Tensor::create`].
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Uniform { lo: f64, hi: f64, seed: u64 },
    Normal { mean: f64, std: f64, seed: u64 },
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                requires_grad: Cell::new(requires_grad),
                grad: RefCell::new(None),
                parents: RefCell::new(Vec::new()),
                backward_fn: RefCell::new(None),
                consumed: Cell::new(false),
            }),
        }
    }

    pub(crate) fn new_node(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward_fn: BackwardFn,
    ) -> Tensor {
        let track = parents.iter().any(|p| p.requires_grad());
        let t = Tensor::from_parts(shape, data, track);
        if track {
            *t.inner.parents.borrow_mut() = parents;
            *t.inner.backward_fn.borrow_mut() = Some(backward_fn);
        }
        t
    }

    /// Create a tensor with the given shape and initialization.
    pub fn create(shape: &[usize], init: Init) -> Result<Tensor, TensorError> {
        if shape.is_empty() {
            return Err(TensorError::InvalidArgument("shape must be nonempty".into()));
        }
        if shape.contains(&0) {
            return Err(TensorError::InvalidArgument(format!(
                "shape extents must be >= 1, got {shape:?}"
            )));
        }
        let n = numel_of(shape);
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => {
                if !c.is_finite() {
                    return Err(TensorError::InvalidArgument("constant must be finite".into()));
                }
                vec![c; n]
            }
            Init::Uniform { lo, hi, seed } => {
                if lo >= hi || lo.is_nan() || hi.is_nan() {
                    return Err(TensorError::InvalidArgument(format!(
                        "uniform requires lo < hi, got [{lo}, {hi})"
                    )));
                }
                let mut rng = Rng::new(seed);
                (0..n).map(|_| rng.uniform(lo, hi)).collect()
            }
            Init::Normal { mean, std, seed } => {
                if std < 0.0 {
                    return Err(TensorError::InvalidArgument(format!(
                        "normal requires std >= 0, got {std}"
                    )));
                }
                let mut rng = Rng::new(seed);
                (0..n).map(|_| rng.normal(mean, std)).collect()
            }
        };
        Ok(Tensor::from_parts(shape.to_vec(), data, false))
    }

    /// Wrap raw values. Fails if the element count does not match the shape.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidArgument(format!("invalid shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(TensorError::InvalidArgument(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor::from_parts(shape.to_vec(), data, false))
    }

    /// Rank-0 scalar.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_parts(vec![], vec![v], false)
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor, TensorError> {
        Tensor::create(shape, Init::Zeros)
    }

    /// Mark this tensor as a trainable leaf and return it.
    pub fn requiring_grad(self) -> Tensor {
        debug_assert!(self.is_leaf(), "requires_grad is set on leaves only");
        self.inner.requires_grad.set(true);
        self
    }

    pub fn set_requires_grad(&self, value: bool) {
        debug_assert!(self.is_leaf(), "requires_grad is set on leaves only");
        self.inner.requires_grad.set(value);
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.parents.borrow().is_empty() && self.inner.backward_fn.borrow().is_none()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    /// Borrow the values. The borrow must be dropped before in-place updates.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        let data = self.inner.data.borrow();
        debug_assert_eq!(data.len(), 1, "item() on tensor with {} values", data.len());
        data[0]
    }

    /// Identity of the underlying storage; used to deduplicate parameters.
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place value update; used by the optimizer on parameter leaves.
    pub fn update_data<F: FnOnce(&mut [f64])>(&self, f: F) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// In-place gradient update (no-op when no gradient is present); used by
    /// gradient clipping.
    pub fn with_grad_mut<F: FnOnce(&mut [f64])>(&self, f: F) {
        if let Some(g) = self.inner.grad.borrow_mut().as_mut() {
            f(g);
        }
    }

    /// Detached copy of the values as a fresh constant leaf.
    pub fn detached(&self) -> Tensor {
        Tensor::from_parts(self.inner.shape.clone(), self.to_vec(), false)
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a scalar loss.
    ///
    /// After the call, every gradient-requiring tensor reachable through the
    /// graph holds `d loss / d tensor` in its grad slot and the graph is
    /// freed. Running backward a second time through the same graph is an
    /// error, as is starting a new backward while a reachable leaf still
    /// holds a gradient.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.inner.shape.clone()));
        }
        if self.inner.consumed.get() {
            return Err(TensorError::GraphConsumed);
        }

        // Iterative post-order DFS over parents.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.inner.id) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.inner.parents.borrow().iter() {
                if !visited.contains(&p.inner.id) {
                    stack.push((p.clone(), false));
                }
            }
        }

        for node in &order {
            if node.is_leaf() && node.requires_grad() && node.has_grad() {
                return Err(TensorError::GradsNotCleared);
            }
        }

        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let f = node.inner.backward_fn.borrow_mut().take();
            if let Some(f) = f {
                let grad = node
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .unwrap_or_else(|| vec![0.0; node.numel()]);
                f(&grad);
            }
            node.inner.parents.borrow_mut().clear();
            node.inner.consumed.set(true);
        }
        Ok(())
    }
}

/// Max relative error between analytic and central-difference gradients of a
/// scalar-valued function, over all coordinates of `x`.
///
/// The relative error at one coordinate is
/// `|analytic - central| / (|analytic| + |central| + 1e-12)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&Tensor) -> Result<Tensor, TensorError>,
{
    if h <= 0.0 {
        return Err(TensorError::InvalidArgument("h must be positive".into()));
    }
    let leaf = Tensor::from_vec(x.to_vec(), x.shape())?.requiring_grad();
    let y = f(&leaf)?;
    y.backward()?;
    let analytic = leaf.grad().expect("leaf participates in the graph");

    let base = x.to_vec();
    let eval = |values: Vec<f64>| -> Result<f64, TensorError> {
        let t = Tensor::from_vec(values, x.shape())?;
        Ok(f(&t)?.item())
    };
    let mut max_rel: f64 = 0.0;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let central = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - central).abs() / (a.abs() + central.abs() + 1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
