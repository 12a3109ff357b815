//! Dense 4-D tensors with reverse-mode automatic differentiation.
//!
//! Every tensor is an `(N, C, H, W)` array of `f32` in row-major order.
//! Operations record a backward closure when gradient tracking is enabled and
//! at least one input requires a gradient. Backward closures are written in
//! terms of tracked operations themselves, so [`grad`] can build a
//! differentiable gradient graph (`create_graph = true`), which is what the
//! gradient penalty of the critics needs.
//!
//! Graphs are `Rc`-based and confined to the thread that built them.

mod adam;
mod autograd;
mod conv;
mod gemm;
mod ops;
mod params;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use autograd::grad;
pub use conv::{conv2d, conv2d_transpose, fully_connected, ConvGeometry, Padding};
pub use ops::Region;
pub use params::NetworkParams;

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub const fn from_dims(d: [usize; 4]) -> Self {
        Self::new(d[0], d[1], d[2], d[3])
    }

    /// Elements per batch entry.
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

pub(crate) type BackwardFn =
    Box<dyn Fn(&Tensor, &Tensor, &[Tensor], &[bool]) -> Vec<Option<Tensor>>>;

pub(crate) struct Node {
    pub(crate) name: &'static str,
    pub(crate) inputs: Vec<Tensor>,
    /// `(grad_out, out, inputs, needs_grad) -> input grads`
    pub(crate) backward: BackwardFn,
    pub(crate) consumed: Cell<bool>,
}

struct Inner {
    id: u64,
    shape: Shape,
    data: RefCell<Rc<Vec<f32>>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

struct GradModeGuard(bool);

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

pub(crate) fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _guard = GradModeGuard(prev);
    f()
}

/// Run `f` without recording any backward closures.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

impl Tensor {
    fn build(shape: Shape, data: Rc<Vec<f32>>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    /// Constant tensor. Fails on a length mismatch or any non-finite value.
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::DataLength {
                len: data.len(),
                shape,
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("tensor data ({v})"),
            });
        }
        Ok(Self::build(shape, Rc::new(data), false, None))
    }

    /// Leaf tensor that accumulates a gradient.
    pub fn param(shape: Shape, data: Vec<f32>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::build(shape, t.data(), true, None))
    }

    pub(crate) fn from_vec(shape: Shape, data: Vec<f32>) -> Self {
        Self::build(shape, Rc::new(data), false, None)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self::from_vec(shape, vec![value; shape.numel()])
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Output of a recorded operation. Tracks the graph only when gradient
    /// mode is on and some input requires a gradient.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<f32>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        Self::from_op_rc(shape, Rc::new(data), name, inputs, backward)
    }

    pub(crate) fn from_op_rc(
        shape: Shape,
        data: Rc<Vec<f32>>,
        name: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if track {
            let node = Node {
                name,
                inputs,
                backward,
                consumed: Cell::new(false),
            };
            Self::build(shape, data, true, Some(node))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.numel()
    }

    /// Shared handle to the current values.
    pub fn data(&self) -> Rc<Vec<f32>> {
        Rc::clone(&self.0.data.borrow())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    /// Name of the operation that produced this tensor, if it was recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.name)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Replace the values of a leaf in place. Graphs built earlier keep the
    /// values they captured.
    pub(crate) fn set_data(&self, data: Vec<f32>) {
        debug_assert!(self.is_leaf());
        debug_assert_eq!(data.len(), self.numel());
        *self.0.data.borrow_mut() = Rc::new(data);
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.shape(), self.data(), false, None)
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.0.data.borrow().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: what.to_string(),
            })
        }
    }

    /// Scalar loss backward pass: accumulates `d self / d leaf` into every
    /// reachable leaf that requires a gradient, then marks the graph consumed.
    pub fn backward(&self) -> Result<()> {
        autograd::backward(self)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .finish()
    }
}
