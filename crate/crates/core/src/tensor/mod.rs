//! Dense NCHW tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable value produced either as a leaf (input data or
//! a trainable parameter) or by an operation that records its parents and a
//! backward rule. Calling [`Tensor::backward`] walks the recorded graph in
//! reverse topological order. Gradients of intermediate nodes are transient;
//! only leaves that require gradients keep them, and they accumulate
//! additively until [`Tensor::zero_grad`] is called.
//!
//! Every operation verifies that its output is finite, and the backward pass
//! verifies every gradient it produces.

mod archive;
mod conv;
pub mod gradcheck;
mod ops;
mod optim;
mod shuffle;

pub use archive::{Archive, ArchiveData, ArchiveEntry, DType, ARCHIVE_FORMAT_VERSION};
pub use conv::{conv2d, conv_output_extent, max_pool2d};
pub use ops::linear;
pub use optim::{Adam, Parameter};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::rc::Rc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element types the tensor core can compute with.
///
/// `f32` is used for training, `f64` for finite-difference validation.
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a * b + beta * c` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

fn strided_extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: DType = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= strided_extent(m, k, rsa, csa));
                assert!(b.len() >= strided_extent(k, n, rsb, csb));
                assert!(c.len() >= strided_extent(m, n, rsc, csc));
                // SAFETY: all three operands were bounds-checked against their
                // strided extents above and `c` does not alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, DType::F32, matrixmultiply::sgemm);
impl_scalar!(f64, DType::F64, matrixmultiply::dgemm);

/// Maps the gradient of an operation's output to gradients of its parents,
/// in parent order. `None` means "no contribution".
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Scalar = f32> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("op", &self.node.op)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::config(
                "tensor",
                format!(
                    "shape {:?} holds {} elements but {} were supplied",
                    shape,
                    numel(&shape),
                    data.len()
                ),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("tensor construction".into()));
        }
        Ok(Tensor {
            node: Rc::new(Node {
                op: "leaf",
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        })
    }

    /// Constant input data; never receives gradients.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf that accumulates gradients.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel(shape)], false)
            .expect("finite fill value with consistent shape")
    }

    pub fn scalar(value: T) -> Result<Self> {
        Self::leaf(Vec::new(), vec![value], false)
    }

    /// Records an operation result. Parents that do not require gradients
    /// are dropped from the graph, and so is the backward rule when none do.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        debug_assert_eq!(numel(&shape), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(op.to_string()));
        }
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Ok(Tensor {
            node: Rc::new(Node {
                op,
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.backward.is_none()
    }

    pub fn op_name(&self) -> &'static str {
        self.node.op
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::usage(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.node.data[0])
    }

    /// Same values, no graph history, no gradient tracking.
    pub fn detach(&self) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), false)
            .expect("detached copy of a valid tensor")
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    fn key(&self) -> *const Node<T> {
        Rc::as_ptr(&self.node)
    }

    /// Back-propagates from a single-element tensor with seed gradient 1.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::usage(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        self.backward_with(vec![T::one()])
    }

    pub fn backward_with(&self, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(Error::usage(format!(
                "seed gradient has {} elements, tensor has {}",
                seed.len(),
                self.numel()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        pending.insert(self.key(), seed);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            match &t.node.backward {
                Some(rule) => {
                    let parent_grads = rule(&g);
                    debug_assert_eq!(parent_grads.len(), t.node.parents.len());
                    for (parent, pg) in t.node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        if pg.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Numeric(format!("backward of {}", t.node.op)));
                        }
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a = *a + *b),
                            None => {
                                pending.insert(parent.key(), pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring gradients, parents before children.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.requires_grad() && !seen.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
