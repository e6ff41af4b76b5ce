//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit floating point and single-threaded within one
//! training session; determinism is by construction. Tensors are
//! reference-counted handles so parameters can live across many graphs
//! while gradients accumulate in place.

mod graph;
mod optim;

pub use graph::{BackwardOp, Graph};
pub use optim::{Sgd, SgdConfig};

use std::cell::{Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::error::Error;

/// Dense n-dimensional tensor with an optional gradient slot.
///
/// Cloning a `Tensor` clones the handle, not the storage; two clones see
/// the same values and gradient.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorData>>,
}

pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Same length as `values` when present.
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    fn new(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let grad = requires_grad.then(|| vec![0.0; values.len()]);
        Tensor {
            inner: Rc::new(RefCell::new(TensorData { shape, values, grad, requires_grad })),
        }
    }

    /// Trainable tensor; gradient slot allocated up front.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self::new(shape, values, true)
    }

    /// Non-trainable tensor (inputs, labels-as-data, constants).
    pub fn input(shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self::new(shape, values, false)
    }

    pub fn scalar_param(value: f64) -> Self {
        Self::param(vec![1], vec![value])
    }

    pub(crate) fn intermediate(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Self {
        Self::new(shape, values, requires_grad)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn data(&self) -> Ref<'_, TensorData> {
        self.inner.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, TensorData> {
        self.inner.borrow_mut()
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn item(&self) -> f64 {
        let d = self.inner.borrow();
        debug_assert_eq!(d.values.len(), 1, "item() on non-scalar tensor");
        d.values[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn set_values(&self, values: Vec<f64>) {
        let mut d = self.inner.borrow_mut();
        debug_assert_eq!(d.values.len(), values.len());
        d.values = values;
    }

    /// Accumulate (sum) a contribution into the gradient slot.
    pub fn accumulate_grad(&self, delta: &[f64]) {
        let mut d = self.inner.borrow_mut();
        let grad = d.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        debug_assert_eq!(grad.len(), delta.len());
        for (g, &x) in grad.iter_mut().zip(delta) {
            *g += x;
        }
    }

    pub fn zero_grad(&self) {
        let mut d = self.inner.borrow_mut();
        if let Some(g) = d.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Same underlying storage.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &d.shape)
            .field("requires_grad", &d.requires_grad)
            .finish()
    }
}

pub(crate) fn shape_error(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// One pass/fail digest of all parameter bit patterns; used to verify
/// parameter immutability between the passes of an atomic update.
pub fn param_digest(params: &[Tensor]) -> u64 {
    // FNV-1a over the raw f64 bits, order-sensitive.
    let mut h: u64 = 0xcbf29ce484222325;
    for p in params {
        for &v in p.data().values.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}
