//! Dense row-major tensors and their reverse-mode differentiation machinery.
//!
//! `Tensor<T>` is a cheap-to-clone handle (shared ownership) around an
//! immutable value buffer plus an optional gradient accumulator. All compute
//! runs through [`tape::Tape`], which records executed primitives so a later
//! `backward` sweep can replay them in reverse. The scalar type is generic:
//! `f32` is the working precision, `f64` exists for finite-difference
//! gradient verification.

mod gradcheck;
pub mod kernels;
mod tape;

pub use gradcheck::{gradcheck, gradcheck_default, GradReport, REL_ERR_FLOOR};
pub use tape::Tape;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

// ── Scalar abstraction ──────────────────────────────────────────────────────

/// Element type tag used by the on-disk tensor format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn to_u8(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element type the whole stack is generic over.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + 'static
{
    const DTYPE: DType;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

// ── Shape helpers ───────────────────────────────────────────────────────────

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides (in elements) for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Combined shape for an elementwise op, aligning trailing dimensions:
/// extents must match, or a singleton extent stretches to the other side.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let ea = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let eb = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        out[i] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return Err(Error::dim(format!(
                "cannot broadcast shapes {a:?} and {b:?} (extent {ea} vs {eb})"
            )));
        };
    }
    Ok(out)
}

/// Strides for reading a tensor of `shape` as if stretched to `out_shape`
/// (stride 0 on broadcast dimensions, trailing-aligned).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let native = strides(shape);
    let nd = out_shape.len();
    let offset = nd - shape.len();
    let mut out = vec![0usize; nd];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { native[i] };
    }
    out
}

// ── Tensor handle ───────────────────────────────────────────────────────────

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    /// Set by the caller on leaves whose gradient should be retained.
    requires_grad: Cell<bool>,
    /// True if this tensor is on a differentiable path (leaf flag or produced
    /// by a recorded op). Controls whether downstream ops get recorded.
    tracked: Cell<bool>,
}

/// Shared handle to an n-dimensional row-major value.
///
/// Values are immutable through normal use; `data_mut` exists solely for the
/// optimizer and checkpoint loader, which mutate parameters between steps.
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.inner.id, self.inner.shape)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                tracked: Cell::new(false),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(vec![T::zero(); numel(shape)], shape).expect("length matches by construction")
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor::from_vec(vec![v; numel(shape)], shape).expect("length matches by construction")
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(v: T) -> Self {
        Tensor::full(&[1], v)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel(shape)).map(|i| f(i)).collect();
        Tensor::from_vec(data, shape).expect("length matches by construction")
    }

    /// Mark this tensor as a differentiation leaf; `backward` will accumulate
    /// its gradient. Returns `self` for builder-style use.
    pub fn with_grad(self) -> Self {
        self.inner.requires_grad.set(true);
        self.inner.tracked.set(true);
        self
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub(crate) fn tracked(&self) -> bool {
        self.inner.tracked.get()
    }

    pub(crate) fn mark_tracked(&self) {
        self.inner.tracked.set(true);
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutable view of the value buffer. Contract: only the optimizer and
    /// loaders may call this, and never while a tape referencing the tensor is
    /// still pending a backward pass.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "item() needs a single-element tensor, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Element at a full multi-index (convenience for tests and small code).
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.ndim(), "index rank mismatch");
        let st = strides(self.shape());
        let off: usize = index.iter().zip(&st).map(|(i, s)| i * s).sum();
        self.inner.data.borrow()[off]
    }

    /// Copy of the accumulated gradient, if any backward has reached this leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a = *a + *b;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    /// Independent deep copy that shares nothing with `self` (fresh id, no
    /// grad, not tracked).
    pub fn detached_copy(&self) -> Self {
        Tensor::from_vec(self.to_vec(), self.shape()).expect("same length")
    }
}

// ── Named parameters ────────────────────────────────────────────────────────

/// A named trainable tensor. Cloning shares storage, so optimizer updates and
/// gradient accumulation are visible through every handle.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    name: String,
    tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Parameter { name: name.into(), tensor: tensor.with_grad() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.tensor.grad()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad()
    }

    /// Replace the value buffer (checkpoint loading). Shape must match.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::dim(format!(
                "parameter '{}' has {} elements, tried to load {}",
                self.name,
                self.numel(),
                data.len()
            )));
        }
        *self.tensor.data_mut() = data;
        Ok(())
    }
}

impl<T: Scalar> fmt::Debug for Parameter<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Parameter({} {:?})", self.name, self.tensor.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let r = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]);
        assert!(matches!(r, Err(Error::Dim(_))));
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }

    #[test]
    fn broadcast_shape_trailing_alignment() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[2, 3, 4]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[2, 3, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[4], &[2, 3, 4]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[2, 8, 4, 4], &[2, 8, 1, 1]).unwrap(), vec![2, 8, 4, 4]);
        assert_eq!(broadcast_shape(&[1], &[7]).unwrap(), vec![7]);
        assert!(broadcast_shape(&[2, 3], &[2, 4]).is_err());
    }

    #[test]
    fn clone_shares_storage() {
        let a = Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.clone();
        a.data_mut()[0] = 9.0;
        assert_eq!(b.to_vec(), vec![9.0, 2.0]);
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn detached_copy_is_independent() {
        let a = Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.detached_copy();
        a.data_mut()[0] = 9.0;
        assert_eq!(b.to_vec(), vec![1.0, 2.0]);
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn grad_accumulates_across_calls() {
        let a = Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap().with_grad();
        a.accumulate_grad(&[0.5, 1.0]);
        a.accumulate_grad(&[0.25, 0.25]);
        assert_eq!(a.grad().unwrap(), vec![0.75, 1.25]);
        a.zero_grad();
        assert!(a.grad().is_none());
    }

    #[test]
    fn item_requires_single_element() {
        let a = Tensor::<f32>::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(a.item(), Err(Error::Contract(_))));
        assert_eq!(Tensor::scalar(3.0f32).item().unwrap(), 3.0);
    }
}
