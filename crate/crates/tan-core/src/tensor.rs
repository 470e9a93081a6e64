//! Dense N-dimensional tensor with row-major storage and an optional
//! gradient buffer.
//!
//! A `Tensor` is a cheap handle (`Arc`) onto shared storage. Data is
//! immutable during forward/backward; the only writers are gradient
//! accumulation during `Graph::backward` and the optimizer between steps.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::error::{Result, TanError};

/// Element type for tensors: f32 for training and inference, f64 for the
/// finite-difference gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
    fn from_count(v: usize) -> Self {
        Self::from_f64c(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identifier used by the autograd graph to track tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(u64);

struct Inner<T: Scalar> {
    id: TensorId,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
}

pub struct Tensor<T: Scalar> {
    inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={:?}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TanError::shape(
                "tensor",
                format!(
                    "shape {:?} implies {} elements, buffer holds {}",
                    shape,
                    numel,
                    data.len()
                ),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(TanError::shape("tensor", format!("zero extent in {shape:?}")));
        }
        Ok(Tensor {
            inner: Arc::new(Inner {
                id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
                shape,
                data: RwLock::new(data),
                requires_grad,
                grad: Mutex::new(None),
            }),
        })
    }

    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        Self::new(shape, data, false)
    }

    /// Trainable tensor (`requires_grad = true`).
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        Self::new(shape, data, true)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n], false).expect("consistent by construction")
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::new(shape, vec![value; n], false).expect("consistent by construction")
    }

    pub fn scalar(value: T) -> Self {
        Self::new(vec![1], vec![value], false).expect("consistent by construction")
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Read guard over the flat row-major buffer.
    pub fn read(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read().expect("tensor lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.read().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.read()[0]
    }

    /// Overwrite the buffer. Caller is the single writer (optimizer or
    /// test setup); length must match.
    pub fn set_data(&self, new: &[T]) {
        let mut guard = self.inner.data.write().expect("tensor lock poisoned");
        assert_eq!(guard.len(), new.len(), "set_data length mismatch");
        guard.copy_from_slice(new);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Add `g` into the gradient buffer, allocating it on first use.
    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut guard = self.inner.grad.lock().expect("grad lock poisoned");
        match guard.as_mut() {
            Some(buf) => {
                debug_assert_eq!(buf.len(), g.len());
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b = *b + v;
                }
            }
            None => *guard = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.read().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_buffer_mismatch_is_an_error() {
        let err = Tensor::<f32>::from_vec(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TanError::Shape { .. }), "{err}");
    }

    #[test]
    fn grad_accumulates() {
        let t = Tensor::<f32>::param(vec![3], vec![0.0; 3]).unwrap();
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![2.0, 3.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn clones_share_storage() {
        let t = Tensor::<f32>::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let u = t.clone();
        assert_eq!(t.id(), u.id());
        t.set_data(&[5.0, 6.0]);
        assert_eq!(u.to_vec(), vec![5.0, 6.0]);
    }

    #[test]
    fn finiteness_is_detectable() {
        let t = Tensor::<f32>::from_vec(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(!t.all_finite());
    }
}
