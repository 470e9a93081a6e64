use crate::error::{Result, TanError};
use crate::graph::{Backward, Graph};
use crate::tensor::{Scalar, Tensor};

struct AddBackward;

impl<T: Scalar> Backward<T> for AddBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        inputs
            .iter()
            .map(|t| t.requires_grad().then(|| g.to_vec()))
            .collect()
    }
}

/// Element-wise sum; shapes must match exactly (no broadcasting).
pub fn add<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(TanError::shape(
            "add",
            format!("lhs {:?} vs rhs {:?}", x.shape(), y.shape()),
        ));
    }
    let out = {
        let (xs, ys) = (x.read(), y.read());
        let data = xs.iter().zip(ys.iter()).map(|(&a, &b)| a + b).collect();
        Tensor::new(x.shape().to_vec(), data, g.track(&[x, y]))?
    };
    g.record(vec![x.clone(), y.clone()], out.clone(), Box::new(AddBackward));
    Ok(out)
}

struct MulBackward;

impl<T: Scalar> Backward<T> for MulBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = inputs[0].requires_grad().then(|| {
            let other = inputs[1].read();
            g.iter().zip(other.iter()).map(|(&gv, &o)| gv * o).collect()
        });
        let dy = inputs[1].requires_grad().then(|| {
            let other = inputs[0].read();
            g.iter().zip(other.iter()).map(|(&gv, &o)| gv * o).collect()
        });
        vec![dx, dy]
    }
}

/// Element-wise product; shapes must match exactly.
pub fn mul<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(TanError::shape(
            "mul",
            format!("lhs {:?} vs rhs {:?}", x.shape(), y.shape()),
        ));
    }
    let out = {
        let (xs, ys) = (x.read(), y.read());
        let data = xs.iter().zip(ys.iter()).map(|(&a, &b)| a * b).collect();
        Tensor::new(x.shape().to_vec(), data, g.track(&[x, y]))?
    };
    g.record(vec![x.clone(), y.clone()], out.clone(), Box::new(MulBackward));
    Ok(out)
}

struct ReluBackward;

impl<T: Scalar> Backward<T> for ReluBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = inputs[0].requires_grad().then(|| {
            let xs = inputs[0].read();
            // Gradient passes iff the input was strictly positive.
            g.iter()
                .zip(xs.iter())
                .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                .collect()
        });
        vec![dx]
    }
}

pub fn relu<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = {
        let xs = x.read();
        let data = xs.iter().map(|&v| v.max(T::zero())).collect();
        Tensor::new(x.shape().to_vec(), data, g.track(&[x]))?
    };
    g.record(vec![x.clone()], out.clone(), Box::new(ReluBackward));
    Ok(out)
}

struct SigmoidBackward;

impl<T: Scalar> Backward<T> for SigmoidBackward {
    fn backward(&self, inputs: &[Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = inputs[0].requires_grad().then(|| {
            let ys = out.read();
            g.iter()
                .zip(ys.iter())
                .map(|(&gv, &y)| gv * y * (T::one() - y))
                .collect()
        });
        vec![dx]
    }
}

pub(crate) fn sigmoid_scalar<T: Scalar>(z: T) -> T {
    // Branch on sign so exp never overflows.
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = {
        let xs = x.read();
        let data = xs.iter().map(|&v| sigmoid_scalar(v)).collect();
        Tensor::new(x.shape().to_vec(), data, g.track(&[x]))?
    };
    g.record(vec![x.clone()], out.clone(), Box::new(SigmoidBackward));
    Ok(out)
}
