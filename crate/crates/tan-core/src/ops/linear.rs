use crate::error::{Result, TanError};
use crate::graph::{Backward, Graph};
use crate::tensor::{Scalar, Tensor};

struct LinearBackward;

impl<T: Scalar> Backward<T> for LinearBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        let (t, c) = (x.dim(0), x.dim(1));
        let k = w.dim(0);

        let dx = x.requires_grad().then(|| {
            let ws = w.read();
            let mut dx = vec![T::zero(); t * c];
            for ti in 0..t {
                for ki in 0..k {
                    let gv = g[ti * k + ki];
                    let wrow = &ws[ki * c..(ki + 1) * c];
                    for ci in 0..c {
                        dx[ti * c + ci] = dx[ti * c + ci] + gv * wrow[ci];
                    }
                }
            }
            dx
        });
        let dw = w.requires_grad().then(|| {
            let xs = x.read();
            let mut dw = vec![T::zero(); k * c];
            for ti in 0..t {
                let xrow = &xs[ti * c..(ti + 1) * c];
                for ki in 0..k {
                    let gv = g[ti * k + ki];
                    let drow = &mut dw[ki * c..(ki + 1) * c];
                    for ci in 0..c {
                        drow[ci] = drow[ci] + gv * xrow[ci];
                    }
                }
            }
            dw
        });
        let db = inputs[2].requires_grad().then(|| {
            let mut db = vec![T::zero(); k];
            for ti in 0..t {
                for ki in 0..k {
                    db[ki] = db[ki] + g[ti * k + ki];
                }
            }
            db
        });
        vec![dx, dw, db]
    }
}

/// Per-frame affine map: [T,C] x [K,C] + [K] -> [T,K].
pub fn linear<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.ndim() != 2 || w.ndim() != 2 {
        return Err(TanError::shape(
            "linear",
            format!("expected x [T,C] and w [K,C], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    }
    let (t, c) = (x.dim(0), x.dim(1));
    let k = w.dim(0);
    if w.dim(1) != c || b.shape() != [k] {
        return Err(TanError::shape(
            "linear",
            format!(
                "x [{},{}] needs w [K,{}] and b [K]; got w {:?}, b {:?}",
                t,
                c,
                c,
                w.shape(),
                b.shape()
            ),
        ));
    }

    let out = {
        let xs = x.read();
        let ws = w.read();
        let bs = b.read();
        let mut out = vec![T::zero(); t * k];
        for ti in 0..t {
            let xrow = &xs[ti * c..(ti + 1) * c];
            let orow = &mut out[ti * k..(ti + 1) * k];
            for ki in 0..k {
                let wrow = &ws[ki * c..(ki + 1) * c];
                let mut acc = bs[ki];
                for ci in 0..c {
                    acc = acc + xrow[ci] * wrow[ci];
                }
                orow[ki] = acc;
            }
        }
        Tensor::new(vec![t, k], out, g.track(&[x, w, b]))?
    };
    g.add_macs((t * k * c) as u64);
    g.record(
        vec![x.clone(), w.clone(), b.clone()],
        out.clone(),
        Box::new(LinearBackward),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut g = Graph::inference();
        let x = Tensor::from_vec(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut eye = vec![0.0f32; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::from_vec(vec![3, 3], eye).unwrap();
        let b = Tensor::zeros(vec![3]);
        assert_eq!(linear(&mut g, &x, &w, &b).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn small_affine_case() {
        let mut g = Graph::inference();
        let x = Tensor::from_vec(vec![1, 2], vec![1.0f32, 2.0]).unwrap();
        let w = Tensor::from_vec(vec![1, 2], vec![1.0f32, 1.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![1.0f32]).unwrap();
        assert_eq!(linear(&mut g, &x, &w, &b).unwrap().to_vec(), vec![4.0]);
    }

    #[test]
    fn inner_dim_mismatch_is_an_error() {
        let mut g = Graph::<f32>::inference();
        let x = Tensor::zeros(vec![2, 3]);
        let w = Tensor::zeros(vec![4, 5]);
        let b = Tensor::zeros(vec![4]);
        assert!(linear(&mut g, &x, &w, &b).is_err());
    }
}
