use crate::error::Result;
use crate::graph::{Backward, Graph};
use crate::ops::dims4;
use crate::tensor::{Scalar, Tensor};

struct SumBackward;

impl<T: Scalar> Backward<T> for SumBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = inputs[0]
            .requires_grad()
            .then(|| vec![g[0]; inputs[0].numel()]);
        vec![dx]
    }
}

/// Sum of all elements, as a scalar tensor.
pub fn sum<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let total = {
        let xs = x.read();
        xs.iter().fold(T::zero(), |a, &b| a + b)
    };
    let out = Tensor::new(vec![1], vec![total], g.track(&[x]))?;
    g.record(vec![x.clone()], out.clone(), Box::new(SumBackward));
    Ok(out)
}

struct SpatialAvgBackward {
    sites: usize,
}

impl<T: Scalar> Backward<T> for SpatialAvgBackward {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = inputs[0].requires_grad().then(|| {
            let scale = T::one() / T::from_count(self.sites);
            let mut dx = vec![T::zero(); inputs[0].numel()];
            for (chunk, &gv) in dx.chunks_mut(self.sites).zip(g.iter()) {
                let v = gv * scale;
                chunk.iter_mut().for_each(|d| *d = v);
            }
            dx
        });
        vec![dx]
    }
}

/// Mean over all spatial sites per (t, c): [T,C,H,W] -> [T,C].
pub fn spatial_avgpool<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (t, c, h, w) = dims4("spatial_avgpool", x)?;
    let sites = h * w;
    let scale = T::one() / T::from_count(sites);
    let out = {
        let xs = x.read();
        let data: Vec<T> = xs
            .chunks(sites)
            .map(|chunk| chunk.iter().fold(T::zero(), |a, &b| a + b) * scale)
            .collect();
        Tensor::new(vec![t, c], data, g.track(&[x]))?
    };
    g.record(
        vec![x.clone()],
        out.clone(),
        Box::new(SpatialAvgBackward { sites }),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avgpool_of_ones_is_ones() {
        let mut g = Graph::inference();
        let x = Tensor::<f32>::ones(vec![2, 3, 4, 4]);
        let y = spatial_avgpool(&mut g, &x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.to_vec().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn avgpool_of_single_hot_site() {
        let mut g = Graph::inference();
        let mut data = vec![0.0f32; 4];
        data[2] = 1.0;
        let x = Tensor::from_vec(vec![1, 1, 2, 2], data).unwrap();
        assert_eq!(spatial_avgpool(&mut g, &x).unwrap().item(), 0.25);
    }
}
