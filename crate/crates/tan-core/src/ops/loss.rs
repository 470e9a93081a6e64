use crate::error::{Result, TanError};
use crate::graph::{Backward, Graph};
use crate::ops::pointwise::sigmoid_scalar;
use crate::tensor::{Scalar, Tensor};

struct BceBackward<T: Scalar> {
    targets: Vec<T>,
}

impl<T: Scalar> Backward<T> for BceBackward<T> {
    fn backward(&self, inputs: &[Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dz = inputs[0].requires_grad().then(|| {
            let zs = inputs[0].read();
            let scale = g[0] / T::from_count(zs.len());
            zs.iter()
                .zip(self.targets.iter())
                .map(|(&z, &y)| (sigmoid_scalar(z) - y) * scale)
                .collect()
        });
        vec![dz]
    }
}

/// Mean binary cross-entropy with logits over all elements, in the stable
/// form max(z,0) - z*y + ln(1 + exp(-|z|)).
pub fn bce_multilabel_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: &Tensor<T>,
    targets: &[T],
) -> Result<Tensor<T>> {
    if logits.numel() != targets.len() {
        return Err(TanError::shape(
            "bce_multilabel_loss",
            format!(
                "logits {:?} ({} values) vs {} targets",
                logits.shape(),
                logits.numel(),
                targets.len()
            ),
        ));
    }
    let loss = {
        let zs = logits.read();
        let mut acc = T::zero();
        for (&z, &y) in zs.iter().zip(targets) {
            acc = acc + z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
        }
        acc / T::from_count(targets.len())
    };
    let out = Tensor::new(vec![1], vec![loss], g.track(&[logits]))?;
    g.record(
        vec![logits.clone()],
        out.clone(),
        Box::new(BceBackward {
            targets: targets.to_vec(),
        }),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_ln2() {
        let mut g = Graph::inference();
        let z = Tensor::<f64>::zeros(vec![4, 3]);
        let loss = bce_multilabel_loss(&mut g, &z, &vec![0.0; 12]).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);
        let loss1 = bce_multilabel_loss(&mut g, &z, &vec![1.0; 12]).unwrap();
        assert!((loss1.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut g = Graph::inference();
        let z = Tensor::from_vec(vec![1], vec![50.0f64]).unwrap();
        let loss = bce_multilabel_loss(&mut g, &z, &[1.0]).unwrap();
        assert!(loss.item() < 1e-20);
    }

    #[test]
    fn stable_for_logits_up_to_fifty() {
        let mut g = Graph::inference();
        let z = Tensor::from_vec(vec![4], vec![50.0f32, -50.0, 50.0, -50.0]).unwrap();
        let loss = bce_multilabel_loss(&mut g, &z, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(loss.item().is_finite());
        assert!(loss.item() > 0.0);
    }
}
