use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Batch-mean squared Euclidean error and its gradient with respect to
/// `pred`: `(1/B)·Σ_b ‖pred_b − target_b‖²`, `2(pred − target)/B`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(shape_err(format!("mse shapes differ: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let [b, _] = pred.dims2()?;
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p.as_f64() - t.as_f64();
        loss += d * d;
        grad.push(T::of(2.0 * d * inv_b));
    }
    Ok((loss * inv_b, Tensor::from_vec(pred.shape(), grad)?))
}
