use crate::error::{NnError, Result};
use crate::scalar::Scalar;

fn check_lengths(pred: usize, target: usize) -> Result<()> {
    if pred != target {
        return Err(NnError::Shape(format!(
            "prediction has {pred} values, label has {target}"
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    check_lengths(pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(sum / T::from_f64(pred.len() as f64))
}

/// Gradient of [`mse_loss`] with respect to `pred`: `(2/D)(pred − target)`.
pub fn mse_grad<T: Scalar>(pred: &[T], target: &[T]) -> Result<Vec<T>> {
    check_lengths(pred.len(), target.len())?;
    let scale = T::from_f64(2.0 / pred.len().max(1) as f64);
    Ok(pred.iter().zip(target).map(|(&p, &t)| scale * (p - t)).collect())
}

/// MSE over the entries whose label is not NaN, with its gradient. Masked
/// entries get zero gradient. Returns `(0, zeros)` if every label is NaN.
pub fn masked_mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    check_lengths(pred.len(), target.len())?;
    let valid = target.iter().filter(|t| !t.is_nan()).count();
    if valid == 0 {
        return Ok((T::zero(), vec![T::zero(); pred.len()]));
    }
    let d = T::from_f64(valid as f64);
    let two = T::from_f64(2.0);
    let mut sum = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if t.is_nan() {
                T::zero()
            } else {
                sum = sum + (p - t) * (p - t);
                two * (p - t) / d
            }
        })
        .collect();
    Ok((sum / d, grad))
}
