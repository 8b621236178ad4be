use crate::error::Result;
use crate::tensor::{check_same, Real, Tensor4};

/// Mean squared error over all elements, with its gradient
/// `2·(pred − target) / count`.
pub fn l2_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(T, Tensor4<T>)> {
    check_same(pred, target, "l2_loss")?;
    let count = T::from_usize(pred.len().max(1)).expect("count fits");
    let diff: Vec<T> = pred.data().iter().zip(target.data()).map(|(&p, &t)| p - t).collect();
    let loss = diff.iter().map(|&d| d * d).sum::<T>() / count;
    let scale = T::lit(2.0) / count;
    let grad = Tensor4::from_vec(pred.dims(), diff.into_iter().map(|d| d * scale).collect())?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = Tensor4::from_fn([2, 3, 4, 5], |[n, c, y, x]| (n + 2 * c + 3 * y + x) as f64 * 0.1);
        assert_eq!(l2_loss(&a, &a).unwrap().0, 0.0);
        let b = a.map(|v| v + 1.0);
        let (loss, grad) = l2_loss(&b, &a).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        assert!(grad.data().iter().all(|&g| (g - 2.0 / 120.0).abs() < 1e-15));
        assert!(l2_loss(&a, &Tensor4::zeros([1, 3, 4, 5])).is_err());
    }
}
