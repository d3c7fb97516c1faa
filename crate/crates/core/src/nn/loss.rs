use super::Matrix;

/// Mean squared error over every element.
pub fn mse(pred: &Matrix, target: &Matrix) -> f64 {
    debug_assert_eq!(pred.shape(), target.shape());
    let n = pred.len() as f64;
    pred.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

/// Gradient of [`mse`] with respect to the prediction: `2 (pred - target) / N`.
pub fn mse_grad(pred: &Matrix, target: &Matrix) -> Matrix {
    let n = pred.len() as f64;
    let data = pred.as_slice().iter().zip(target.as_slice()).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Matrix::from_vec(pred.rows(), pred.cols(), data).expect("same shape")
}
