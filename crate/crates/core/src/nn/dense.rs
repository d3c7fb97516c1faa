use rand::Rng;

use super::matrix::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Matrix};

/// Fully connected layer `y = x W + b` with `W` stored `input x output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    /// Uniform init in `+-1/sqrt(fan_in)` for weights and bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let a = 1.0 / (input as f64).sqrt();
        Self {
            w: Matrix::from_fn(input, output, |_, _| rng.random_range(-a..=a)),
            b: Matrix::from_fn(1, output, |_, _| rng.random_range(-a..=a)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w.rows()
    }

    pub fn output_size(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), self.output_size());
        y.add_row_broadcast(self.b.as_slice());
        gemm_acc(&mut y, x, &self.w);
        y
    }

    /// Returns `(dW, db, dx)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> (Matrix, Matrix, Matrix) {
        let mut dw = Matrix::zeros(self.input_size(), self.output_size());
        gemm_at_b_acc(&mut dw, x, dy);
        let db = Matrix::from_vec(1, self.output_size(), dy.column_sums()).expect("bias shape");
        let mut dx = Matrix::zeros(x.rows(), self.input_size());
        gemm_a_bt_acc(&mut dx, dy, &self.w);
        (dw, db, dx)
    }
}
