//! Small dense networks with hand-written backpropagation.

mod checkpoint;
mod net;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use net::{DenseNet, Tape};
pub use optim::{AdamState, CosineSchedule};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type of a network. Agents use `f32`; gradient checks use `f64`.
pub trait Real:
    Float + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C <- A B + beta C` on strided operands (`m x k` times `k x n`).
    ///
    /// # Safety
    /// Every index `i * rs + j * cs` within the stated shapes must lie inside
    /// the corresponding slice.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta, c.0.as_mut_ptr(), c.1, c.2);
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta, c.0.as_mut_ptr(), c.1, c.2);
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{rows}x{cols} matrix given {} entries", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Largest relative error `|a - b| / max(|a|, |b|, 1e-8)` between two
/// gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let hi = f(&probe);
            probe[i] = x[i] - h;
            let lo = f(&probe);
            probe[i] = x[i];
            (hi - lo) / (2.0 * h)
        })
        .collect()
}

/// Compares backpropagated parameter gradients with central differences
/// (`h = 1e-5`). `loss` maps a network output to the loss and its gradient
/// with respect to that output.
pub fn gradient_check(
    net: &DenseNet<f64>,
    batch: &Matrix<f64>,
    loss: impl Fn(&Matrix<f64>) -> (f64, Matrix<f64>),
) -> Result<f64> {
    let tape = net.forward_train(batch)?;
    let (_, upstream) = loss(tape.output());
    let mut analytic = vec![0.0; net.n_params()];
    net.backward(&tape, &upstream, &mut analytic, false)?;
    let mut probe = net.clone();
    let numeric = numeric_gradient(net.params(), 1e-5, |p| {
        probe.params_mut().copy_from_slice(p);
        loss(&probe.forward(batch).expect("shape checked above")).0
    });
    Ok(max_relative_error(&analytic, &numeric))
}

/// Numerically stable log-softmax of each row.
pub fn log_softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        row.iter_mut().for_each(|x| *x -= lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mse(target: Matrix<f64>) -> impl Fn(&Matrix<f64>) -> (f64, Matrix<f64>) {
        move |out| {
            let n = out.data().len() as f64;
            let diff: Vec<f64> = out.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            let grad = Matrix::new(out.rows(), out.cols(), diff.iter().map(|d| 2.0 * d / n).collect()).unwrap();
            (loss, grad)
        }
    }

    #[test]
    fn random_mlp_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::<f64>::new(&[4, 8, 8, 2], &mut rng).unwrap();
        let batch = Matrix::new(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let target = Matrix::new(5, 2, (0..10).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap();
        assert!(gradient_check(&net, &batch, mse(target)).unwrap() < 1e-4);
    }

    #[test]
    fn quadratic_loss_on_linear_net_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::<f64>::new(&[3, 2], &mut rng).unwrap();
        let batch = Matrix::new(4, 3, (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let target = Matrix::zeros(4, 2);
        assert!(gradient_check(&net, &batch, mse(target)).unwrap() < 1e-7);
    }

    #[test]
    fn single_bias_net_passes() {
        let mut net = DenseNet::<f64>::zeros(&[1, 1]).unwrap();
        net.params_mut()[1] = 0.3;
        let batch = Matrix::new(2, 1, vec![0.0, 0.0]).unwrap();
        assert!(gradient_check(&net, &batch, mse(Matrix::new(2, 1, vec![1.0, -1.0]).unwrap())).unwrap() < 1e-7);
    }

    #[test]
    fn log_softmax_normalizes() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0]).unwrap();
        let l = log_softmax_rows(&m);
        for i in 0..2 {
            let total: f64 = l.row(i).iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
        assert!((max_relative_error(&[1e-9], &[0.0]) - 0.1).abs() < 1e-12);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-12);
    }
}
