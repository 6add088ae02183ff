use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, Real};
use crate::error::{Error, Result};

/// Fully connected network: ReLU on hidden layers, linear output.
///
/// All parameters live in one flat vector. Layer `l` stores its weights as an
/// `in x out` row-major block followed by `out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet<T> {
    layer_sizes: Vec<usize>,
    params: Vec<T>,
    offsets: Vec<usize>,
}

/// Activations kept by [`DenseNet::forward_train`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`
    /// (after ReLU on hidden layers).
    acts: Vec<Matrix<T>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.acts.last().expect("tape has an input")
    }
}

fn offsets(layer_sizes: &[usize]) -> Vec<usize> {
    let mut offs = vec![0];
    for w in layer_sizes.windows(2) {
        offs.push(offs.last().unwrap() + w[0] * w[1] + w[1]);
    }
    offs
}

/// `C <- op(A) op(B) + beta C` for dense row-major storage. Each operand is
/// `(data, row length as stored, transposed)`; `C` is `m x n` row-major.
fn gemm<T: Real>(m: usize, k: usize, n: usize, a: (&[T], usize, bool), b: (&[T], usize, bool), beta: T, c: &mut [T]) {
    let strides = |(data, ld, tr): (&[T], usize, bool), rows: usize, cols: usize| {
        assert!(data.len() >= rows * cols && ld == if tr { rows } else { cols });
        if tr {
            (1, ld as isize)
        } else {
            (ld as isize, 1)
        }
    };
    let (rsa, csa) = strides(a, m, k);
    let (rsb, csb) = strides(b, k, n);
    assert!(c.len() >= m * n);
    // SAFETY: the shape checks above bound every strided index by the slice
    // lengths.
    unsafe { T::gemm(m, k, n, (a.0, rsa, csa), (b.0, rsb, csb), beta, (c, n as isize, 1)) }
}

impl<T: Real> DenseNet<T> {
    /// He-uniform hidden layers, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` output
    /// layer, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let n_layers = net.n_layers();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = if l + 1 < n_layers {
                (6.0 / fan_in as f64).sqrt()
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let start = net.offsets[l];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("layer sizes {layer_sizes:?} need two or more positive entries")));
        }
        let offsets = offsets(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![T::zero(); *offsets.last().unwrap()],
            offsets,
        })
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(format!(
                "layers {layer_sizes:?} need {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Weight from input unit `k` to output unit `j` of layer `l`.
    pub fn weight(&self, l: usize, k: usize, j: usize) -> T {
        self.params[self.offsets[l] + k * self.layer_sizes[l + 1] + j]
    }

    pub fn bias(&self, l: usize, j: usize) -> T {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        self.params[self.offsets[l] + n_in * n_out + j]
    }

    /// `self <- (1 - tau) self + tau other`.
    pub fn blend_from(&mut self, other: &Self, tau: T) {
        for (p, &o) in self.params.iter_mut().zip(&other.params) {
            *p = *p + tau * (o - *p);
        }
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, batch has {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn layer(&self, l: usize, x: &Matrix<T>) -> Matrix<T> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out];
        let b = &self.params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
        let hidden = l + 1 < self.n_layers();
        let mut out = Matrix::zeros(x.rows(), n_out);
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(b);
        }
        if l == 0 {
            // One-hot inputs make most of the first layer skippable.
            for i in 0..x.rows() {
                let o = out.row_mut(i);
                for (k, &xk) in x.row(i).iter().enumerate() {
                    if xk == T::zero() {
                        continue;
                    }
                    for (oj, &wj) in o.iter_mut().zip(&w[k * n_out..(k + 1) * n_out]) {
                        *oj += xk * wj;
                    }
                }
            }
        } else {
            gemm(x.rows(), n_in, n_out, (x.data(), n_in, false), (w, n_out, false), T::one(), out.data_mut());
        }
        if hidden {
            out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        out
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut h = self.layer(0, x);
        for l in 1..self.n_layers() {
            h = self.layer(l, &h);
        }
        Ok(h)
    }

    pub fn forward_train(&self, x: &Matrix<T>) -> Result<Tape<T>> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        for l in 0..self.n_layers() {
            let next = self.layer(l, acts.last().unwrap());
            acts.push(next);
        }
        Ok(Tape { acts })
    }

    /// Adds the parameter gradient of `sum(upstream * output)` to `grad` and
    /// optionally returns the gradient with respect to the input.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        upstream: &Matrix<T>,
        grad: &mut [T],
        want_input_grad: bool,
    ) -> Result<Option<Matrix<T>>> {
        let out = tape.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::shape(format!(
                "upstream {}x{} against output {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::shape("gradient buffer length differs from parameter count"));
        }
        let mut delta = upstream.clone();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let x = &tape.acts[l];
            let (gw, gb) = grad[self.offsets[l]..self.offsets[l + 1]].split_at_mut(n_in * n_out);
            for i in 0..x.rows() {
                for (bj, &dj) in gb.iter_mut().zip(delta.row(i)) {
                    *bj += dj;
                }
            }
            if l == 0 {
                for i in 0..x.rows() {
                    let d = delta.row(i);
                    for (k, &xk) in x.row(i).iter().enumerate() {
                        if xk == T::zero() {
                            continue;
                        }
                        for (g, &dj) in gw[k * n_out..(k + 1) * n_out].iter_mut().zip(d) {
                            *g += xk * dj;
                        }
                    }
                }
            } else {
                // gW += X^T delta
                gemm(n_in, x.rows(), n_out, (x.data(), n_in, true), (delta.data(), n_out, false), T::one(), gw);
            }
            if l == 0 && !want_input_grad {
                return Ok(None);
            }
            let w = &self.params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let mut prev = Matrix::zeros(x.rows(), n_in);
            // prev = delta W^T
            gemm(x.rows(), n_out, n_in, (delta.data(), n_out, false), (w, n_out, true), T::zero(), prev.data_mut());
            if l > 0 {
                // ReLU mask: hidden activations equal to zero pass no gradient.
                for (p, &xk) in prev.data_mut().iter_mut().zip(x.data()) {
                    if xk <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
            delta = prev;
        }
        Ok(Some(delta))
    }
}
