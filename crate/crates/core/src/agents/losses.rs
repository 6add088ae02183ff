//! Batch losses and their gradients with respect to network outputs.

use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, Matrix, Real};

/// Asymmetric weight for residual `u = prediction - target`: `tau` when the
/// prediction sits below the target, `1 - tau` otherwise. With `tau > 0.5`
/// the minimizer is an upper expectile of the targets.
pub fn expectile_weight<T: Real>(u: T, tau: T) -> T {
    if u < T::zero() {
        tau
    } else {
        T::one() - tau
    }
}

/// Mean of `w(u) u^2` and its gradient with respect to `pred`.
pub fn expectile_loss<T: Real>(pred: &[T], target: &[T], tau: T) -> (T, Vec<T>) {
    let n = T::of(pred.len() as f64);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let u = p - t;
            let w = expectile_weight(u, tau);
            loss += w * u * u;
            T::of(2.0) * w * u / n
        })
        .collect();
    (loss / n, grad)
}

/// Exact `tau`-expectile of `data`.
///
/// The first-order condition is piecewise linear in `m`, so the root is found
/// by checking each gap between sorted points.
pub fn fit_expectile(data: &[f64], tau: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("expectile of an empty sample"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau {tau} outside (0, 1)")));
    }
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    let total: f64 = x.iter().sum();
    let n = x.len();
    let slack = 1e-12 * (1.0 + x[0].abs().max(x[n - 1].abs()));
    let mut below = 0.0;
    // k points at or below m carry weight 1 - tau, the rest tau.
    for k in 1..=n {
        below += x[k - 1];
        let m = ((1.0 - tau) * below + tau * (total - below)) / ((1.0 - tau) * k as f64 + tau * (n - k) as f64);
        let upper = if k < n { x[k] } else { f64::INFINITY };
        if m >= x[k - 1] - slack && m <= upper + slack {
            return Ok(m);
        }
    }
    Err(Error::Numerical("expectile root not bracketed".into()))
}

/// `min(exp(alpha * adv), clip)`.
pub fn awr_weights<T: Real>(adv: &[T], alpha: T, clip: T) -> Vec<T> {
    adv.iter().map(|&x| (alpha * x).exp().min(clip)).collect()
}

/// `-mean_i w_i log softmax(logits_i)[a_i]` and its gradient in the logits.
pub fn weighted_nll<T: Real>(logits: &Matrix<T>, actions: &[usize], weights: &[T]) -> (T, Matrix<T>) {
    let n = T::of(logits.rows() as f64);
    let logp = log_softmax_rows(logits);
    let mut grad = logp.map(|x| x.exp());
    let mut loss = T::zero();
    for (i, (&a, &w)) in actions.iter().zip(weights).enumerate() {
        loss -= w * logp.get(i, a);
        let row = grad.row_mut(i);
        row[a] -= T::one();
        row.iter_mut().for_each(|x| *x *= w / n);
    }
    (loss / n, grad)
}

/// Row-wise softmax.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    log_softmax_rows(logits).map(|x| x.exp())
}

/// Everything the score loss reads besides the score network itself. Policy
/// probabilities and `M` values are constants here.
pub struct ScoreLossInputs<'a, T> {
    pub beta: T,
    pub gamma: T,
    /// `pi(.|s, g)` on the data batch; data states stand in for `d0`.
    pub pi_rho: &'a Matrix<T>,
    pub a_rho: &'a [usize],
    /// `M(s', g)` on the data batch.
    pub m_next_rho: &'a [T],
    pub a_q: &'a [usize],
    /// `sum_a' pi(a'|s', g) S(s', a', g)` on the goal-transition batch, held
    /// fixed like the `M` targets.
    pub s_next_q: &'a [T],
    pub m_next_q: &'a [T],
}

/// Gradients of the score loss with respect to the two trained score
/// evaluations.
pub struct ScoreLossGrad<T> {
    pub loss: T,
    pub d_rho: Matrix<T>,
    pub d_q: Matrix<T>,
}

/// Sample form of the practical score objective:
///
/// ```text
/// beta (1-gamma) E_rho[S(s, pi, g)] + beta gamma E_q[S(s', pi, g)] - beta E_q[S(s, a, g)]
///   + beta E_q[(gamma M(s', g) - S(s, a, g))^2] + (1 - beta) E_rho[(gamma M(s', g) - S(s, a, g))^2]
/// ```
///
/// The last two terms are the mixture expectation split over its batches.
/// Scores at successor states enter as constants: the quadratic reads them
/// through `M`, the linear term through `s_next_q`. Differentiating the
/// linear successor term instead pushes the score down at goal states and
/// the bootstrapped scores then rank actions backwards.
pub fn score_loss<T: Real>(inp: &ScoreLossInputs<'_, T>, s_rho: &Matrix<T>, s_q: &Matrix<T>) -> ScoreLossGrad<T> {
    let (beta, gamma) = (inp.beta, inp.gamma);
    let two = T::of(2.0);
    let nr = T::of(s_rho.rows() as f64);
    let nq = T::of(s_q.rows() as f64);
    let mut loss = T::zero();

    let mut d_rho = Matrix::zeros(s_rho.rows(), s_rho.cols());
    let c_init = beta * (T::one() - gamma) / nr;
    for i in 0..s_rho.rows() {
        let pi = inp.pi_rho.row(i);
        let row = d_rho.row_mut(i);
        for (a, (&p, d)) in pi.iter().zip(row.iter_mut()).enumerate() {
            loss += c_init * p * s_rho.get(i, a);
            *d = c_init * p;
        }
        let a = inp.a_rho[i];
        let r = inp.gamma * inp.m_next_rho[i] - s_rho.get(i, a);
        loss += (T::one() - beta) * r * r / nr;
        row[a] -= two * (T::one() - beta) * r / nr;
    }

    let mut d_q = Matrix::zeros(s_q.rows(), s_q.cols());
    for i in 0..s_q.rows() {
        loss += beta * gamma * inp.s_next_q[i] / nq;
        let a = inp.a_q[i];
        let sa = s_q.get(i, a);
        let r = gamma * inp.m_next_q[i] - sa;
        loss += -beta * sa / nq + beta * r * r / nq;
        d_q.set(i, a, -beta / nq - two * beta * r / nq);
    }
    ScoreLossGrad { loss, d_rho, d_q }
}

/// Chi-square inner maximum `max_{w >= 0} w y - (w - 1)^2` and its slope
/// `w* = max(0, y/2 + 1)`.
pub fn chi2_inner<T: Real>(y: T) -> (T, T) {
    let two = T::of(2.0);
    if y >= -two {
        (y + y * y / T::of(4.0), y / two + T::one())
    } else {
        (-T::one(), T::zero())
    }
}

/// Binary cross-entropy on logits; label 1 for positives.
pub fn logistic_loss<T: Real>(logits: &[T], labels: &[bool]) -> (T, Vec<T>) {
    let n = T::of(logits.len() as f64);
    let mut loss = T::zero();
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            // log(1 + e^{-z}) for positives, log(1 + e^{z}) for negatives.
            let m = if y { -z } else { z };
            loss += m.max(T::zero()) + (-m.abs()).exp().ln_1p();
            let sig = T::one() / (T::one() + (-z).exp());
            (sig - if y { T::one() } else { T::zero() }) / n
        })
        .collect();
    (loss / n, grad)
}
