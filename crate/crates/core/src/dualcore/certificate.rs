//! Exact inner minimization of the duals, used to certify strong duality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    action_free_dual_gradient, action_free_dual_objective, action_free_residual, closed_form_weight,
    dual_gradient_general, dual_objective_general, td_residual, MixtureProblem,
};
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::mdp::Policy;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualMinimum {
    pub value: f64,
    pub variables: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Dense matrix of a linear map given by its action on basis vectors.
fn dense(n_in: usize, n_out: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_out, n_in);
    let mut e = vec![0.0; n_in];
    for j in 0..n_in {
        e[j] = 1.0;
        for (i, v) in apply(&e).into_iter().enumerate() {
            m[(i, j)] = v;
        }
        e[j] = 0.0;
    }
    m
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton with pseudo-inverse steps for a convex objective whose
/// Hessian is `A^T diag(curv) A`.
fn newton(
    x0: Vec<f64>,
    a: &DMatrix<f64>,
    objective: impl Fn(&[f64]) -> Result<f64>,
    gradient: impl Fn(&[f64]) -> Result<Vec<f64>>,
    curvature: impl Fn(&[f64]) -> Result<Vec<f64>>,
    max_iters: usize,
) -> Result<DualMinimum> {
    let mut x = x0;
    let mut value = objective(&x)?;
    let mut grad = gradient(&x)?;
    let mut iterations = 0;
    while iterations < max_iters && inf_norm(&grad) > 1e-11 {
        iterations += 1;
        let curv = curvature(&x)?;
        let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * curv[i]);
        let hessian = a.transpose() * scaled;
        let g = DVector::from_column_slice(&grad);
        let step = hessian
            .svd(true, true)
            .solve(&(-&g), 1e-12)
            .map_err(|e| Error::Numerical(format!("Newton step: {e}")))?;
        if step.dot(&g) >= 0.0 {
            // The gradient has a component outside the Hessian's range: the
            // objective decreases linearly without bound.
            return Ok(DualMinimum {
                value: f64::NEG_INFINITY,
                variables: x,
                iterations,
                gradient_norm: inf_norm(&grad),
            });
        }
        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if let Ok(v) = objective(&trial) {
                if v <= value + 1e-4 * t * step.dot(&g) {
                    break Some((trial, v));
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        let Some((trial, v)) = accepted else { break };
        let improvement = value - v;
        x = trial;
        value = v;
        grad = gradient(&x)?;
        if improvement <= 1e-15 * value.abs().max(1.0) && t < 1.0 {
            break;
        }
    }
    Ok(DualMinimum {
        value,
        variables: x,
        iterations,
        gradient_norm: inf_norm(&grad),
    })
}

/// `min_S L(S, pi)` for a fixed policy; equals `-D_f(Mix(d^pi, rho) || Mix(q, rho))`
/// when strong duality holds.
pub fn min_dual_at_policy(problem: &MixtureProblem, div: &dyn Divergence, policy: &Policy) -> Result<DualMinimum> {
    let mdp = &problem.mdp;
    let n = mdp.sag_len();
    let a = dense(n, n, |s| td_residual(mdp, policy, s));
    let mq = problem.mixed_target();
    newton(
        vec![0.0; n],
        &a,
        |s| dual_objective_general(problem, div, s, policy),
        |s| dual_gradient_general(problem, div, s, policy),
        |s| {
            td_residual(mdp, policy, s)
                .iter()
                .zip(&mq)
                .map(|(&y, &m)| Ok(if m > 0.0 { m * div.conjugate_second_derivative(y)? } else { 0.0 }))
                .collect()
        },
        200,
    )
}

/// `min_V` of the action-free dual; equals minus the optimum of the
/// action-free primal.
pub fn min_action_free_dual(problem: &MixtureProblem, div: &dyn Divergence) -> Result<DualMinimum> {
    let mdp = &problem.mdp;
    let n_in = mdp.n_states() * mdp.n_goals();
    let a = dense(n_in, mdp.sag_len(), |v| action_free_residual(mdp, v));
    let mq = problem.mixed_target();
    newton(
        vec![0.0; n_in],
        &a,
        |v| action_free_dual_objective(problem, div, v),
        |v| action_free_dual_gradient(problem, div, v),
        |v| {
            action_free_residual(mdp, v)
                .iter()
                .zip(&mq)
                .map(|(&y, &m)| {
                    if m == 0.0 || closed_form_weight(div, y)? == 0.0 {
                        Ok(0.0)
                    } else {
                        Ok(m * div.conjugate_second_derivative(y)?)
                    }
                })
                .collect()
        },
        200,
    )
}
