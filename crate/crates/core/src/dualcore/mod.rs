//! Tabular dual objectives of mixture occupancy matching and their solvers.
//!
//! Scores `S[s][a][g]` use the `[s][a][g]` layout of [`crate::mdp`];
//! action-free values `V[s][g]` are stored as `s * n_goals + g`.

mod certificate;
mod solve;

pub use certificate::{min_dual_at_policy, min_action_free_dual, DualMinimum};
pub use solve::{PolicyRecovery, 
    solve_dual_action_free, solve_dual_tabular, ActionFreeConfig, DualSolution, DualSolverConfig,
    DualVariables,
};

use serde::{Deserialize, Serialize};

pub use crate::occupancy::MixtureProblem;

use crate::divergence::{Divergence, FDivergence};
use crate::error::{Error, Result};
use crate::mdp::{GoalMdp, Policy};

/// Largest residual the KL form exponentiates.
pub const KL_EXPONENT_LIMIT: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    pub s: Vec<f64>,
}

impl ScoreTable {
    pub fn zeros(mdp: &GoalMdp) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            n_goals: mdp.n_goals(),
            s: vec![0.0; mdp.sag_len()],
        }
    }

    pub fn from_vec(mdp: &GoalMdp, s: Vec<f64>) -> Result<Self> {
        if s.len() != mdp.sag_len() {
            return Err(Error::shape(format!("score table needs {} entries", mdp.sag_len())));
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("score table has a non-finite entry"));
        }
        Ok(Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            n_goals: mdp.n_goals(),
            s,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub n_states: usize,
    pub n_goals: usize,
    pub v: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(mdp: &GoalMdp) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_goals: mdp.n_goals(),
            v: vec![0.0; mdp.n_states() * mdp.n_goals()],
        }
    }

    pub fn from_vec(mdp: &GoalMdp, v: Vec<f64>) -> Result<Self> {
        if v.len() != mdp.n_states() * mdp.n_goals() {
            return Err(Error::shape("value table needs one entry per (state, goal)"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("value table has a non-finite entry"));
        }
        Ok(Self {
            n_states: mdp.n_states(),
            n_goals: mdp.n_goals(),
            v,
        })
    }
}

/// `d0(s) q_train(g) pi(a|s,g)`.
pub fn initial_weights(mdp: &GoalMdp, policy: &Policy) -> Vec<f64> {
    let mut c = vec![0.0; mdp.sag_len()];
    for s in 0..mdp.n_states() {
        for g in 0..mdp.n_goals() {
            let w = mdp.initial()[s] * mdp.q_train()[g];
            if w == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions() {
                c[mdp.sag(s, a, g)] = w * policy.prob(g, s, a);
            }
        }
    }
    c
}

/// `V(s,g) = sum_a pi(a|s,g) S(s,a,g)` as an `[s][g]` table.
fn policy_values(mdp: &GoalMdp, policy: &Policy, s_table: &[f64]) -> Vec<f64> {
    let ng = mdp.n_goals();
    let mut v = vec![0.0; mdp.n_states() * ng];
    for s in 0..mdp.n_states() {
        for g in 0..ng {
            v[s * ng + g] = (0..mdp.n_actions())
                .map(|a| policy.prob(g, s, a) * s_table[mdp.sag(s, a, g)])
                .sum();
        }
    }
    v
}

/// `sum_{s'} p(s'|s,a) v(s',g)` for an `[s][g]` table `v`.
fn expect_next(mdp: &GoalMdp, v: &[f64]) -> Vec<f64> {
    let ng = mdp.n_goals();
    let mut out = vec![0.0; mdp.sag_len()];
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let base = mdp.sag(s, a, 0);
            for &(s2, p) in mdp.successors(s, a) {
                for g in 0..ng {
                    out[base + g] += p * v[s2 * ng + g];
                }
            }
        }
    }
    out
}

/// `sum_{s,a} p(s'|s,a) u(s,a,g)` as an `[s'][g]` table.
fn expect_next_adjoint(mdp: &GoalMdp, u: &[f64]) -> Vec<f64> {
    let ng = mdp.n_goals();
    let mut out = vec![0.0; mdp.n_states() * ng];
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let base = mdp.sag(s, a, 0);
            for &(s2, p) in mdp.successors(s, a) {
                for g in 0..ng {
                    out[s2 * ng + g] += p * u[base + g];
                }
            }
        }
    }
    out
}

/// `(P^pi S)(s,a,g) = sum_{s'} p(s'|s,a) sum_{a'} pi(a'|s',g) S(s',a',g)`.
pub fn next_score_expectation(mdp: &GoalMdp, policy: &Policy, s_table: &[f64]) -> Vec<f64> {
    expect_next(mdp, &policy_values(mdp, policy, s_table))
}

/// TD residual `y = gamma P^pi S - S`.
pub fn td_residual(mdp: &GoalMdp, policy: &Policy, s_table: &[f64]) -> Vec<f64> {
    let gamma = mdp.gamma();
    next_score_expectation(mdp, policy, s_table)
        .into_iter()
        .zip(s_table)
        .map(|(n, s)| gamma * n - s)
        .collect()
}

/// Adjoint of `S -> gamma P^pi S - S` applied to `u`.
pub fn td_residual_adjoint(mdp: &GoalMdp, policy: &Policy, u: &[f64]) -> Vec<f64> {
    let gamma = mdp.gamma();
    let ng = mdp.n_goals();
    let inflow = expect_next_adjoint(mdp, u);
    let mut out: Vec<f64> = u.iter().map(|x| -x).collect();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for g in 0..ng {
                out[mdp.sag(s, a, g)] += gamma * policy.prob(g, s, a) * inflow[s * ng + g];
            }
        }
    }
    out
}

/// Action-free residual `y(s,a,g) = gamma sum_{s'} p(s'|s,a) V(s',g) - V(s,g)`.
pub fn action_free_residual(mdp: &GoalMdp, v: &[f64]) -> Vec<f64> {
    let gamma = mdp.gamma();
    let ng = mdp.n_goals();
    let mut y = expect_next(mdp, v);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for g in 0..ng {
                let i = mdp.sag(s, a, g);
                y[i] = gamma * y[i] - v[s * ng + g];
            }
        }
    }
    y
}

/// Adjoint of `V -> action_free_residual(V)`.
pub fn action_free_residual_adjoint(mdp: &GoalMdp, u: &[f64]) -> Vec<f64> {
    let gamma = mdp.gamma();
    let ng = mdp.n_goals();
    let mut out: Vec<f64> = expect_next_adjoint(mdp, u).into_iter().map(|x| gamma * x).collect();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for g in 0..ng {
                out[s * ng + g] -= u[mdp.sag(s, a, g)];
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_scores(problem: &MixtureProblem, s_table: &[f64], policy: &Policy) -> Result<()> {
    let mdp = &problem.mdp;
    if s_table.len() != mdp.sag_len() {
        return Err(Error::shape(format!("score table needs {} entries", mdp.sag_len())));
    }
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() || policy.n_goals() != mdp.n_goals() {
        return Err(Error::shape("policy does not match the MDP"));
    }
    Ok(())
}

fn locate(mdp: &GoalMdp, i: usize) -> (usize, usize, usize) {
    let g = i % mdp.n_goals();
    let sa = i / mdp.n_goals();
    (sa / mdp.n_actions(), sa % mdp.n_actions(), g)
}

fn conjugate_at(div: &dyn Divergence, mdp: &GoalMdp, i: usize, y: f64) -> Result<f64> {
    div.conjugate(y).map_err(|e| {
        let (s, a, g) = locate(mdp, i);
        Error::ConjugateDomain {
            s,
            a,
            g,
            residual: y,
            source: Box::new(e),
        }
    })
}

/// General dual
/// `beta (1-gamma) E_{d0,pi}[S] + E_{Mix(q,rho)}[f*(y)] - (1-beta) E_rho[y]`.
pub fn dual_objective_general(
    problem: &MixtureProblem,
    div: &dyn Divergence,
    s_table: &[f64],
    policy: &Policy,
) -> Result<f64> {
    check_scores(problem, s_table, policy)?;
    let mdp = &problem.mdp;
    let beta = problem.beta();
    let y = td_residual(mdp, policy, s_table);
    let mq = problem.mixed_target();
    let mut conj = 0.0;
    for (i, (&yi, &m)) in y.iter().zip(&mq).enumerate() {
        if m > 0.0 {
            conj += m * conjugate_at(div, mdp, i, yi)?;
        }
    }
    let init = beta * (1.0 - mdp.gamma()) * dot(&initial_weights(mdp, policy), s_table);
    // The data term is skipped outright at beta = 1.
    let data = if beta < 1.0 { (1.0 - beta) * dot(&problem.rho, &y) } else { 0.0 };
    Ok(init + conj - data)
}

/// Gradient of [`dual_objective_general`] in `S` with `pi` held fixed.
pub fn dual_gradient_general(
    problem: &MixtureProblem,
    div: &dyn Divergence,
    s_table: &[f64],
    policy: &Policy,
) -> Result<Vec<f64>> {
    check_scores(problem, s_table, policy)?;
    let mdp = &problem.mdp;
    let beta = problem.beta();
    let y = td_residual(mdp, policy, s_table);
    let mq = problem.mixed_target();
    let mut u = vec![0.0; y.len()];
    for i in 0..y.len() {
        if mq[i] > 0.0 {
            conjugate_at(div, mdp, i, y[i])?;
            u[i] = mq[i] * div.conjugate_derivative(y[i])?;
        }
        u[i] -= (1.0 - beta) * problem.rho[i];
    }
    let mut grad = td_residual_adjoint(mdp, policy, &u);
    let scale = beta * (1.0 - mdp.gamma());
    for (gi, ci) in grad.iter_mut().zip(initial_weights(mdp, policy)) {
        *gi += scale * ci;
    }
    Ok(grad)
}

/// Contrastive chi-square form
/// `beta (1-gamma) E_{d0,pi}[S] + beta gamma E_q[P^pi S] - beta E_q[S] + 0.25 E_{Mix(q,rho)}[y^2]`.
pub fn dual_objective_chi2(problem: &MixtureProblem, s_table: &[f64], policy: &Policy) -> Result<f64> {
    check_scores(problem, s_table, policy)?;
    let mdp = &problem.mdp;
    let (beta, gamma) = (problem.beta(), mdp.gamma());
    let next = next_score_expectation(mdp, policy, s_table);
    let mq = problem.mixed_target();
    let init = beta * (1.0 - gamma) * dot(&initial_weights(mdp, policy), s_table);
    let pull_next = beta * gamma * dot(&problem.q, &next);
    let push = beta * dot(&problem.q, s_table);
    let smooth: f64 = (0..next.len())
        .map(|i| {
            let y = gamma * next[i] - s_table[i];
            mq[i] * y * y
        })
        .sum();
    Ok(init + pull_next - push + 0.25 * smooth)
}

/// Reverse-KL form after the telescoping step, as printed:
/// `E_rho[beta (1-gamma) E_{a~pi} S + (1-beta) E_{a~rho} S] + E_{Mix(q,rho)}[exp(y)]`.
///
/// The first expectation is over the `(s, g)` marginal of `rho`.
pub fn dual_objective_kl(problem: &MixtureProblem, s_table: &[f64], policy: &Policy) -> Result<f64> {
    check_scores(problem, s_table, policy)?;
    let mdp = &problem.mdp;
    let (beta, gamma) = (problem.beta(), mdp.gamma());
    let y = td_residual(mdp, policy, s_table);
    if let Some(i) = y.iter().position(|&v| v > KL_EXPONENT_LIMIT) {
        let (s, a, g) = locate(mdp, i);
        return Err(Error::Numerical(format!(
            "residual {} at (s={s}, a={a}, g={g}) overflows the exponential; normalize the scores",
            y[i]
        )));
    }
    let rho_sg = state_goal_marginal(mdp, &problem.rho);
    let on_policy = dot(&rho_sg_policy_weights(mdp, policy, &rho_sg), s_table);
    let data = dot(&problem.rho, s_table);
    let mq = problem.mixed_target();
    let exp_term: f64 = mq.iter().zip(&y).map(|(m, v)| m * v.exp()).sum();
    Ok(beta * (1.0 - gamma) * on_policy + (1.0 - beta) * data + exp_term)
}

/// Reverse-KL form before telescoping, as printed:
/// `beta (1-gamma) E_{d0,pi}[S] + E_{Mix(q,rho)}[exp(y)] - (1-beta) E_rho[y]`,
/// with `d0(s) q_train(g)` replaced by the `(s, g)` marginal of `rho`.
pub fn dual_objective_kl_untelescoped(problem: &MixtureProblem, s_table: &[f64], policy: &Policy) -> Result<f64> {
    check_scores(problem, s_table, policy)?;
    let mdp = &problem.mdp;
    let (beta, gamma) = (problem.beta(), mdp.gamma());
    let y = td_residual(mdp, policy, s_table);
    let rho_sg = state_goal_marginal(mdp, &problem.rho);
    let init = beta * (1.0 - gamma) * dot(&rho_sg_policy_weights(mdp, policy, &rho_sg), s_table);
    let mq = problem.mixed_target();
    let exp_term: f64 = mq.iter().zip(&y).map(|(m, v)| m * v.exp()).sum();
    Ok(init + exp_term - (1.0 - beta) * dot(&problem.rho, &y))
}

/// `sum_a rho(s,a,g)` as an `[s][g]` table.
pub fn state_goal_marginal(mdp: &GoalMdp, joint: &[f64]) -> Vec<f64> {
    let ng = mdp.n_goals();
    let mut m = vec![0.0; mdp.n_states() * ng];
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for g in 0..ng {
                m[s * ng + g] += joint[mdp.sag(s, a, g)];
            }
        }
    }
    m
}

fn rho_sg_policy_weights(mdp: &GoalMdp, policy: &Policy, rho_sg: &[f64]) -> Vec<f64> {
    let ng = mdp.n_goals();
    let mut w = vec![0.0; mdp.sag_len()];
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for g in 0..ng {
                w[mdp.sag(s, a, g)] = rho_sg[s * ng + g] * policy.prob(g, s, a);
            }
        }
    }
    w
}

/// `max(0, (f')^{-1}(y))`.
pub fn closed_form_weight(div: &dyn Divergence, y: f64) -> Result<f64> {
    Ok(div.derivative_inverse(y)?.max(0.0))
}

/// `w* y - f(w*)`, the inner maximum over `w >= 0` of `w y - f(w)`.
pub fn inner_maximum(div: &dyn Divergence, y: f64) -> Result<f64> {
    let w = closed_form_weight(div, y)?;
    Ok(w * y - div.generator(w)?)
}

/// Action-free dual
/// `beta (1-gamma) E_{d0}[V] + E_{Mix(q,rho)}[w* y - f(w*)] - (1-beta) E_rho[y]`.
pub fn action_free_dual_objective(problem: &MixtureProblem, div: &dyn Divergence, v: &[f64]) -> Result<f64> {
    let mdp = &problem.mdp;
    check_values(mdp, v)?;
    let beta = problem.beta();
    let y = action_free_residual(mdp, v);
    let mq = problem.mixed_target();
    let mut inner = 0.0;
    for i in 0..y.len() {
        if mq[i] > 0.0 {
            inner += mq[i] * inner_maximum(div, y[i])?;
        }
    }
    let init = beta * (1.0 - mdp.gamma()) * dot(&initial_state_goal(mdp), v);
    let data = if beta < 1.0 { (1.0 - beta) * dot(&problem.rho, &y) } else { 0.0 };
    Ok(init + inner - data)
}

/// Gradient of [`action_free_dual_objective`]; the inner maximum has
/// derivative `w*` in `y`.
pub fn action_free_dual_gradient(problem: &MixtureProblem, div: &dyn Divergence, v: &[f64]) -> Result<Vec<f64>> {
    let mdp = &problem.mdp;
    check_values(mdp, v)?;
    let beta = problem.beta();
    let y = action_free_residual(mdp, v);
    let mq = problem.mixed_target();
    let mut u = vec![0.0; y.len()];
    for i in 0..y.len() {
        if mq[i] > 0.0 {
            u[i] = mq[i] * closed_form_weight(div, y[i])?;
        }
        u[i] -= (1.0 - beta) * problem.rho[i];
    }
    let mut grad = action_free_residual_adjoint(mdp, &u);
    let scale = beta * (1.0 - mdp.gamma());
    for (gi, ci) in grad.iter_mut().zip(initial_state_goal(mdp)) {
        *gi += scale * ci;
    }
    Ok(grad)
}

fn check_values(mdp: &GoalMdp, v: &[f64]) -> Result<()> {
    if v.len() != mdp.n_states() * mdp.n_goals() {
        return Err(Error::shape("value table needs one entry per (state, goal)"));
    }
    Ok(())
}

/// `d0(s) q_train(g)` as an `[s][g]` table.
fn initial_state_goal(mdp: &GoalMdp) -> Vec<f64> {
    let ng = mdp.n_goals();
    let mut w = vec![0.0; mdp.n_states() * ng];
    for s in 0..mdp.n_states() {
        for g in 0..ng {
            w[s * ng + g] = mdp.initial()[s] * mdp.q_train()[g];
        }
    }
    w
}

/// Primal occupancy implied by action-free values through the optimality
/// conditions `beta d + (1-beta) rho = w* Mix(q,rho)`, clipped at zero.
pub fn action_free_occupancy(problem: &MixtureProblem, div: &dyn Divergence, v: &[f64]) -> Result<Vec<f64>> {
    let mdp = &problem.mdp;
    check_values(mdp, v)?;
    let beta = problem.beta();
    let y = action_free_residual(mdp, v);
    let mq = problem.mixed_target();
    (0..y.len())
        .map(|i| {
            let w = if mq[i] > 0.0 { closed_form_weight(div, y[i])? } else { 0.0 };
            Ok(((w * mq[i] - (1.0 - beta) * problem.rho[i]) / beta).max(0.0))
        })
        .collect()
}

/// The default divergence of the tabular solvers.
pub const DEFAULT_DIVERGENCE: FDivergence = FDivergence::Chi2;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_chain, random_mdp, solve_occupancy};
    use crate::occupancy::uniform_active_rho;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, beta: f64) -> MixtureProblem {
        let mdp = random_mdp(rng, 5, 2, 2, 0.8).unwrap();
        let mut rho: Vec<f64> = (0..mdp.sag_len()).map(|_| rng.gen::<f64>()).collect();
        crate::mdp::normalize(&mut rho);
        MixtureProblem::new(mdp, rho, beta).unwrap()
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_scores_give_zero_chi2_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 0.5);
        let pi = Policy::random(&p.mdp, &mut rng);
        let zeros = vec![0.0; p.mdp.sag_len()];
        assert_eq!(dual_objective_general(&p, &FDivergence::Chi2, &zeros, &pi).unwrap(), 0.0);
        assert_eq!(dual_objective_chi2(&p, &zeros, &pi).unwrap(), 0.0);
        assert!((dual_objective_kl(&p, &zeros, &pi).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_scores_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_problem(&mut rng, 0.7);
        let pi = Policy::random(&p.mdp, &mut rng);
        let gamma = p.mdp.gamma();
        for c in [-2.0, 0.5, 3.0] {
            let s = vec![c; p.mdp.sag_len()];
            let y = -c * (1.0 - gamma);
            let expected = 0.7 * (1.0 - gamma) * c + (y + y * y / 4.0) - 0.3 * y;
            let got = dual_objective_general(&p, &FDivergence::Chi2, &s, &pi).unwrap();
            assert!((got - expected).abs() < 1e-12, "c = {c}");
        }
    }

    #[test]
    fn chi2_form_equals_general_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let beta = rng.gen_range(0.05..=1.0);
            let p = random_problem(&mut rng, beta);
            let pi = Policy::random(&p.mdp, &mut rng);
            let s = random_scores(&mut rng, p.mdp.sag_len());
            let a = dual_objective_chi2(&p, &s, &pi).unwrap();
            let b = dual_objective_general(&p, &FDivergence::Chi2, &s, &pi).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn raising_scores_on_target_support_lowers_push_term() {
        let mdp = build_chain(3).unwrap().with_q_train(vec![0.0, 0.0, 1.0]).unwrap();
        let p = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        let s: Vec<f64> = vec![0.0; mdp.sag_len()];
        let c = 0.3;
        let bumped: Vec<f64> = s.iter().zip(&p.q).map(|(&x, &q)| if q > 0.0 { x + c } else { x }).collect();
        let push = |t: &[f64]| -p.beta() * dot(&p.q, t);
        assert!((push(&bumped) - push(&s) + p.beta() * c).abs() < 1e-15);
    }

    #[test]
    fn beta_one_drops_data_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 1.0);
        let mut other = p.clone();
        other.rho.reverse();
        let pi = Policy::random(&p.mdp, &mut rng);
        let s = random_scores(&mut rng, p.mdp.sag_len());
        let a = dual_objective_general(&p, &FDivergence::Chi2, &s, &pi).unwrap();
        let b = dual_objective_general(&other, &FDivergence::Chi2, &s, &pi).unwrap();
        assert_eq!(a, b);
        let kl_a = dual_objective_kl(&p, &s, &pi).unwrap();
        let kl_b = dual_objective_kl_untelescoped(&p, &s, &pi).unwrap();
        assert!((kl_a - kl_b).abs() < 1e-10);
    }

    #[test]
    fn telescoping_holds_for_on_policy_data() {
        // When rho is the occupancy of pi from d0, the data term telescopes to
        // the discounted initial term: E_rho[S - gamma P^pi S] = (1-gamma) E_{d0,pi}[S].
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, 6, 3, 2, 0.9).unwrap();
            let pi = Policy::random(&mdp, &mut rng);
            let rho = solve_occupancy(&mdp, &pi).unwrap().d;
            let s = random_scores(&mut rng, mdp.sag_len());
            let y = td_residual(&mdp, &pi, &s);
            let lhs = -dot(&rho, &y);
            let rhs = (1.0 - mdp.gamma()) * dot(&initial_weights(&mdp, &pi), &s);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_overflow_guard() {
        let mdp = build_chain(2).unwrap();
        let p = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        let pi = Policy::uniform(&mdp);
        let mut s = vec![0.0; mdp.sag_len()];
        s[0] = -100.0;
        assert!(matches!(dual_objective_kl(&p, &s, &pi), Err(Error::Numerical(_))));
    }

    #[test]
    fn conjugate_domain_violation_is_located() {
        let mdp = build_chain(2).unwrap();
        let p = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        let pi = Policy::uniform(&mdp);
        let mut s = vec![0.0; mdp.sag_len()];
        // y(1,0,1) = 0.6 leaves [-1/2, 1/2]; predecessors see only -0.27.
        let i = mdp.sag(1, 0, 1);
        s[i] = -0.6;
        match dual_objective_general(&p, &FDivergence::TotalVariation, &s, &pi) {
            Err(Error::ConjugateDomain { s: st, a, g, .. }) => assert_eq!((st, a, g), (1, 0, 1)),
            other => panic!("expected a located domain error, got {other:?}"),
        }
    }

    #[test]
    fn adjoints_are_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = random_mdp(&mut rng, 5, 3, 2, 0.9).unwrap();
        let pi = Policy::random(&mdp, &mut rng);
        let s = random_scores(&mut rng, mdp.sag_len());
        let u = random_scores(&mut rng, mdp.sag_len());
        let lhs = dot(&u, &td_residual(&mdp, &pi, &s));
        let rhs = dot(&td_residual_adjoint(&mdp, &pi, &u), &s);
        assert!((lhs - rhs).abs() < 1e-12);
        let v = random_scores(&mut rng, mdp.n_states() * mdp.n_goals());
        let lhs = dot(&u, &action_free_residual(&mdp, &v));
        let rhs = dot(&action_free_residual_adjoint(&mdp, &u), &v);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_problem(&mut rng, 0.6);
        let pi = Policy::random(&p.mdp, &mut rng);
        let h = 1e-6;
        for div in [FDivergence::Chi2, FDivergence::KlReverse] {
            let s = random_scores(&mut rng, p.mdp.sag_len());
            let grad = dual_gradient_general(&p, &div, &s, &pi).unwrap();
            for i in 0..s.len() {
                let mut hi = s.clone();
                let mut lo = s.clone();
                hi[i] += h;
                lo[i] -= h;
                let fd = (dual_objective_general(&p, &div, &hi, &pi).unwrap()
                    - dual_objective_general(&p, &div, &lo, &pi).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "{div} entry {i}");
            }
            let v = random_scores(&mut rng, p.mdp.n_states() * p.mdp.n_goals());
            let grad = action_free_dual_gradient(&p, &div, &v).unwrap();
            for i in 0..v.len() {
                let mut hi = v.clone();
                let mut lo = v.clone();
                hi[i] += h;
                lo[i] -= h;
                let fd = (action_free_dual_objective(&p, &div, &hi).unwrap()
                    - action_free_dual_objective(&p, &div, &lo).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "{div} value entry {i}");
            }
        }
    }

    #[test]
    fn closed_form_weight_examples() {
        let chi2 = FDivergence::Chi2;
        assert_eq!(closed_form_weight(&chi2, 0.0).unwrap(), 1.0);
        assert_eq!(closed_form_weight(&chi2, -4.0).unwrap(), 0.0);
        assert_eq!(closed_form_weight(&chi2, 2.0).unwrap(), 2.0);
        assert!(closed_form_weight(&FDivergence::TotalVariation, 0.1).is_err());
    }

    #[test]
    fn action_free_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_problem(&mut rng, 0.5);
        let v = vec![0.0; p.mdp.n_states() * p.mdp.n_goals()];
        assert_eq!(action_free_dual_objective(&p, &FDivergence::Chi2, &v).unwrap(), 0.0);
    }

    #[test]
    fn action_free_terms_match_grid_inner_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(&mut rng, 0.5);
        let v = random_scores(&mut rng, p.mdp.n_states() * p.mdp.n_goals());
        let y = action_free_residual(&p.mdp, &v);
        let grid: Vec<f64> = (0..=500_000).map(|k| k as f64 * 1e-4).collect();
        for &yi in &y {
            let brute = grid
                .iter()
                .map(|&w| w * yi - FDivergence::Chi2.generator(w).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((brute - inner_maximum(&FDivergence::Chi2, yi).unwrap()).abs() < 1e-6);
        }
    }
}
