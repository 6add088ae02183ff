use serde::{Deserialize, Serialize};

use super::{extract_policy_from_occupancy, mixture_divergence, MixtureProblem};
use crate::divergence::Divergence;
use crate::error::Result;
use crate::mdp::{greedy_q_iteration, occupancy_of_actions, OccupancyTensor, Policy};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrankWolfeConfig {
    pub max_iters: usize,
    pub gap_tol: f64,
    /// Interval width at which the golden-section search stops.
    pub line_search_tol: f64,
}

impl Default for FrankWolfeConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            gap_tol: 1e-9,
            line_search_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub occupancy: OccupancyTensor,
    /// Smoothed mixture divergence at `occupancy`.
    pub objective: f64,
    /// Unsmoothed value; `None` on a support violation.
    pub raw_objective: Option<f64>,
    pub policy: Policy,
    pub iterations: usize,
    /// Frank-Wolfe gap at termination; upper-bounds suboptimality.
    pub duality_gap_certificate: f64,
    pub converged: bool,
    pub objective_history: Vec<f64>,
}

struct Vertex {
    /// Greedy action per (active goal, state).
    key: Vec<usize>,
    d: Vec<f64>,
    weight: f64,
}

/// Linear minimization over the action-free flow polytope: each goal with
/// training weight solves its own MDP with reward `-grad`.
fn lmo(problem: &MixtureProblem, grad: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mdp = &problem.mdp;
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let mut key = Vec::new();
    let mut v = vec![0.0; mdp.sag_len()];
    let mut reward = vec![0.0; ns * na];
    for g in 0..ng {
        let w = mdp.q_train()[g];
        if w <= 0.0 {
            continue;
        }
        for s in 0..ns {
            for a in 0..na {
                reward[s * na + a] = -grad[mdp.sag(s, a, g)];
            }
        }
        let sol = greedy_q_iteration(mdp, &reward, 1e-13, 1_000_000);
        let d = occupancy_of_actions(mdp, &sol.actions)?;
        for s in 0..ns {
            for a in 0..na {
                v[mdp.sag(s, a, g)] = w * d[s * na + a];
            }
        }
        key.extend(sol.actions);
    }
    Ok((key, v))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizer of a unimodal `f` on `[0, hi]`, compared against both ends.
fn line_search(f: impl Fn(f64) -> Result<f64>, hi: f64, tol: f64) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (0.0, f(0.0)?);
    for t in [mid, hi] {
        let v = f(t)?;
        if v < best.1 {
            best = (t, v);
        }
    }
    Ok(best)
}

/// Pairwise Frank-Wolfe on the smoothed mixture divergence over the
/// action-free Bellman-flow polytope.
pub fn frank_wolfe_primal(
    problem: &MixtureProblem,
    div: &dyn Divergence,
    config: &FrankWolfeConfig,
) -> Result<PrimalSolution> {
    let mdp = &problem.mdp;
    let n = mdp.sag_len();

    let start_grad = problem.gradient(div, &vec![0.0; n])?;
    let (key, v0) = lmo(problem, &start_grad)?;
    let mut active = vec![Vertex {
        key,
        d: v0.clone(),
        weight: 1.0,
    }];
    let mut d = v0;
    let mut objective = problem.objective(div, &d)?;
    let mut history = vec![objective];
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut dir = vec![0.0; n];

    while iterations < config.max_iters {
        let grad = problem.gradient(div, &d)?;
        let (key, v) = lmo(problem, &grad)?;
        gap = dot(&grad, &d) - dot(&grad, &v);
        if gap <= config.gap_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let away = (0..active.len())
            .max_by(|&i, &j| dot(&grad, &active[i].d).total_cmp(&dot(&grad, &active[j].d)))
            .expect("active set is never empty");
        if active[away].key == key {
            // Every active vertex is tied with the LMO vertex.
            break;
        }
        for i in 0..n {
            dir[i] = v[i] - active[away].d[i];
        }
        let t_max = active[away].weight;
        let (t, value) = line_search(
            |t| {
                let x: Vec<f64> = d.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                problem.objective(div, &x)
            },
            t_max,
            config.line_search_tol,
        )?;
        if t == 0.0 {
            // No decrease is resolvable at this precision.
            break;
        }
        for i in 0..n {
            d[i] += t * dir[i];
        }
        objective = value;
        history.push(objective);

        if t >= t_max {
            active.swap_remove(away);
        } else {
            active[away].weight -= t;
        }
        match active.iter_mut().find(|x| x.key == key) {
            Some(x) => x.weight += t,
            None => active.push(Vertex { key, d: v, weight: t }),
        }
    }

    let raw_objective = mixture_divergence(
        div,
        &d.iter().map(|&x| x.max(0.0)).collect::<Vec<_>>(),
        &problem.q,
        &problem.rho,
        problem.beta(),
    )
    .ok();
    let occupancy = OccupancyTensor {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        n_goals: mdp.n_goals(),
        d,
    };
    let policy = extract_policy_from_occupancy(&occupancy);
    Ok(PrimalSolution {
        occupancy,
        objective,
        raw_objective,
        policy,
        iterations,
        duality_gap_certificate: gap.max(0.0),
        converged,
        objective_history: history,
    })
}
