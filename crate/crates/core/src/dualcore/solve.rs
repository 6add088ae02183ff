use serde::{Deserialize, Serialize};

use super::{
    action_free_dual_gradient, action_free_dual_objective, action_free_occupancy, action_free_residual,
    dual_gradient_general, dual_objective_general, MixtureProblem, ScoreTable, ValueTable,
};
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::mdp::{argmax, OccupancyTensor, Policy};
use crate::occupancy::extract_policy_from_occupancy;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualSolverConfig {
    pub steps: usize,
    pub lr: f64,
    pub policy_temperature: f64,
    /// Gradient infinity norm counted as converged.
    pub tol: f64,
}

impl Default for DualSolverConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            lr: 0.5,
            policy_temperature: 0.05,
            tol: 1e-6,
        }
    }
}

/// How the action-free solver turns values into a policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyRecovery {
    /// `beta d + (1-beta) rho = w* Mix(q, rho)`, then normalize per state.
    Occupancy,
    /// `pi(a|s,g) ∝ exp(lambda y(s,a,g))`.
    ResidualSoftmax { lambda: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActionFreeConfig {
    pub steps: usize,
    pub lr: f64,
    pub tol: f64,
    pub recovery: PolicyRecovery,
}

impl Default for ActionFreeConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            lr: 0.5,
            tol: 1e-9,
            recovery: PolicyRecovery::Occupancy,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualVariables {
    Scores(ScoreTable),
    Values(ValueTable),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualSolution {
    pub variables: DualVariables,
    /// Soft-greedy (action dual) or recovered (action-free) policy.
    pub policy: Policy,
    /// Deterministic argmax of `policy`, lowest index on ties.
    pub greedy_policy: Policy,
    pub objective: f64,
    pub converged: bool,
    pub steps: usize,
    pub gradient_norm: f64,
}

fn greedy_of(policy: &Policy) -> Policy {
    let (ng, ns, na) = (policy.n_goals(), policy.n_states(), policy.n_actions());
    let mut probs = vec![0.0; ng * ns * na];
    for g in 0..ng {
        for s in 0..ns {
            probs[(g * ns + s) * na + argmax(policy.row(g, s))] = 1.0;
        }
    }
    Policy::new(ng, ns, na, probs).expect("one-hot rows")
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gradient descent on `S` with `pi ∝ exp(S / temperature)` refreshed
/// before every step.
pub fn solve_dual_tabular(
    problem: &MixtureProblem,
    div: &dyn Divergence,
    config: &DualSolverConfig,
) -> Result<DualSolution> {
    if !matches!(div.name(), "chi2" | "kl_reverse") {
        return Err(Error::invalid(format!(
            "the tabular dual solver supports chi2 and kl_reverse, not {}",
            div.name()
        )));
    }
    if !(config.policy_temperature > 0.0) || !(config.lr > 0.0) {
        return Err(Error::invalid("temperature and learning rate must be positive"));
    }
    let mdp = &problem.mdp;
    let mut s = vec![0.0; mdp.sag_len()];
    let mut grad_norm = f64::INFINITY;
    let mut steps = 0;
    while steps < config.steps {
        let pi = Policy::softmax_of_scores(mdp, &s, config.policy_temperature);
        let grad = dual_gradient_general(problem, div, &s, &pi)?;
        grad_norm = inf_norm(&grad);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step: steps,
                detail: "non-finite dual gradient".into(),
            });
        }
        if grad_norm < config.tol {
            break;
        }
        for (x, g) in s.iter_mut().zip(&grad) {
            *x -= config.lr * g;
        }
        steps += 1;
    }
    let policy = Policy::softmax_of_scores(mdp, &s, config.policy_temperature);
    let objective = dual_objective_general(problem, div, &s, &policy)?;
    if !objective.is_finite() {
        return Err(Error::Diverged {
            step: steps,
            detail: format!("dual objective {objective}"),
        });
    }
    Ok(DualSolution {
        greedy_policy: greedy_of(&policy),
        variables: DualVariables::Scores(ScoreTable::from_vec(mdp, s)?),
        policy,
        objective,
        converged: grad_norm < config.tol,
        steps,
        gradient_norm: grad_norm,
    })
}

/// Gradient descent on the action-free dual.
pub fn solve_dual_action_free(
    problem: &MixtureProblem,
    div: &dyn Divergence,
    config: &ActionFreeConfig,
) -> Result<DualSolution> {
    let mdp = &problem.mdp;
    let mut v = vec![0.0; mdp.n_states() * mdp.n_goals()];
    let mut grad_norm = f64::INFINITY;
    let mut steps = 0;
    while steps < config.steps {
        let grad = action_free_dual_gradient(problem, div, &v)?;
        grad_norm = inf_norm(&grad);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step: steps,
                detail: "non-finite action-free gradient".into(),
            });
        }
        if grad_norm < config.tol {
            break;
        }
        for (x, g) in v.iter_mut().zip(&grad) {
            *x -= config.lr * g;
        }
        steps += 1;
    }
    let objective = action_free_dual_objective(problem, div, &v)?;
    if !objective.is_finite() {
        return Err(Error::Diverged {
            step: steps,
            detail: format!("action-free objective {objective}"),
        });
    }
    let policy = match config.recovery {
        PolicyRecovery::Occupancy => {
            let d = action_free_occupancy(problem, div, &v)?;
            extract_policy_from_occupancy(&OccupancyTensor {
                n_states: mdp.n_states(),
                n_actions: mdp.n_actions(),
                n_goals: mdp.n_goals(),
                d,
            })
        }
        PolicyRecovery::ResidualSoftmax { lambda } => {
            let y = action_free_residual(mdp, &v);
            Policy::softmax_of_scores(mdp, &y, 1.0 / lambda)
        }
    };
    Ok(DualSolution {
        greedy_policy: greedy_of(&policy),
        variables: DualVariables::Values(ValueTable::from_vec(mdp, v)?),
        policy,
        objective,
        converged: grad_norm < config.tol,
        steps,
        gradient_norm: grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::FDivergence;
    use crate::mdp::{build_chain, random_mdp, state_occupancy, GoalMdp};
    use crate::occupancy::{frank_wolfe_primal, uniform_active_rho, FrankWolfeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain3() -> GoalMdp {
        build_chain(3)
            .unwrap()
            .with_gamma(0.5)
            .unwrap()
            .with_initial(vec![0.0, 1.0, 0.0])
            .unwrap()
            .with_q_train(vec![0.0, 0.0, 1.0])
            .unwrap()
    }

    #[test]
    fn chain3_dual_policy_is_near_primal_optimum() {
        let mdp = chain3();
        let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        let fw = frank_wolfe_primal(&problem, &FDivergence::Chi2, &FrankWolfeConfig::default()).unwrap();
        let dual = solve_dual_tabular(&problem, &FDivergence::Chi2, &DualSolverConfig::default()).unwrap();
        let achieved = problem.policy_objective(&FDivergence::Chi2, &dual.policy).unwrap();
        assert!((achieved - fw.objective).abs() < 1e-2, "{achieved} vs {}", fw.objective);
    }

    #[test]
    fn single_action_policy_is_trivial() {
        let mdp = GoalMdp::new(
            2,
            1,
            2,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0],
            vec![0, 1],
            0.9,
            vec![0.5, 0.5],
            vec![0.5, 0.5],
        )
        .unwrap();
        let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        let config = DualSolverConfig {
            steps: 100,
            ..Default::default()
        };
        let sol = solve_dual_tabular(&problem, &FDivergence::Chi2, &config).unwrap();
        assert_eq!(sol.policy, Policy::uniform(&mdp));
    }

    #[test]
    fn small_steps_decrease_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, 5, 2, 2, 0.8).unwrap();
            let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
            let run = |steps| {
                let config = DualSolverConfig {
                    steps,
                    lr: 1e-2,
                    tol: 0.0,
                    ..Default::default()
                };
                solve_dual_tabular(&problem, &FDivergence::Chi2, &config).unwrap().objective
            };
            assert!(run(100) < run(0));
        }
    }

    #[test]
    fn rejects_unsupported_divergence() {
        let mdp = chain3();
        let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        assert!(solve_dual_tabular(&problem, &FDivergence::JensenShannon, &DualSolverConfig::default()).is_err());
    }

    #[test]
    fn action_free_and_action_duals_agree_on_chain() {
        let mdp = chain3();
        let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        let af = solve_dual_action_free(&problem, &FDivergence::Chi2, &ActionFreeConfig::default()).unwrap();
        let full = solve_dual_tabular(&problem, &FDivergence::Chi2, &DualSolverConfig::default()).unwrap();
        let zero = action_free_dual_objective(&problem, &FDivergence::Chi2, &[0.0; 9]).unwrap();
        assert!(af.objective <= zero + 1e-12);
        let fw = frank_wolfe_primal(&problem, &FDivergence::Chi2, &FrankWolfeConfig::default()).unwrap();
        for g in (0..3).filter(|&g| mdp.q_train()[g] > 0.0) {
            let mu = state_occupancy(&mdp, &fw.policy, g).unwrap();
            for s in (0..3).filter(|&s| mu[s] > 1e-9) {
                assert_eq!(af.greedy_policy.greedy_action(g, s), full.greedy_policy.greedy_action(g, s), "g={g} s={s}");
            }
        }
    }

    #[test]
    fn closed_form_weights_stay_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mdp = random_mdp(&mut rng, 4, 2, 2, 0.8).unwrap();
        let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        for steps in [0, 10, 100, 1000] {
            let config = ActionFreeConfig {
                steps,
                tol: 0.0,
                ..Default::default()
            };
            let sol = solve_dual_action_free(&problem, &FDivergence::Chi2, &config).unwrap();
            let DualVariables::Values(v) = &sol.variables else { unreachable!() };
            for y in action_free_residual(&mdp, &v.v) {
                assert!(super::super::closed_form_weight(&FDivergence::Chi2, y).unwrap() >= 0.0);
            }
        }
    }
}
