use serde::{Deserialize, Serialize};

use super::MixtureProblem;
use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::mdp::{occupancy_of_actions, Policy};

/// Enumeration limit on the number of deterministic policies.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSolution {
    pub policy: Policy,
    /// Smoothed mixture divergence of the best deterministic policy.
    pub objective: f64,
    pub policies_enumerated: u128,
}

/// Best deterministic goal-conditioned policy by enumeration.
///
/// Policies for goals without training weight do not affect the occupancy.
/// The objective is a sum of per-entry terms, so each trained goal is
/// enumerated separately; the minimizer is the same as that of the joint
/// enumeration.
pub fn exhaustive_policy_oracle(problem: &MixtureProblem, div: &dyn Divergence) -> Result<OracleSolution> {
    let mdp = &problem.mdp;
    let (ns, na, ng) = (mdp.n_states(), mdp.n_actions(), mdp.n_goals());
    let active: Vec<usize> = (0..ng).filter(|&g| mdp.q_train()[g] > 0.0).collect();

    let per_goal = (na as u128).checked_pow(ns as u32).unwrap_or(u128::MAX);
    let total = per_goal.checked_pow(active.len() as u32).unwrap_or(u128::MAX);
    if total > ORACLE_LIMIT {
        return Err(Error::TooLarge(total));
    }

    let mut policy = Policy::uniform(mdp);
    // Untrained goals contribute a constant.
    let mut objective = 0.0;
    for g in (0..ng).filter(|g| !active.contains(g)) {
        for s in 0..ns {
            for a in 0..na {
                let i = mdp.sag(s, a, g);
                objective += problem.entry_term(div, i, 0.0)?;
            }
        }
    }

    for &g in &active {
        let w = mdp.q_train()[g];
        let mut actions = vec![0usize; ns];
        let mut best: Option<(f64, Vec<usize>)> = None;
        loop {
            let d = occupancy_of_actions(mdp, &actions)?;
            let mut value = 0.0;
            for s in 0..ns {
                for a in 0..na {
                    value += problem.entry_term(div, mdp.sag(s, a, g), w * d[s * na + a])?;
                }
            }
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, actions.clone()));
            }
            // Odometer increment over action maps.
            let mut k = 0;
            while k < ns {
                actions[k] += 1;
                if actions[k] < na {
                    break;
                }
                actions[k] = 0;
                k += 1;
            }
            if k == ns {
                break;
            }
        }
        let (value, actions) = best.expect("at least one policy is enumerated");
        objective += value;
        policy.set_goal_actions(g, &actions);
    }

    Ok(OracleSolution {
        policy,
        objective,
        policies_enumerated: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::FDivergence;
    use crate::mdp::{build_chain, build_gridworld, random_mdp};
    use crate::occupancy::uniform_active_rho;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain2_enumerates_four_policies_and_hits_zero() {
        let mdp = build_chain(2)
            .unwrap()
            .with_gamma(0.5)
            .unwrap()
            .with_q_train(vec![0.0, 1.0])
            .unwrap();
        let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 1.0).unwrap();
        let sol = exhaustive_policy_oracle(&problem, &FDivergence::Chi2).unwrap();
        assert_eq!(sol.policies_enumerated, 4);
        assert!(sol.objective < 1e-12);
        assert_eq!(sol.policy.greedy_action(1, 0), 1);
        assert_eq!(sol.policy.greedy_action(1, 1), 1);
    }

    #[test]
    fn oracle_value_is_its_policy_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let mdp = random_mdp(&mut rng, 4, 2, 2, 0.8).unwrap();
            let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
            for div in [FDivergence::Chi2, FDivergence::KlReverse] {
                let sol = exhaustive_policy_oracle(&problem, &div).unwrap();
                let direct = problem.policy_objective(&div, &sol.policy).unwrap();
                assert!((direct - sol.objective).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refuses_large_instances() {
        let mdp = build_gridworld(3, 0.0).unwrap();
        let problem = MixtureProblem::new(mdp.clone(), uniform_active_rho(&mdp), 0.5).unwrap();
        assert!(matches!(
            exhaustive_policy_oracle(&problem, &FDivergence::Chi2),
            Err(Error::TooLarge(_))
        ));
    }
}
