//! Numeric checks of the links between occupancy matching and reward
//! maximization.

use serde::{Deserialize, Serialize};

use super::mixture;
use crate::divergence::{divergence_raw, FDivergence};
use crate::error::{Error, Result};
use crate::mdp::{goal_transition_distribution_with, solve_occupancy, GoalMdp, GoalTransitionKind, Policy};

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `q ∝ exp(alpha r)` over every tuple, with its log partition function.
pub fn soft_goal_transition(mdp: &GoalMdp, alpha: f64) -> Result<(Vec<f64>, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha {alpha} must be positive")));
    }
    let log_z = mdp.reward_tensor().iter().map(|&r| (alpha * r).exp()).sum::<f64>().ln();
    let q = goal_transition_distribution_with(mdp, GoalTransitionKind::Soft { alpha })?.q;
    Ok((q, log_z))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyBoundCheck {
    pub alpha: f64,
    /// `E_d[r]`.
    pub reward: f64,
    pub entropy: f64,
    pub kl: f64,
    pub chi2: f64,
    /// `log Z / alpha`.
    pub constant: f64,
    /// `J + H / alpha`.
    pub lhs: f64,
    /// `-KL / alpha + C`; equals `lhs`.
    pub rhs_kl: f64,
    /// `-chi2 / alpha + C`; at most `lhs`.
    pub rhs_chi2: f64,
}

/// Entropy-regularized return against soft-target matching for `policy`.
pub fn entropy_bound_check(mdp: &GoalMdp, policy: &Policy, alpha: f64) -> Result<EntropyBoundCheck> {
    let (q, log_z) = soft_goal_transition(mdp, alpha)?;
    let d = solve_occupancy(mdp, policy)?.d;
    let r = mdp.reward_tensor();
    let reward: f64 = d.iter().zip(&r).map(|(a, b)| a * b).sum();
    let h = entropy(&d);
    let kl = divergence_raw(&FDivergence::KlReverse, &d, &q)?;
    let chi2 = divergence_raw(&FDivergence::Chi2, &d, &q)?;
    let constant = log_z / alpha;
    Ok(EntropyBoundCheck {
        alpha,
        reward,
        entropy: h,
        kl,
        chi2,
        constant,
        lhs: reward + h / alpha,
        rhs_kl: -kl / alpha + constant,
        rhs_chi2: -chi2 / alpha + constant,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetBoundCheck {
    pub beta: f64,
    /// `log E_{Mix(d, rho)}[beta e^r + (1 - beta) rho Z]`.
    pub log_j: f64,
    /// Entropy of `Mix(d, rho)`.
    pub entropy: f64,
    pub log_z: f64,
    pub kl: f64,
    pub chi2: f64,
    /// `log J + H - log Z + KL`; zero gap in Jensen's step only.
    pub slack_tight: f64,
    /// `log J + H + chi2`.
    pub slack_chi2: f64,
    /// `log J + H + log Z + KL`.
    pub slack_plus_log_z: f64,
}

/// Dataset-regularized objective against mixture matching, `alpha = 1`.
pub fn dataset_bound_check(mdp: &GoalMdp, policy: &Policy, rho: &[f64], beta: f64) -> Result<DatasetBoundCheck> {
    let (q, log_z) = soft_goal_transition(mdp, 1.0)?;
    let z = log_z.exp();
    let d = solve_occupancy(mdp, policy)?.d;
    let md = mixture(beta, &d, rho)?;
    let mq = mixture(beta, &q, rho)?;
    let r = mdp.reward_tensor();
    let j: f64 = md
        .iter()
        .zip(r.iter().zip(rho))
        .map(|(&m, (&ri, &p))| m * (beta * ri.exp() + (1.0 - beta) * p * z))
        .sum();
    let log_j = j.ln();
    let h = entropy(&md);
    let kl = divergence_raw(&FDivergence::KlReverse, &md, &mq)?;
    let chi2 = divergence_raw(&FDivergence::Chi2, &md, &mq)?;
    Ok(DatasetBoundCheck {
        beta,
        log_j,
        entropy: h,
        log_z,
        kl,
        chi2,
        slack_tight: log_j + h - log_z + kl,
        slack_chi2: log_j + h + chi2,
        slack_plus_log_z: log_j + h + log_z + kl,
    })
}
