//! Mixture occupancy matching in the tabular setting.

mod bounds;
mod frank_wolfe;
mod oracle;

pub use bounds::{
    entropy_bound_check, dataset_bound_check, soft_goal_transition, EntropyBoundCheck, DatasetBoundCheck,
};
pub use frank_wolfe::{frank_wolfe_primal, FrankWolfeConfig, PrimalSolution};
pub use oracle::{exhaustive_policy_oracle, OracleSolution};

use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_raw, Divergence};
use crate::error::{Error, Result};
use crate::mdp::{goal_transition_distribution, GoalMdp, OccupancyTensor, Policy};

/// Uniform mass mixed into both sides before evaluating a divergence.
pub const SMOOTHING: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    beta: f64,
}

impl MixtureParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid(format!("beta {beta} must lie in (0, 1]")));
        }
        Ok(Self { beta })
    }

    pub fn beta(self) -> f64 {
        self.beta
    }
}

/// `beta a + (1 - beta) b`.
pub fn mixture(beta: f64, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("mixing {} with {} entries", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| beta * x + (1.0 - beta) * y).collect())
}

/// `D_f(Mix(d, rho) || Mix(q, rho))` without smoothing.
pub fn mixture_divergence(div: &dyn Divergence, d: &[f64], q: &[f64], rho: &[f64], beta: f64) -> Result<f64> {
    divergence_raw(div, &mixture(beta, d, rho)?, &mixture(beta, q, rho)?)
}

/// `(1 - eps) m + eps / n`.
pub fn smooth(m: &[f64]) -> Vec<f64> {
    let u = SMOOTHING / m.len() as f64;
    m.iter().map(|&x| (1.0 - SMOOTHING) * x + u).collect()
}

/// [`mixture_divergence`] after smoothing both mixtures.
pub fn smoothed_mixture_divergence(
    div: &dyn Divergence,
    d: &[f64],
    q: &[f64],
    rho: &[f64],
    beta: f64,
) -> Result<f64> {
    divergence_raw(div, &smooth(&mixture(beta, d, rho)?), &smooth(&mixture(beta, q, rho)?))
}

/// `rho` uniform over every `(s, a, g)` whose goal has training weight.
pub fn uniform_active_rho(mdp: &GoalMdp) -> Vec<f64> {
    let mut rho = vec![0.0; mdp.sag_len()];
    for (i, r) in rho.iter_mut().enumerate() {
        if mdp.q_train()[i % mdp.n_goals()] > 0.0 {
            *r = 1.0;
        }
    }
    let total: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|r| *r /= total);
    rho
}

/// A matching instance: MDP, target `q`, dataset joint `rho` and mixing
/// weight `beta`.
#[derive(Clone, Debug)]
pub struct MixtureProblem {
    pub mdp: GoalMdp,
    pub q: Vec<f64>,
    pub rho: Vec<f64>,
    pub params: MixtureParams,
    smoothed_mq: Vec<f64>,
}

impl MixtureProblem {
    /// Uses the hard goal-transition distribution as target.
    pub fn new(mdp: GoalMdp, rho: Vec<f64>, beta: f64) -> Result<Self> {
        let q = goal_transition_distribution(&mdp)?.q;
        Self::with_target(mdp, q, rho, beta)
    }

    pub fn with_target(mdp: GoalMdp, q: Vec<f64>, rho: Vec<f64>, beta: f64) -> Result<Self> {
        let params = MixtureParams::new(beta)?;
        let n = mdp.sag_len();
        if q.len() != n || rho.len() != n {
            return Err(Error::shape(format!(
                "q has {} and rho {} entries, the MDP needs {n}",
                q.len(),
                rho.len()
            )));
        }
        for (name, v) in [("q", &q), ("rho", &rho)] {
            if v.iter().any(|&x| !(x >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("{name} is not a distribution")));
            }
        }
        let smoothed_mq = smooth(&mixture(beta, &q, &rho)?);
        Ok(Self {
            mdp,
            q,
            rho,
            params,
            smoothed_mq,
        })
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    /// `Mix(q, rho)` without smoothing.
    pub fn mixed_target(&self) -> Vec<f64> {
        mixture(self.beta(), &self.q, &self.rho).expect("shapes checked at construction")
    }

    /// Smoothed objective at occupancy `d`.
    pub fn objective(&self, div: &dyn Divergence, d: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (i, &di) in d.iter().enumerate() {
            total += self.entry_term(div, i, di)?;
        }
        Ok(total)
    }

    /// Contribution of entry `i` to [`Self::objective`] when `d_i = di`.
    pub(crate) fn entry_term(&self, div: &dyn Divergence, i: usize, di: f64) -> Result<f64> {
        let beta = self.beta();
        let u = SMOOTHING / self.rho.len() as f64;
        let md = (1.0 - SMOOTHING) * (beta * di + (1.0 - beta) * self.rho[i]) + u;
        let mq = self.smoothed_mq[i];
        Ok(mq * div.generator(md / mq)?)
    }

    /// Gradient of [`Self::objective`] with respect to `d`.
    pub fn gradient(&self, div: &dyn Divergence, d: &[f64]) -> Result<Vec<f64>> {
        let beta = self.beta();
        let u = SMOOTHING / d.len() as f64;
        let scale = (1.0 - SMOOTHING) * beta;
        (0..d.len())
            .map(|i| {
                let md = (1.0 - SMOOTHING) * (beta * d[i] + (1.0 - beta) * self.rho[i]) + u;
                Ok(scale * div.derivative(md / self.smoothed_mq[i])?)
            })
            .collect()
    }

    /// Smoothed objective of the occupancy of `policy`.
    pub fn policy_objective(&self, div: &dyn Divergence, policy: &Policy) -> Result<f64> {
        let d = crate::mdp::solve_occupancy(&self.mdp, policy)?;
        self.objective(div, &d.d)
    }
}

/// `pi(a|s,g) = d(s,a,g) / sum_a d(s,a,g)`, uniform where the state mass is
/// below 1e-12.
pub fn extract_policy_from_occupancy(d: &OccupancyTensor) -> Policy {
    let (ns, na, ng) = (d.n_states, d.n_actions, d.n_goals);
    let mut probs = vec![1.0 / na as f64; ng * ns * na];
    for g in 0..ng {
        for s in 0..ns {
            // Solver round-off can leave entries of order -1e-17.
            let total: f64 = (0..na).map(|a| d.get(s, a, g).max(0.0)).sum();
            if total < 1e-12 {
                continue;
            }
            let row = &mut probs[(g * ns + s) * na..][..na];
            for (a, p) in row.iter_mut().enumerate() {
                *p = d.get(s, a, g).max(0.0) / total;
            }
        }
    }
    Policy::new(ng, ns, na, probs).expect("rows are normalized by construction")
}
