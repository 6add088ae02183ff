//! Goal-conditioned supervised learning: behavior cloning on relabeled goals.

use rand::Rng;

use super::losses::weighted_nll;
use super::{actions, state_goal, Agent, Features, StepLosses};
use crate::data::{sample_batch, GoalSample, OfflineDataset};
use crate::error::Result;
use crate::nn::{DenseNet, Real};

/// Negative log-likelihood of the dataset actions.
pub fn cloning_objective<T: Real>(pi_net: &DenseNet<T>, f: &Features, rho: &[GoalSample]) -> Result<(T, Vec<T>)> {
    let tape = pi_net.forward_train(&f.encode::<T>(state_goal(rho)))?;
    let ones = vec![T::one(); rho.len()];
    let (loss, d) = weighted_nll(tape.output(), &actions(rho), &ones);
    let mut grad = vec![T::zero(); pi_net.n_params()];
    pi_net.backward(&tape, &d, &mut grad, false)?;
    Ok((loss, grad))
}

pub(crate) fn train_step<R: Rng + ?Sized>(agent: &mut Agent, data: &OfflineDataset, rng: &mut R) -> Result<StepLosses> {
    let rho = sample_batch(data, agent.config.batch_size, agent.config.her_ratio, rng)?;
    let lr = agent.cosine_lr(agent.steps_done());
    let (loss, g) = cloning_objective(&agent.policy, &agent.features, &rho)?;
    agent.update_policy(&g, lr)?;
    Ok(vec![("policy", loss as f64)])
}
