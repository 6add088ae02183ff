//! Discriminator-based baseline: a logistic classifier supplies the reward,
//! a value function minimizes the chi-square dual, and the policy regresses
//! onto the closed-form weights.
//!
//! Critic order: `[discriminator, V]`.

use rand::Rng;

use super::losses::{chi2_inner, logistic_loss, weighted_nll};
use super::{actions, column, next_goal, state_goal, Agent, AgentConfig, Features, StepLosses};
use crate::data::{sample_batch, sample_goal_transition, GoalSample, OfflineDataset};
use crate::error::Result;
use crate::nn::{DenseNet, Matrix, Real};

pub const DISCRIMINATOR: usize = 0;
pub const V_NET: usize = 1;

pub(crate) fn init_critics<R: Rng + ?Sized>(f: &Features, c: &AgentConfig, rng: &mut R) -> Result<Vec<DenseNet<f32>>> {
    Ok(vec![
        DenseNet::new(&f.net_sizes(&c.hidden, 1), rng)?,
        DenseNet::new(&f.net_sizes(&c.hidden, 1), rng)?,
    ])
}

/// Separates goal-reaching pairs `(s', g)` (label 1) from data pairs `(s, g)`.
pub fn discriminator_objective<T: Real>(
    disc: &DenseNet<T>,
    f: &Features,
    reaching: &[GoalSample],
    data: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let pairs: Vec<(usize, usize)> = next_goal(reaching).chain(state_goal(data)).collect();
    let labels: Vec<bool> = (0..pairs.len()).map(|i| i < reaching.len()).collect();
    let tape = disc.forward_train(&f.encode::<T>(pairs.into_iter()))?;
    let (loss, d) = logistic_loss(tape.output().data(), &labels);
    let mut grad = vec![T::zero(); disc.n_params()];
    disc.backward(&tape, &column(d), &mut grad, false)?;
    Ok((loss, grad))
}

/// `log c / (1 - c)` at `(s', g)`, clipped to `[-clip, clip]`.
pub fn pseudo_reward<T: Real>(disc: &DenseNet<T>, f: &Features, clip: f64, rho: &[GoalSample]) -> Result<Vec<T>> {
    let c = T::of(clip);
    Ok(disc.forward(&f.encode::<T>(next_goal(rho)))?.data().iter().map(|&z| z.max(-c).min(c)).collect())
}

/// Residuals `y = R + gamma V(s') - V(s)` with the tapes of both `V` passes.
fn residuals<T: Real>(
    v_net: &DenseNet<T>,
    f: &Features,
    gamma: f64,
    reward: &[T],
    rho: &[GoalSample],
) -> Result<(Vec<T>, crate::nn::Tape<T>, crate::nn::Tape<T>)> {
    let now = v_net.forward_train(&f.encode::<T>(state_goal(rho)))?;
    let next = v_net.forward_train(&f.encode::<T>(next_goal(rho)))?;
    let y = reward
        .iter()
        .zip(now.output().data().iter().zip(next.output().data()))
        .map(|(&r, (&v, &vn))| r + T::of(gamma) * vn - v)
        .collect();
    Ok((y, now, next))
}

/// `(1 - gamma) E[V(s)] + E[max_{w >= 0} w y - f(w)]` with data states as
/// the initial distribution.
pub fn value_objective<T: Real>(
    v_net: &DenseNet<T>,
    f: &Features,
    gamma: f64,
    reward: &[T],
    rho: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let n = T::of(rho.len() as f64);
    let (y, now, next) = residuals(v_net, f, gamma, reward, rho)?;
    let mut loss = T::zero();
    let mut d_now = Vec::with_capacity(y.len());
    let mut d_next = Vec::with_capacity(y.len());
    for (&yi, &v) in y.iter().zip(now.output().data()) {
        let (h, w) = chi2_inner(yi);
        loss += (T::of(1.0 - gamma) * v + h) / n;
        d_now.push((T::of(1.0 - gamma) - w) / n);
        d_next.push(T::of(gamma) * w / n);
    }
    let mut grad = vec![T::zero(); v_net.n_params()];
    v_net.backward(&now, &column(d_now), &mut grad, false)?;
    v_net.backward(&next, &column(d_next), &mut grad, false)?;
    Ok((loss, grad))
}

/// Weighted log-likelihood with weights `min(max(0, y/2 + 1), clip)`.
#[allow(clippy::too_many_arguments)]
pub fn policy_objective<T: Real>(
    v_net: &DenseNet<T>,
    pi_net: &DenseNet<T>,
    f: &Features,
    gamma: f64,
    clip: f64,
    reward: &[T],
    rho: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let (y, _, _) = residuals(v_net, f, gamma, reward, rho)?;
    let w: Vec<T> = y.iter().map(|&y| chi2_inner(y).1.min(T::of(clip))).collect();
    let x: Matrix<T> = f.encode::<T>(state_goal(rho));
    let tape = pi_net.forward_train(&x)?;
    let (loss, d) = weighted_nll(tape.output(), &actions(rho), &w);
    let mut grad = vec![T::zero(); pi_net.n_params()];
    pi_net.backward(&tape, &d, &mut grad, false)?;
    Ok((loss, grad))
}

pub(crate) fn train_step<R: Rng + ?Sized>(agent: &mut Agent, data: &OfflineDataset, rng: &mut R) -> Result<StepLosses> {
    let c = agent.config.clone();
    let f = agent.features;
    let rho = sample_batch(data, c.batch_size, c.her_ratio, rng)?;
    if agent.steps_done() < c.discriminator_steps {
        let reaching = sample_goal_transition(data, c.her_ratio, c.batch_size, rng)?;
        let (loss, g) = discriminator_objective(&agent.critics[DISCRIMINATOR], &f, &reaching, &rho)?;
        agent.update_critic(DISCRIMINATOR, &g, c.base_lr)?;
        return Ok(vec![("discriminator", loss as f64)]);
    }
    let lr = agent.cosine_lr(agent.steps_done() - c.discriminator_steps);
    let reward = pseudo_reward(&agent.critics[DISCRIMINATOR], &f, c.reward_clip, &rho)?;
    let (v_loss, g) = value_objective(&agent.critics[V_NET], &f, c.gamma, &reward, &rho)?;
    agent.update_critic(V_NET, &g, lr)?;
    let (pi_loss, g) = policy_objective(&agent.critics[V_NET], &agent.policy, &f, c.gamma, c.weight_clip, &reward, &rho)?;
    agent.update_policy(&g, lr)?;
    Ok(vec![("value", v_loss as f64), ("policy", pi_loss as f64)])
}
