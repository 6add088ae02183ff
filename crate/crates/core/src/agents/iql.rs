//! Implicit Q-learning on the sparse goal reward with hindsight relabeling.
//!
//! Critic order: `[Q, V, Q_target]`.

use rand::Rng;

use super::losses::{awr_weights, expectile_loss, weighted_nll};
use super::{actions, column, gather, next_goal, scatter, state_goal, Agent, AgentConfig, Features, StepLosses};
use crate::data::{sample_batch, GoalSample, OfflineDataset};
use crate::error::Result;
use crate::mdp::GoalMdp;
use crate::nn::{DenseNet, Real};

pub const Q_NET: usize = 0;
pub const V_NET: usize = 1;
pub const Q_TARGET: usize = 2;

pub(crate) fn init_critics<R: Rng + ?Sized>(f: &Features, c: &AgentConfig, rng: &mut R) -> Result<Vec<DenseNet<f32>>> {
    let q = DenseNet::new(&f.net_sizes(&c.hidden, f.n_actions), rng)?;
    let v = DenseNet::new(&f.net_sizes(&c.hidden, 1), rng)?;
    Ok(vec![q.clone(), v, q])
}

fn reward<T: Real>(phi: &[usize], b: &GoalSample) -> T {
    if phi[b.s_next] == b.g {
        T::one()
    } else {
        T::zero()
    }
}

/// Expectile regression of `V(s, g)` onto the target critic's in-sample `Q`.
pub fn value_objective<T: Real>(
    q_target: &DenseNet<T>,
    v_net: &DenseNet<T>,
    f: &Features,
    tau: f64,
    rho: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let x = f.encode::<T>(state_goal(rho));
    let target = gather(&q_target.forward(&x)?, &actions(rho));
    let tape = v_net.forward_train(&x)?;
    let (loss, d) = expectile_loss(tape.output().data(), &target, T::of(tau));
    let mut grad = vec![T::zero(); v_net.n_params()];
    v_net.backward(&tape, &column(d), &mut grad, false)?;
    Ok((loss, grad))
}

/// Squared error of `Q(s, a, g)` against `r + gamma V(s', g)`.
pub fn q_objective<T: Real>(
    q_net: &DenseNet<T>,
    v_net: &DenseNet<T>,
    f: &Features,
    phi: &[usize],
    gamma: f64,
    rho: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let a = actions(rho);
    let v_next = v_net.forward(&f.encode::<T>(next_goal(rho)))?;
    let tape = q_net.forward_train(&f.encode::<T>(state_goal(rho)))?;
    let pred = gather(tape.output(), &a);
    let n = T::of(rho.len() as f64);
    let mut loss = T::zero();
    let d: Vec<T> = rho
        .iter()
        .zip(&pred)
        .zip(v_next.data())
        .map(|((b, &p), &v)| {
            let u = p - (reward::<T>(phi, b) + T::of(gamma) * v);
            loss += u * u / n;
            T::of(2.0) * u / n
        })
        .collect();
    let mut grad = vec![T::zero(); q_net.n_params()];
    q_net.backward(&tape, &scatter(&d, &a, f.n_actions), &mut grad, false)?;
    Ok((loss, grad))
}

/// Advantage-weighted regression with `A = Q_target - V`.
pub fn policy_objective<T: Real>(
    q_target: &DenseNet<T>,
    v_net: &DenseNet<T>,
    pi_net: &DenseNet<T>,
    f: &Features,
    alpha: f64,
    clip: f64,
    rho: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let x = f.encode::<T>(state_goal(rho));
    let a = actions(rho);
    let q = gather(&q_target.forward(&x)?, &a);
    let v = v_net.forward(&x)?;
    let adv: Vec<T> = q.iter().zip(v.data()).map(|(&q, &v)| q - v).collect();
    let w = awr_weights(&adv, T::of(alpha), T::of(clip));
    let tape = pi_net.forward_train(&x)?;
    let (loss, d) = weighted_nll(tape.output(), &a, &w);
    let mut grad = vec![T::zero(); pi_net.n_params()];
    pi_net.backward(&tape, &d, &mut grad, false)?;
    Ok((loss, grad))
}

pub(crate) fn train_step<R: Rng + ?Sized>(
    agent: &mut Agent,
    mdp: &GoalMdp,
    data: &OfflineDataset,
    rng: &mut R,
) -> Result<StepLosses> {
    let c = agent.config.clone();
    let f = agent.features;
    let rho = sample_batch(data, c.batch_size, c.her_ratio, rng)?;
    let lr = agent.cosine_lr(agent.steps_done());

    let (v_loss, g) = value_objective(&agent.critics[Q_TARGET], &agent.critics[V_NET], &f, c.expectile, &rho)?;
    agent.update_critic(V_NET, &g, lr)?;
    let (q_loss, g) = q_objective(&agent.critics[Q_NET], &agent.critics[V_NET], &f, mdp.phi(), c.gamma, &rho)?;
    agent.update_critic(Q_NET, &g, lr)?;
    let (pi_loss, g) = policy_objective(
        &agent.critics[Q_TARGET],
        &agent.critics[V_NET],
        &agent.policy,
        &f,
        c.awr_temperature,
        c.weight_clip,
        &rho,
    )?;
    agent.update_policy(&g, lr)?;

    let (q, target) = {
        let (head, tail) = agent.critics.split_at_mut(Q_TARGET);
        (&head[Q_NET], &mut tail[0])
    };
    target.blend_from(q, c.target_update as f32);
    Ok(vec![("value", v_loss as f64), ("q", q_loss as f64), ("policy", pi_loss as f64)])
}
