//! Mixture occupancy matching agent: a score network `S(s, a, g)` (one head
//! per action), an expectile network `M(s, g)` and an advantage-weighted
//! policy.
//!
//! Critic order: `[S, M]`.

use rand::Rng;

use super::losses::{awr_weights, expectile_loss, score_loss, softmax_rows, weighted_nll, ScoreLossInputs};
use super::{actions, column, gather, next_goal, state_goal, Agent, AgentConfig, Features, StepLosses};
use crate::data::{sample_batch, sample_goal_transition, GoalSample, OfflineDataset};
use crate::error::Result;
use crate::nn::{DenseNet, Matrix, Real};

pub const S_NET: usize = 0;
pub const M_NET: usize = 1;

pub(crate) fn init_critics<R: Rng + ?Sized>(f: &Features, c: &AgentConfig, rng: &mut R) -> Result<Vec<DenseNet<f32>>> {
    Ok(vec![
        DenseNet::new(&f.net_sizes(&c.hidden, f.n_actions), rng)?,
        DenseNet::new(&f.net_sizes(&c.hidden, 1), rng)?,
    ])
}

/// Quantities the score loss treats as constants: the policy on the data
/// batch, the policy-averaged score at goal-transition successors and the
/// `M` targets.
pub struct ScoreTargets<T> {
    pub pi_rho: Matrix<T>,
    pub s_next_q: Vec<T>,
    pub m_next_rho: Vec<T>,
    pub m_next_q: Vec<T>,
}

pub fn score_targets<T: Real>(
    s_net: &DenseNet<T>,
    m_net: &DenseNet<T>,
    pi_net: &DenseNet<T>,
    f: &Features,
    rho: &[GoalSample],
    q: &[GoalSample],
) -> Result<ScoreTargets<T>> {
    let x_q_next = f.encode::<T>(next_goal(q));
    let pi_q_next = softmax_rows(&pi_net.forward(&x_q_next)?);
    let scores = s_net.forward(&x_q_next)?;
    Ok(ScoreTargets {
        pi_rho: softmax_rows(&pi_net.forward(&f.encode::<T>(state_goal(rho)))?),
        s_next_q: (0..q.len())
            .map(|i| pi_q_next.row(i).iter().zip(scores.row(i)).map(|(&p, &s)| p * s).sum())
            .collect(),
        m_next_rho: m_net.forward(&f.encode::<T>(next_goal(rho)))?.data().to_vec(),
        m_next_q: m_net.forward(&x_q_next)?.data().to_vec(),
    })
}

/// Score loss on a data batch and a goal-transition batch, with its gradient
/// in the parameters of `s_net`.
pub fn score_objective<T: Real>(
    s_net: &DenseNet<T>,
    f: &Features,
    beta: f64,
    gamma: f64,
    rho: &[GoalSample],
    q: &[GoalSample],
    targets: &ScoreTargets<T>,
) -> Result<(T, Vec<T>)> {
    let tape_rho = s_net.forward_train(&f.encode::<T>(state_goal(rho)))?;
    let tape_q = s_net.forward_train(&f.encode::<T>(state_goal(q)))?;
    let (a_rho, a_q) = (actions(rho), actions(q));
    let inputs = ScoreLossInputs {
        beta: T::of(beta),
        gamma: T::of(gamma),
        pi_rho: &targets.pi_rho,
        a_rho: &a_rho,
        m_next_rho: &targets.m_next_rho,
        a_q: &a_q,
        s_next_q: &targets.s_next_q,
        m_next_q: &targets.m_next_q,
    };
    let out = score_loss(&inputs, tape_rho.output(), tape_q.output());
    let mut grad = vec![T::zero(); s_net.n_params()];
    s_net.backward(&tape_rho, &out.d_rho, &mut grad, false)?;
    s_net.backward(&tape_q, &out.d_q, &mut grad, false)?;
    Ok((out.loss, grad))
}

/// Expectile regression of `M(s, g)` onto the in-sample scores.
pub fn expectile_objective<T: Real>(
    s_net: &DenseNet<T>,
    m_net: &DenseNet<T>,
    f: &Features,
    tau: f64,
    rho: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let x = f.encode::<T>(state_goal(rho));
    let target = gather(&s_net.forward(&x)?, &actions(rho));
    let tape = m_net.forward_train(&x)?;
    let (loss, d) = expectile_loss(tape.output().data(), &target, T::of(tau));
    let mut grad = vec![T::zero(); m_net.n_params()];
    m_net.backward(&tape, &column(d), &mut grad, false)?;
    Ok((loss, grad))
}

/// Weighted log-likelihood with weights `min(exp(alpha (S - M)), clip)`.
#[allow(clippy::too_many_arguments)]
pub fn policy_objective<T: Real>(
    s_net: &DenseNet<T>,
    m_net: &DenseNet<T>,
    pi_net: &DenseNet<T>,
    f: &Features,
    alpha: f64,
    clip: f64,
    rho: &[GoalSample],
) -> Result<(T, Vec<T>)> {
    let x = f.encode::<T>(state_goal(rho));
    let a = actions(rho);
    let s = gather(&s_net.forward(&x)?, &a);
    let m = m_net.forward(&x)?;
    let adv: Vec<T> = s.iter().zip(m.data()).map(|(&s, &m)| s - m).collect();
    let w = awr_weights(&adv, T::of(alpha), T::of(clip));
    let tape = pi_net.forward_train(&x)?;
    let (loss, d) = weighted_nll(tape.output(), &a, &w);
    let mut grad = vec![T::zero(); pi_net.n_params()];
    pi_net.backward(&tape, &d, &mut grad, false)?;
    Ok((loss, grad))
}

/// One round of score, expectile and policy updates on fresh batches.
pub(crate) fn train_step<R: Rng + ?Sized>(agent: &mut Agent, data: &OfflineDataset, rng: &mut R) -> Result<StepLosses> {
    let c = agent.config.clone();
    let f = agent.features;
    let rho = sample_batch(data, c.batch_size, c.her_ratio, rng)?;
    let q = sample_goal_transition(data, c.her_ratio, c.batch_size, rng)?;
    let lr = agent.cosine_lr(agent.steps_done());

    let targets = score_targets(&agent.critics[S_NET], &agent.critics[M_NET], &agent.policy, &f, &rho, &q)?;
    let (s_loss, g) = score_objective(&agent.critics[S_NET], &f, c.beta, c.gamma, &rho, &q, &targets)?;
    agent.update_critic(S_NET, &g, lr)?;

    let (m_loss, g) = expectile_objective(&agent.critics[S_NET], &agent.critics[M_NET], &f, c.expectile, &rho)?;
    agent.update_critic(M_NET, &g, lr)?;

    let (pi_loss, g) = policy_objective(
        &agent.critics[S_NET],
        &agent.critics[M_NET],
        &agent.policy,
        &f,
        c.awr_temperature,
        c.weight_clip,
        &rho,
    )?;
    agent.update_policy(&g, lr)?;

    Ok(vec![("score", s_loss as f64), ("expectile", m_loss as f64), ("policy", pi_loss as f64)])
}
