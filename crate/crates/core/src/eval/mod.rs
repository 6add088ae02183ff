//! Rollout metrics, multi-seed reports and their aggregation.

mod aggregate;
mod stats;

pub use aggregate::{aggregate, markdown_table, perf_drop, write_rows_csv, MetricRow, SummaryRow};
pub use stats::{mann_whitney_u, u_statistic, EXACT_LIMIT};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::GoalPolicy;
use crate::error::{Error, Result};
use crate::mdp::GoalMdp;

/// One greedy episode: the commanded goal and the `horizon + 1` visited states.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub goal: usize,
    pub states: Vec<usize>,
}

/// Greedy episodes with goals from `q_test`. Episode `i` draws from its own
/// stream `i` of a generator seeded by `seed`.
pub fn rollouts(mdp: &GoalMdp, agent: &dyn GoalPolicy, n_episodes: usize, horizon: usize, seed: u64) -> Result<Vec<Episode>> {
    if agent.n_actions() != mdp.n_actions() {
        return Err(Error::shape(format!(
            "agent has {} actions, the environment {}",
            agent.n_actions(),
            mdp.n_actions()
        )));
    }
    let ns = mdp.n_states();
    let table = agent.greedy_table(ns, mdp.n_goals());
    Ok((0..n_episodes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let goal = mdp.sample_test_goal(&mut rng);
            let mut s = mdp.sample_initial(&mut rng);
            let mut states = Vec::with_capacity(horizon + 1);
            states.push(s);
            for _ in 0..horizon {
                s = mdp.sample_next(s, table[goal * ns + s], &mut rng);
                states.push(s);
            }
            Episode { goal, states }
        })
        .collect())
}

fn episode_return(mdp: &GoalMdp, e: &Episode, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for &s in &e.states[1..] {
        if mdp.phi()[s] == e.goal {
            total += discount;
        }
        discount *= gamma;
    }
    total
}

fn final_state(e: &Episode) -> usize {
    *e.states.last().expect("episodes hold at least the start state")
}

/// Shortest-path steps from the final state to the goal; unreachable goals
/// count as `n_states`.
fn episode_distance(mdp: &GoalMdp, e: &Episode) -> f64 {
    mdp.goal_distance(final_state(e), e.goal).unwrap_or(mdp.n_states()) as f64
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        0.0
    } else {
        v.sum::<f64>() / n as f64
    }
}

/// Mean of `sum_t gamma^t 1[phi(s_{t+1}) = g]` over greedy episodes.
pub fn rollout_return(mdp: &GoalMdp, agent: &dyn GoalPolicy, n_episodes: usize, horizon: usize, gamma: f64, seed: u64) -> Result<f64> {
    let eps = rollouts(mdp, agent, n_episodes, horizon, seed)?;
    Ok(mean(eps.iter().map(|e| episode_return(mdp, e, gamma))))
}

/// Fraction of episodes whose final state achieves the goal.
pub fn success_rate(mdp: &GoalMdp, agent: &dyn GoalPolicy, n_episodes: usize, horizon: usize, seed: u64) -> Result<f64> {
    let eps = rollouts(mdp, agent, n_episodes, horizon, seed)?;
    Ok(mean(eps.iter().map(|e| f64::from(u8::from(mdp.phi()[final_state(e)] == e.goal)))))
}

/// Mean shortest-path distance from the final state to the goal.
pub fn final_distance(mdp: &GoalMdp, agent: &dyn GoalPolicy, n_episodes: usize, horizon: usize, seed: u64) -> Result<f64> {
    let eps = rollouts(mdp, agent, n_episodes, horizon, seed)?;
    Ok(mean(eps.iter().map(|e| episode_distance(mdp, e))))
}

/// All three metrics over one shared set of rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub discounted_return: f64,
    pub success_rate: f64,
    pub final_distance: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 3] = ["discounted_return", "success_rate", "final_distance"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "discounted_return" => Some(self.discounted_return),
            "success_rate" => Some(self.success_rate),
            "final_distance" => Some(self.final_distance),
            _ => None,
        }
    }
}

pub fn evaluate(mdp: &GoalMdp, agent: &dyn GoalPolicy, n_episodes: usize, horizon: usize, seed: u64) -> Result<Metrics> {
    let eps = rollouts(mdp, agent, n_episodes, horizon, seed)?;
    let gamma = mdp.gamma();
    Ok(Metrics {
        discounted_return: mean(eps.iter().map(|e| episode_return(mdp, e, gamma))),
        success_rate: mean(eps.iter().map(|e| f64::from(u8::from(mdp.phi()[final_state(e)] == e.goal)))),
        final_distance: mean(eps.iter().map(|e| episode_distance(mdp, e))),
    })
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v.iter().copied());
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    pub fn of(per_seed: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_seed);
        Self { per_seed, mean, std }
    }
}

/// Metrics of one agent configuration across training seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub n_episodes: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub discounted_return: MetricSummary,
    pub success_rate: MetricSummary,
    pub final_distance: MetricSummary,
}

impl EvalReport {
    pub fn from_runs(runs: &[(u64, Metrics)], n_episodes: usize, horizon: usize, gamma: f64) -> Self {
        let col = |f: fn(&Metrics) -> f64| MetricSummary::of(runs.iter().map(|(_, m)| f(m)).collect());
        Self {
            seeds: runs.iter().map(|(s, _)| *s).collect(),
            n_episodes,
            horizon,
            gamma,
            discounted_return: col(|m| m.discounted_return),
            success_rate: col(|m| m.success_rate),
            final_distance: col(|m| m.final_distance),
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        match name {
            "discounted_return" => Some(&self.discounted_return),
            "success_rate" => Some(&self.success_rate),
            "final_distance" => Some(&self.final_distance),
            _ => None,
        }
    }

    /// Long-format rows, one per (seed, metric).
    pub fn rows(&self, env: &str, agent: &str, setting: &str) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for (i, &seed) in self.seeds.iter().enumerate() {
            for name in Metrics::NAMES {
                out.push(MetricRow {
                    env: env.to_string(),
                    agent: agent.to_string(),
                    setting: setting.to_string(),
                    seed,
                    metric: name.to_string(),
                    value: self.metric(name).expect("known metric").per_seed[i],
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, discounted_return_exact, expert_policy, grid_actions, EnvSpec, Policy};

    /// Always plays one action.
    struct Fixed(usize);

    impl GoalPolicy for Fixed {
        fn n_actions(&self) -> usize {
            grid_actions::COUNT
        }

        fn action_probs(&self, _s: usize, _g: usize) -> Vec<f64> {
            let mut p = vec![0.0; grid_actions::COUNT];
            p[self.0] = 1.0;
            p
        }
    }

    #[test]
    fn never_reaching_policy_scores_zero() {
        // Start in the centre and stay: no corner goal is ever achieved.
        let mdp = build_gridworld(5, 0.0).unwrap().with_initial(crate::mdp::uniform_over(&[12], 25).unwrap()).unwrap();
        let m = evaluate(&mdp, &Fixed(grid_actions::STAY), 200, 50, 0).unwrap();
        assert_eq!(m.discounted_return, 0.0);
        assert_eq!(m.success_rate, 0.0);
        // Every corner is four steps from the centre.
        assert_eq!(m.final_distance, 4.0);
    }

    #[test]
    fn pinned_at_goal_earns_geometric_sum() {
        let mdp = build_gridworld(5, 0.0).unwrap().with_initial(crate::mdp::uniform_over(&[0], 25).unwrap()).unwrap();
        let mdp = mdp.with_q_test(crate::mdp::uniform_over(&[0], 25).unwrap()).unwrap();
        let r = rollout_return(&mdp, &Fixed(grid_actions::STAY), 10, 50, 0.99, 1).unwrap();
        let expected = (1.0 - 0.99f64.powi(50)) / 0.01;
        assert!((r - expected).abs() < 1e-9, "{r}");
        assert!((expected - 39.499).abs() < 1e-3);
    }

    #[test]
    fn stationary_policy_distance_is_corner_average() {
        // From cell (1, 2): corners lie 3, 3, 5 and 5 steps away.
        let mdp = build_gridworld(5, 0.0).unwrap().with_initial(crate::mdp::uniform_over(&[7], 25).unwrap()).unwrap();
        let n = 4000;
        let d = final_distance(&mdp, &Fixed(grid_actions::STAY), n, 10, 3).unwrap();
        // Goals are sampled, so allow three standard errors (sd 1).
        assert!((d - 4.0).abs() < 3.0 / (n as f64).sqrt(), "{d}");
    }

    #[test]
    fn expert_succeeds_everywhere_on_deterministic_grid() {
        let mdp = EnvSpec::gridworld(5, 0.0).build().unwrap();
        let pi = expert_policy(&mdp).unwrap();
        let m = evaluate(&mdp, &pi, 500, 50, 2).unwrap();
        assert_eq!(m.success_rate, 1.0);
        assert_eq!(m.final_distance, 0.0);
    }

    #[test]
    fn random_policy_succeeds_sometimes() {
        // The uniform policy's greedy action is "stay" everywhere, so sample
        // actions through a per-goal random deterministic table instead.
        let mdp = EnvSpec::gridworld(5, 0.0).build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pi = Policy::random(&mdp, &mut rng);
        let rate = success_rate(&mdp, &pi, 2000, 50, 4).unwrap();
        assert!(rate > 0.0 && rate < 1.0, "{rate}");
    }

    #[test]
    fn sampled_return_matches_exact_value() {
        // Short effective horizon so the truncated sum matches the infinite one.
        let mdp = build_gridworld(4, 0.2).unwrap().with_gamma(0.5).unwrap();
        let pi = expert_policy(&mdp).unwrap();
        let exact = discounted_return_exact(&mdp, &pi).unwrap();
        let n = 2000;
        let eps = rollouts(&mdp, &pi, n, 60, 5).unwrap();
        let r: Vec<f64> = eps.iter().map(|e| episode_return(&mdp, e, 0.5)).collect();
        let (m, sd) = mean_std(&r);
        assert!((m - exact).abs() < 3.0 * sd / (n as f64).sqrt() + 1e-12, "{m} vs {exact}");
    }

    #[test]
    fn metrics_agree_and_are_deterministic() {
        let mdp = EnvSpec::gridworld(4, 0.4).build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pi = Policy::random(&mdp, &mut rng);
        let m = evaluate(&mdp, &pi, 300, 20, 6).unwrap();
        assert_eq!(m, evaluate(&mdp, &pi, 300, 20, 6).unwrap());
        assert_eq!(m.success_rate, success_rate(&mdp, &pi, 300, 20, 6).unwrap());
        assert_eq!(m.final_distance, final_distance(&mdp, &pi, 300, 20, 6).unwrap());
        assert!((0.0..=1.0).contains(&m.success_rate));
        assert!(m.final_distance >= 0.0);
        for e in rollouts(&mdp, &pi, 300, 20, 6).unwrap() {
            if episode_distance(&mdp, &e) == 0.0 {
                assert_eq!(mdp.phi()[final_state(&e)], e.goal);
            }
        }
    }

    #[test]
    fn report_statistics() {
        let m = |r| Metrics { discounted_return: r, success_rate: 0.5, final_distance: 1.0 };
        let one = EvalReport::from_runs(&[(0, m(3.0))], 10, 50, 0.99);
        assert_eq!(one.discounted_return.std, 0.0);
        let two = EvalReport::from_runs(&[(0, m(3.0)), (1, m(3.0))], 10, 50, 0.99);
        assert_eq!(two.discounted_return.std, 0.0);
        let spread = EvalReport::from_runs(&[(0, m(1.0)), (1, m(3.0))], 10, 50, 0.99);
        assert_eq!(spread.discounted_return.mean, 2.0);
        assert!((spread.discounted_return.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(spread.rows("grid", "smore", "base").len(), 6);
    }
}
