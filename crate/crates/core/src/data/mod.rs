//! Offline datasets: collection, hindsight relabeling and empirical joints.

mod io;

pub use io::{export_csv, load_dataset, read_dataset, save_dataset, write_dataset, DATASET_VERSION};

use std::collections::HashMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, value_iteration_expert, EnvSpec, ExpertPolicy, GoalMdp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub episode: u32,
    pub t: u32,
    pub s: u32,
    pub a: u32,
    pub s_next: u32,
    pub achieved_goal: u32,
    pub commanded_goal: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub expert_fraction: f64,
    pub n_episodes: usize,
    pub horizon: usize,
    /// Exploration rate of the expert episodes.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    0.1
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            expert_fraction: 0.1,
            n_episodes: 200,
            horizon: 50,
            epsilon: default_epsilon(),
            seed: 0,
        }
    }
}

impl CollectConfig {
    /// `ceil(fraction * n_episodes)`, robust to round-off in the product.
    pub fn n_expert(&self) -> usize {
        let x = self.expert_fraction * self.n_episodes as f64;
        ((x - 1e-9).ceil().max(0.0) as usize).min(self.n_episodes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub env: EnvSpec,
    pub provenance: CollectConfig,
    transitions: Vec<Transition>,
    episodes: Vec<Range<usize>>,
}

impl OfflineDataset {
    /// Checks that episodes are contiguous and their steps consecutive.
    pub fn new(env: EnvSpec, provenance: CollectConfig, transitions: Vec<Transition>) -> Result<Self> {
        let mut episodes: Vec<Range<usize>> = Vec::new();
        for (i, tr) in transitions.iter().enumerate() {
            let continues = i > 0 && transitions[i - 1].episode == tr.episode;
            if continues {
                if tr.t != transitions[i - 1].t + 1 {
                    return Err(Error::invalid(format!("record {i}: step {} does not follow {}", tr.t, transitions[i - 1].t)));
                }
                if tr.s != transitions[i - 1].s_next {
                    return Err(Error::invalid(format!("record {i}: state does not continue the episode")));
                }
                episodes.last_mut().unwrap().end = i + 1;
            } else {
                if tr.t != 0 {
                    return Err(Error::invalid(format!("record {i}: episode {} starts at step {}", tr.episode, tr.t)));
                }
                if episodes.len() != tr.episode as usize {
                    return Err(Error::invalid(format!("record {i}: episode ids must count up from 0")));
                }
                episodes.push(i..i + 1);
            }
        }
        Ok(Self {
            env,
            provenance,
            transitions,
            episodes,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episodes(&self) -> &[Range<usize>] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Index range of the episode containing record `i`.
    pub fn episode_of(&self, i: usize) -> &Range<usize> {
        &self.episodes[self.transitions[i].episode as usize]
    }
}

fn ensure_nonempty(dataset: &OfflineDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset has no transitions"));
    }
    Ok(())
}

/// Expert episodes (epsilon-greedy towards a test goal) followed by
/// uniform-random episodes commanded with training goals.
pub fn collect_dataset(env: &EnvSpec, config: &CollectConfig) -> Result<OfflineDataset> {
    let mdp = env.build()?;
    collect_from_mdp(&mdp, env, config)
}

pub fn collect_from_mdp(mdp: &GoalMdp, env: &EnvSpec, config: &CollectConfig) -> Result<OfflineDataset> {
    if !(0.0..=1.0).contains(&config.expert_fraction) || !(0.0..=1.0).contains(&config.epsilon) {
        return Err(Error::invalid("expert fraction and epsilon must lie in [0, 1]"));
    }
    if config.horizon == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_expert = config.n_expert();
    let mut experts: HashMap<usize, ExpertPolicy> = HashMap::new();
    let mut transitions = Vec::with_capacity(config.n_episodes * config.horizon);
    for ep in 0..config.n_episodes {
        let expert = ep < n_expert;
        let goal = if expert {
            mdp.sample_test_goal(&mut rng)
        } else {
            sample_categorical(mdp.q_train(), &mut rng)
        };
        if expert && !experts.contains_key(&goal) {
            experts.insert(goal, value_iteration_expert(mdp, goal)?);
        }
        let mut s = mdp.sample_initial(&mut rng);
        for t in 0..config.horizon {
            let a = if expert && rng.gen::<f64>() >= config.epsilon {
                experts[&goal].actions[s]
            } else {
                rng.gen_range(0..mdp.n_actions())
            };
            let s_next = mdp.sample_next(s, a, &mut rng);
            transitions.push(Transition {
                episode: ep as u32,
                t: t as u32,
                s: s as u32,
                a: a as u32,
                s_next: s_next as u32,
                achieved_goal: mdp.phi()[s_next] as u32,
                commanded_goal: goal as u32,
            });
            s = s_next;
        }
    }
    OfflineDataset::new(env.clone(), config.clone(), transitions)
}

/// A transition paired with the goal used for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GoalSample {
    /// Dataset record the state and action come from.
    pub index: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub g: usize,
    pub relabeled: bool,
}

/// Future-strategy relabel of record `i`: with probability `her_ratio` the
/// goal achieved at a uniform step in `[t, end)` of the same episode.
/// Returns the goal, whether it was relabeled and the step it was taken from.
fn her_goal<R: Rng + ?Sized>(dataset: &OfflineDataset, i: usize, her_ratio: f64, rng: &mut R) -> (usize, bool, usize) {
    let tr = &dataset.transitions[i];
    if her_ratio > 0.0 && rng.gen::<f64>() < her_ratio {
        let end = dataset.episode_of(i).end;
        let j = rng.gen_range(i..end);
        (dataset.transitions[j].achieved_goal as usize, true, j)
    } else {
        (tr.commanded_goal as usize, false, i)
    }
}

fn check_ratio(her_ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&her_ratio) {
        return Err(Error::invalid(format!("her_ratio {her_ratio} outside [0, 1]")));
    }
    Ok(())
}

pub fn her_relabel<R: Rng + ?Sized>(
    dataset: &OfflineDataset,
    batch_indices: &[usize],
    her_ratio: f64,
    rng: &mut R,
) -> Result<Vec<GoalSample>> {
    check_ratio(her_ratio)?;
    batch_indices
        .iter()
        .map(|&i| {
            let tr = dataset.transitions.get(i).ok_or(Error::Index {
                what: "transition",
                index: i,
                limit: dataset.len(),
            })?;
            let (g, relabeled, _) = her_goal(dataset, i, her_ratio, rng);
            Ok(GoalSample {
                index: i,
                s: tr.s as usize,
                a: tr.a as usize,
                s_next: tr.s_next as usize,
                g,
                relabeled,
            })
        })
        .collect()
}

/// Uniform records, relabeled: a batch from the dataset joint `rho`.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &OfflineDataset,
    batch_size: usize,
    her_ratio: f64,
    rng: &mut R,
) -> Result<Vec<GoalSample>> {
    ensure_nonempty(dataset)?;
    let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..dataset.len())).collect();
    her_relabel(dataset, &idx, her_ratio, rng)
}

/// Draws `g` by hindsight relabeling, then returns the transition of the same
/// episode that enters `g`.
///
/// A relabeled goal comes with the step that achieved it. A kept commanded
/// goal uses the first step at or after the sampled one that achieves it; when
/// the episode never does, the goal is relabeled instead.
pub fn sample_goal_transition<R: Rng + ?Sized>(
    dataset: &OfflineDataset,
    her_ratio: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<GoalSample>> {
    check_ratio(her_ratio)?;
    ensure_nonempty(dataset)?;
    (0..batch_size)
        .map(|_| {
            let i = rng.gen_range(0..dataset.len());
            let (g, relabeled, j) = her_goal(dataset, i, her_ratio, rng);
            let entering = if relabeled {
                Some(j)
            } else {
                (i..dataset.episode_of(i).end).find(|&k| dataset.transitions[k].achieved_goal as usize == g)
            };
            let (g, k) = match entering {
                Some(k) => (g, k),
                None => {
                    let (g, _, j) = her_goal(dataset, i, 1.0, rng);
                    (g, j)
                }
            };
            let tr = &dataset.transitions[k];
            Ok(GoalSample {
                index: k,
                s: tr.s as usize,
                a: tr.a as usize,
                s_next: tr.s_next as usize,
                g,
                relabeled: relabeled || entering.is_none(),
            })
        })
        .collect()
}

/// Normalized counts of `n_samples` relabeled `(s, a, g)` draws, laid out
/// like the MDP's joint tensors.
pub fn empirical_joint<R: Rng + ?Sized>(
    mdp: &GoalMdp,
    dataset: &OfflineDataset,
    her_ratio: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::invalid("empirical joint needs samples"));
    }
    let mut rho = vec![0.0; mdp.sag_len()];
    for sample in sample_batch(dataset, n_samples, her_ratio, rng)? {
        if sample.s >= mdp.n_states() || sample.a >= mdp.n_actions() || sample.g >= mdp.n_goals() {
            return Err(Error::invalid("dataset indices exceed the MDP dimensions"));
        }
        rho[mdp.sag(sample.s, sample.a, sample.g)] += 1.0;
    }
    let w = 1.0 / n_samples as f64;
    rho.iter_mut().for_each(|r| *r *= w);
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::goal_transition_distribution;

    fn grid_data(fraction: f64, n: usize, seed: u64) -> OfflineDataset {
        let config = CollectConfig {
            expert_fraction: fraction,
            n_episodes: n,
            horizon: 20,
            seed,
            ..Default::default()
        };
        collect_dataset(&EnvSpec::gridworld(4, 0.0), &config).unwrap()
    }

    fn three_step_episode() -> OfflineDataset {
        let steps = [(0, 1), (1, 2), (2, 3)];
        let transitions = steps
            .iter()
            .enumerate()
            .map(|(t, &(s, s_next))| Transition {
                episode: 0,
                t: t as u32,
                s,
                a: 1,
                s_next,
                achieved_goal: s_next,
                commanded_goal: 0,
            })
            .collect();
        OfflineDataset::new(EnvSpec::Chain { length: 4, gamma: 0.9 }, CollectConfig::default(), transitions).unwrap()
    }

    #[test]
    fn expert_count_uses_ceiling() {
        let data = grid_data(0.1, 100, 1);
        assert_eq!(data.provenance.n_expert(), 10);
        let c = CollectConfig {
            expert_fraction: 0.025,
            n_episodes: 100,
            ..Default::default()
        };
        assert_eq!(c.n_expert(), 3);
        assert_eq!(data.episodes().len(), 100);
        assert_eq!(data.len(), 2000);
    }

    #[test]
    fn greedy_experts_reach_their_goals() {
        let config = CollectConfig {
            expert_fraction: 1.0,
            n_episodes: 30,
            horizon: 20,
            epsilon: 0.0,
            seed: 5,
        };
        let data = collect_dataset(&EnvSpec::gridworld(5, 0.0), &config).unwrap();
        for ep in data.episodes() {
            let last = data.transitions()[ep.end - 1];
            assert_eq!(last.achieved_goal, last.commanded_goal);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(grid_data(0.1, 20, 3), grid_data(0.1, 20, 3));
        assert_ne!(grid_data(0.1, 20, 3), grid_data(0.1, 20, 4));
    }

    #[test]
    fn zero_ratio_keeps_commanded_goals() {
        let data = grid_data(0.1, 10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx: Vec<usize> = (0..data.len()).collect();
        for (s, tr) in her_relabel(&data, &idx, 0.0, &mut rng).unwrap().iter().zip(data.transitions()) {
            assert_eq!(s.g, tr.commanded_goal as usize);
            assert!(!s.relabeled);
        }
    }

    #[test]
    fn full_ratio_on_last_step_uses_own_goal() {
        let data = grid_data(0.0, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let last: Vec<usize> = data.episodes().iter().map(|e| e.end - 1).collect();
        for s in her_relabel(&data, &last, 1.0, &mut rng).unwrap() {
            assert_eq!(s.g, data.transitions()[s.index].achieved_goal as usize);
        }
    }

    #[test]
    fn relabel_rate_concentrates() {
        let data = grid_data(0.1, 20, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = sample_batch(&data, 100_000, 0.8, &mut rng).unwrap();
        let rate = batch.iter().filter(|s| s.relabeled).count() as f64 / 1e5;
        assert!((rate - 0.8).abs() < 0.01, "{rate}");
    }

    #[test]
    fn relabeled_goals_are_achieved_later() {
        let data = grid_data(0.1, 20, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in sample_batch(&data, 5000, 0.8, &mut rng).unwrap().iter().filter(|s| s.relabeled) {
            let ep = data.episode_of(s.index);
            assert!((s.index..ep.end).any(|k| data.transitions()[k].achieved_goal as usize == s.g));
        }
    }

    #[test]
    fn goal_transition_trace() {
        let data = three_step_episode();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in sample_goal_transition(&data, 1.0, 200, &mut rng).unwrap() {
            let tr = data.transitions()[s.index];
            assert_eq!(tr.achieved_goal as usize, s.g);
            if s.g == 3 {
                assert_eq!(s.index, 2);
            }
        }
    }

    #[test]
    fn goal_transitions_stay_in_target_support() {
        let data = grid_data(0.1, 30, 10);
        let mdp = data.env.build().unwrap();
        let q = goal_transition_distribution(&mdp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in sample_goal_transition(&data, 0.8, 3000, &mut rng).unwrap() {
            assert_eq!(mdp.phi()[s.s_next], s.g);
            assert!(q.get(s.s, s.a, s.g) > 0.0);
        }
    }

    #[test]
    fn single_step_episode_returns_itself() {
        let tr = Transition {
            episode: 0,
            t: 0,
            s: 0,
            a: 1,
            s_next: 1,
            achieved_goal: 1,
            commanded_goal: 0,
        };
        let data = OfflineDataset::new(EnvSpec::Chain { length: 2, gamma: 0.9 }, CollectConfig::default(), vec![tr]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sample_goal_transition(&data, 1.0, 1, &mut rng).unwrap()[0];
        assert_eq!((s.index, s.g), (0, 1));
    }

    #[test]
    fn joint_respects_commanded_goal() {
        let data = three_step_episode();
        let mdp = data.env.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = empirical_joint(&mdp, &data, 0.0, 1000, &mut rng).unwrap();
        assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, &r) in rho.iter().enumerate() {
            if i % mdp.n_goals() != 0 {
                assert_eq!(r, 0.0);
            }
        }
    }

    #[test]
    fn joint_estimates_agree() {
        let data = three_step_episode();
        let mdp = data.env.build().unwrap();
        let a = empirical_joint(&mdp, &data, 0.8, 1_000_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = empirical_joint(&mdp, &data, 0.8, 1_000_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let tv: f64 = 0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        assert!(tv <= 0.01, "{tv}");
    }

    #[test]
    fn rejects_broken_episodes() {
        let mut trs = three_step_episode().transitions().to_vec();
        trs[2].t = 5;
        assert!(OfflineDataset::new(EnvSpec::Chain { length: 4, gamma: 0.9 }, CollectConfig::default(), trs).is_err());
    }
}
