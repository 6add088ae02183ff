//! Offline goal-conditioned agents on tabular environments: the mixture
//! occupancy matching learner and three baselines.

pub mod gcsl;
pub mod gofar;
pub mod iql;
pub mod losses;
pub mod smore;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GoalSample, OfflineDataset};
use crate::error::{Error, Result};
use crate::mdp::{argmax, GoalMdp, Policy};
use crate::nn::{load_checkpoint, save_checkpoint, AdamState, CosineSchedule, DenseNet, Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Smore,
    Gcsl,
    IqlSparse,
    GofarLite,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Smore, AgentKind::Gcsl, AgentKind::IqlSparse, AgentKind::GofarLite];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Smore => "smore",
            AgentKind::Gcsl => "gcsl",
            AgentKind::IqlSparse => "iql_sparse",
            AgentKind::GofarLite => "gofar_lite",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown agent {s:?}")))
    }
}

/// Hyperparameters shared by every agent; each reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Mixture weight of the agent occupancy.
    pub beta: f64,
    /// Advantage-weighted regression temperature.
    pub awr_temperature: f64,
    /// Expectile for `M` (and the IQL value).
    pub expectile: f64,
    pub her_ratio: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub base_lr: f64,
    pub hidden: Vec<usize>,
    /// Upper clip of the regression weights.
    pub weight_clip: f64,
    /// Polyak rate of the IQL target critic.
    pub target_update: f64,
    /// Discriminator steps run before the value phase of gofar_lite.
    pub discriminator_steps: u64,
    /// Bound on the discriminator pseudo-reward magnitude.
    pub reward_clip: f64,
}

/// Hyperparameters of the SMORe agent.
pub type SmoreConfig = AgentConfig;

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            awr_temperature: 3.0,
            expectile: 0.8,
            her_ratio: 0.8,
            gamma: 0.99,
            batch_size: 512,
            total_steps: 50_000,
            base_lr: 3e-4,
            hidden: vec![256, 256],
            weight_clip: 100.0,
            target_update: 0.005,
            discriminator_steps: 10_000,
            reward_clip: 10.0,
        }
    }
}

impl AgentConfig {
    /// Smaller networks and batches for single-core grid experiments.
    pub fn desk() -> Self {
        Self {
            batch_size: 64,
            hidden: vec![64, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, String); 9] = [
            (self.beta > 0.0 && self.beta <= 1.0, format!("beta {} outside (0, 1]", self.beta)),
            (self.awr_temperature > 0.0, format!("awr_temperature {} must be positive", self.awr_temperature)),
            (
                self.expectile >= 0.5 && self.expectile < 1.0,
                format!("expectile {} outside [0.5, 1)", self.expectile),
            ),
            ((0.0..=1.0).contains(&self.her_ratio), format!("her_ratio {} outside [0, 1]", self.her_ratio)),
            (self.gamma > 0.0 && self.gamma < 1.0, format!("gamma {} outside (0, 1)", self.gamma)),
            (self.batch_size > 0, "batch_size must be positive".into()),
            (self.base_lr > 0.0, format!("base_lr {} must be positive", self.base_lr)),
            (
                !self.hidden.is_empty() && !self.hidden.contains(&0),
                format!("hidden sizes {:?} must be positive", self.hidden),
            ),
            (
                self.weight_clip > 0.0 && self.reward_clip > 0.0 && (0.0..=1.0).contains(&self.target_update),
                "clips must be positive and target_update in [0, 1]".into(),
            ),
        ];
        match checks.into_iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(msg)),
            None => Ok(()),
        }
    }
}

/// One-hot state and goal encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub n_states: usize,
    pub n_goals: usize,
    pub n_actions: usize,
}

impl Features {
    pub fn of(mdp: &GoalMdp) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_goals: mdp.n_goals(),
            n_actions: mdp.n_actions(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_states + self.n_goals
    }

    pub fn encode<T: Real>(&self, pairs: impl ExactSizeIterator<Item = (usize, usize)>) -> Matrix<T> {
        let mut m = Matrix::zeros(pairs.len(), self.input_dim());
        for (i, (s, g)) in pairs.enumerate() {
            m.set(i, s, T::one());
            m.set(i, self.n_states + g, T::one());
        }
        m
    }

    pub fn net_sizes(&self, hidden: &[usize], out: usize) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(out);
        sizes
    }
}

/// `(s, g)` rows of a batch.
pub(crate) fn state_goal(batch: &[GoalSample]) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
    batch.iter().map(|b| (b.s, b.g))
}

/// `(s', g)` rows of a batch.
pub(crate) fn next_goal(batch: &[GoalSample]) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
    batch.iter().map(|b| (b.s_next, b.g))
}

pub(crate) fn actions(batch: &[GoalSample]) -> Vec<usize> {
    batch.iter().map(|b| b.a).collect()
}

/// Entry `a_i` of each row.
pub(crate) fn gather<T: Real>(m: &Matrix<T>, idx: &[usize]) -> Vec<T> {
    idx.iter().enumerate().map(|(i, &a)| m.get(i, a)).collect()
}

/// Column vector as an `n x 1` matrix.
pub(crate) fn column<T: Real>(v: Vec<T>) -> Matrix<T> {
    Matrix::new(v.len(), 1, v).expect("n x 1")
}

/// Places `v_i` at entry `a_i` of an otherwise zero matrix.
pub(crate) fn scatter<T: Real>(v: &[T], idx: &[usize], cols: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(v.len(), cols);
    for (i, (&x, &a)) in v.iter().zip(idx).enumerate() {
        m.set(i, a, x);
    }
    m
}

/// A goal-conditioned policy over discrete actions.
pub trait GoalPolicy {
    fn n_actions(&self) -> usize;

    fn action_probs(&self, s: usize, g: usize) -> Vec<f64>;

    /// Most probable action, lowest index on ties.
    fn greedy_action(&self, s: usize, g: usize) -> usize {
        argmax(&self.action_probs(s, g))
    }

    fn act(&self, s: usize, g: usize, greedy: bool, rng: &mut dyn RngCore) -> usize {
        if greedy {
            self.greedy_action(s, g)
        } else {
            crate::mdp::sample_categorical(&self.action_probs(s, g), rng)
        }
    }

    /// `[g][s]` table of greedy actions.
    fn greedy_table(&self, n_states: usize, n_goals: usize) -> Vec<usize> {
        (0..n_goals)
            .flat_map(|g| (0..n_states).map(move |s| (s, g)))
            .map(|(s, g)| self.greedy_action(s, g))
            .collect()
    }
}

impl GoalPolicy for Policy {
    fn n_actions(&self) -> usize {
        Policy::n_actions(self)
    }

    fn action_probs(&self, s: usize, g: usize) -> Vec<f64> {
        self.row(g, s).to_vec()
    }
}

/// Losses reported by one training step, by name.
pub type StepLosses = Vec<(&'static str, f64)>;

/// A trained or initialized agent: the policy network plus the auxiliary
/// networks of its kind.
#[derive(Clone, Debug)]
pub struct Agent {
    pub kind: AgentKind,
    pub config: AgentConfig,
    pub features: Features,
    pub policy: DenseNet<f32>,
    /// Kind-specific networks; see each agent module for the order.
    pub critics: Vec<DenseNet<f32>>,
    optimizers: Vec<AdamState<f32>>,
    steps_done: u64,
}

impl Agent {
    pub fn new(kind: AgentKind, mdp: &GoalMdp, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let features = Features::of(mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = DenseNet::new(&features.net_sizes(&config.hidden, features.n_actions), &mut rng)?;
        let critics = match kind {
            AgentKind::Smore => smore::init_critics(&features, &config, &mut rng)?,
            AgentKind::Gcsl => Vec::new(),
            AgentKind::IqlSparse => iql::init_critics(&features, &config, &mut rng)?,
            AgentKind::GofarLite => gofar::init_critics(&features, &config, &mut rng)?,
        };
        let n_trainable = 1 + match kind {
            // The last IQL critic is the target copy.
            AgentKind::IqlSparse => critics.len() - 1,
            _ => critics.len(),
        };
        let mut optimizers = vec![AdamState::new(policy.n_params())];
        optimizers.extend(critics[..n_trainable - 1].iter().map(|c| AdamState::new(c.n_params())));
        Ok(Self {
            kind,
            config,
            features,
            policy,
            critics,
            optimizers,
            steps_done: 0,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    /// Total gradient steps including any pre-training phase.
    pub fn planned_steps(&self) -> u64 {
        match self.kind {
            AgentKind::GofarLite => self.config.total_steps + self.config.discriminator_steps,
            _ => self.config.total_steps,
        }
    }

    pub(crate) fn update_policy(&mut self, grad: &[f32], lr: f64) -> Result<()> {
        self.optimizers[0].step(self.policy.params_mut(), grad, lr)
    }

    /// Adam step on critic `i`; target copies have no optimizer.
    pub(crate) fn update_critic(&mut self, i: usize, grad: &[f32], lr: f64) -> Result<()> {
        self.optimizers[1 + i].step(self.critics[i].params_mut(), grad, lr)
    }

    pub fn logits(&self, s: usize, g: usize) -> Vec<f32> {
        let x = self.features.encode::<f32>(std::iter::once((s, g)));
        self.policy.forward(&x).expect("policy input width").row(0).to_vec()
    }

    /// Softmax policy over every `(g, s)`.
    pub fn policy_table(&self) -> Policy {
        let f = self.features;
        let pairs: Vec<(usize, usize)> = (0..f.n_goals).flat_map(|g| (0..f.n_states).map(move |s| (s, g))).collect();
        let logits = self.policy.forward(&f.encode::<f32>(pairs.into_iter())).expect("policy input width");
        let mut probs: Vec<f64> = losses::softmax_rows(&logits).data().iter().map(|&p| f64::from(p)).collect();
        // Renormalize in double precision to meet the simplex tolerance.
        for row in probs.chunks_mut(f.n_actions) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        Policy::new(f.n_goals, f.n_states, f.n_actions, probs).expect("softmax rows")
    }

    /// Runs one training step of this agent's kind.
    pub fn train_step<R: Rng + ?Sized>(&mut self, mdp: &GoalMdp, dataset: &OfflineDataset, rng: &mut R) -> Result<StepLosses> {
        let losses = match self.kind {
            AgentKind::Smore => smore::train_step(self, dataset, rng)?,
            AgentKind::Gcsl => gcsl::train_step(self, dataset, rng)?,
            AgentKind::IqlSparse => iql::train_step(self, mdp, dataset, rng)?,
            AgentKind::GofarLite => gofar::train_step(self, dataset, rng)?,
        };
        if let Some((name, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Diverged {
                step: self.steps_done as usize,
                detail: format!("{} loss {name} = {v}", self.kind),
            });
        }
        self.steps_done += 1;
        Ok(losses)
    }

    /// Learning rate of the main phase at its step `k`.
    pub(crate) fn cosine_lr(&self, k: u64) -> f64 {
        match CosineSchedule::new(self.config.total_steps.max(1), 0.0) {
            Ok(s) => s.lr(self.config.base_lr, k),
            Err(_) => self.config.base_lr,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut nets = vec![&self.policy];
        nets.extend(self.critics.iter());
        let meta = serde_json::json!({
            "kind": self.kind,
            "config": self.config,
            "features": self.features,
            "steps_done": self.steps_done,
        });
        save_checkpoint(path, &nets, meta)
    }

    /// Restores the networks; optimizer moments start fresh.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut nets) = load_checkpoint::<f32>(path)?;
        let meta = header.meta;
        let kind: AgentKind = serde_json::from_value(meta["kind"].clone())?;
        let config: AgentConfig = serde_json::from_value(meta["config"].clone())?;
        let features: Features = serde_json::from_value(meta["features"].clone())?;
        let steps_done = meta["steps_done"].as_u64().unwrap_or(0);
        if nets.is_empty() {
            return Err(Error::invalid("checkpoint holds no networks"));
        }
        let policy = nets.remove(0);
        let n_trainable = match kind {
            AgentKind::IqlSparse => nets.len().saturating_sub(1),
            _ => nets.len(),
        };
        let mut optimizers = vec![AdamState::new(policy.n_params())];
        optimizers.extend(nets[..n_trainable].iter().map(|c| AdamState::new(c.n_params())));
        Ok(Self {
            kind,
            config,
            features,
            policy,
            critics: nets,
            optimizers,
            steps_done,
        })
    }
}

impl GoalPolicy for Agent {
    fn n_actions(&self) -> usize {
        self.features.n_actions
    }

    fn action_probs(&self, s: usize, g: usize) -> Vec<f64> {
        let logits = self.logits(s, g);
        let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
        let e: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|x| x / total).collect()
    }

    fn greedy_action(&self, s: usize, g: usize) -> usize {
        let logits: Vec<f64> = self.logits(s, g).into_iter().map(f64::from).collect();
        argmax(&logits)
    }

    fn greedy_table(&self, n_states: usize, n_goals: usize) -> Vec<usize> {
        let pairs: Vec<(usize, usize)> = (0..n_goals).flat_map(|g| (0..n_states).map(move |s| (s, g))).collect();
        let logits = self.policy.forward(&self.features.encode::<f32>(pairs.into_iter())).expect("policy input width");
        (0..logits.rows())
            .map(|i| argmax(&logits.row(i).iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect()
    }
}

/// Optimizer moments and sampler position; with the networks this is
/// enough to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub steps_done: u64,
    pub optimizers: Vec<AdamState<f32>>,
    /// Word position of the batch sampler's stream, as a decimal string.
    pub sampler_position: String,
}

/// An agent together with its batch sampler.
pub struct Trainer {
    pub agent: Agent,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(kind: AgentKind, mdp: &GoalMdp, config: AgentConfig, seed: u64) -> Result<Self> {
        let agent = Agent::new(kind, mdp, config, seed)?;
        // Separate stream so network initialization and batches never overlap.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self { agent, rng })
    }

    /// Continues from saved networks and state; `seed` must be the seed the
    /// run started with.
    pub fn resume(mut agent: Agent, state: TrainingState, seed: u64) -> Result<Self> {
        if state.optimizers.len() != agent.optimizers.len()
            || state.optimizers.iter().zip(&agent.optimizers).any(|(a, b)| a.n_params() != b.n_params())
        {
            return Err(Error::shape("training state does not match the agent's networks"));
        }
        let position: u128 = state
            .sampler_position
            .parse()
            .map_err(|_| Error::invalid(format!("bad sampler position {:?}", state.sampler_position)))?;
        agent.optimizers = state.optimizers;
        agent.steps_done = state.steps_done;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        rng.set_word_pos(position);
        Ok(Self { agent, rng })
    }

    pub fn state(&self) -> TrainingState {
        TrainingState {
            steps_done: self.agent.steps_done,
            optimizers: self.agent.optimizers.clone(),
            sampler_position: self.rng.get_word_pos().to_string(),
        }
    }

    pub fn finished(&self) -> bool {
        self.agent.steps_done >= self.agent.planned_steps()
    }

    pub fn step(&mut self, mdp: &GoalMdp, dataset: &OfflineDataset) -> Result<StepLosses> {
        self.agent.train_step(mdp, dataset, &mut self.rng)
    }
}

/// Trains a fresh agent for its planned number of steps. `observer` is called
/// every `interval` steps (and after the last one) when an interval is given.
pub fn train_agent(
    kind: AgentKind,
    mdp: &GoalMdp,
    dataset: &OfflineDataset,
    config: &AgentConfig,
    seed: u64,
    interval: Option<u64>,
    observer: &mut dyn FnMut(&Agent, &StepLosses) -> Result<()>,
) -> Result<Agent> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut trainer = Trainer::new(kind, mdp, config.clone(), seed)?;
    let total = trainer.agent.planned_steps();
    while !trainer.finished() {
        let losses = trainer.step(mdp, dataset)?;
        let k = trainer.agent.steps_done;
        if let Some(every) = interval {
            if k % every.max(1) == 0 || k == total {
                observer(&trainer.agent, &losses)?;
            }
        }
    }
    Ok(trainer.agent)
}

/// [`train_agent`] without progress reporting.
pub fn train(kind: AgentKind, mdp: &GoalMdp, dataset: &OfflineDataset, config: &AgentConfig, seed: u64) -> Result<Agent> {
    train_agent(kind, mdp, dataset, config, seed, None, &mut |_, _| Ok(()))
}
