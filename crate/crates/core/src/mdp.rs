//! Finite goal-conditioned MDPs.
//!
//! Tensors are stored flat and row-major:
//! transitions as `[s][a][s']`, policies as `[g][s][a]` and occupancy-like
//! tensors as `[s][a][g]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Flat index of `(s, a, g)` in a `[s][a][g]` tensor.
#[inline]
pub fn sag_index(n_actions: usize, n_goals: usize, s: usize, a: usize, g: usize) -> usize {
    (s * n_actions + a) * n_goals + g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct GoalMdp {
    n_states: usize,
    n_actions: usize,
    n_goals: usize,
    transition: Vec<f64>,
    initial: Vec<f64>,
    phi: Vec<usize>,
    gamma: f64,
    q_train: Vec<f64>,
    q_test: Vec<f64>,
    successors: Vec<Vec<(usize, f64)>>,
}

/// JSON document layout of a [`GoalMdp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    pub transition: Vec<f64>,
    pub initial: Vec<f64>,
    pub phi: Vec<usize>,
    pub gamma: f64,
    pub q_train: Vec<f64>,
    pub q_test: Vec<f64>,
}

impl TryFrom<MdpDocument> for GoalMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        GoalMdp::new(
            doc.n_states,
            doc.n_actions,
            doc.n_goals,
            doc.transition,
            doc.initial,
            doc.phi,
            doc.gamma,
            doc.q_train,
            doc.q_test,
        )
    }
}

impl From<GoalMdp> for MdpDocument {
    fn from(m: GoalMdp) -> Self {
        MdpDocument {
            n_states: m.n_states,
            n_actions: m.n_actions,
            n_goals: m.n_goals,
            transition: m.transition,
            initial: m.initial,
            phi: m.phi,
            gamma: m.gamma,
            q_train: m.q_train,
            q_test: m.q_test,
        }
    }
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{name} has a negative or non-finite entry")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

impl GoalMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_goals: usize,
        transition: Vec<f64>,
        initial: Vec<f64>,
        phi: Vec<usize>,
        gamma: f64,
        q_train: Vec<f64>,
        q_test: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_goals == 0 {
            return Err(Error::invalid("MDP dimensions must be positive"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if initial.len() != n_states || phi.len() != n_states {
            return Err(Error::shape("initial and phi must have one entry per state"));
        }
        if q_train.len() != n_goals || q_test.len() != n_goals {
            return Err(Error::shape("q_train and q_test must have one entry per goal"));
        }
        if let Some(&bad) = phi.iter().find(|&&g| g >= n_goals) {
            return Err(Error::Index {
                what: "phi",
                index: bad,
                limit: n_goals,
            });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {gamma} must lie strictly inside (0, 1)")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                check_simplex(&format!("transition row (s={s}, a={a})"), row)?;
            }
        }
        check_simplex("initial distribution", &initial)?;
        check_simplex("q_train", &q_train)?;
        check_simplex("q_test", &q_test)?;

        let successors = (0..n_states * n_actions)
            .map(|row| {
                transition[row * n_states..][..n_states]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s2, &p)| (s2, p))
                    .collect()
            })
            .collect();

        Ok(Self {
            n_states,
            n_actions,
            n_goals,
            transition,
            initial,
            phi,
            gamma,
            q_train,
            q_test,
            successors,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_goals(&self) -> usize {
        self.n_goals
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
    pub fn phi(&self) -> &[usize] {
        &self.phi
    }
    pub fn q_train(&self) -> &[f64] {
        &self.q_train
    }
    pub fn q_test(&self) -> &[f64] {
        &self.q_test
    }
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Number of entries of a `[s][a][g]` tensor for this MDP.
    pub fn sag_len(&self) -> usize {
        self.n_states * self.n_actions * self.n_goals
    }

    #[inline]
    pub fn sag(&self, s: usize, a: usize, g: usize) -> usize {
        sag_index(self.n_actions, self.n_goals, s, a, g)
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    /// Nonzero successors `(s', p(s'|s,a))`.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions + a]
    }

    pub fn with_gamma(self, gamma: f64) -> Result<Self> {
        self.rebuild(|d| d.gamma = gamma)
    }

    pub fn with_initial(self, initial: Vec<f64>) -> Result<Self> {
        self.rebuild(|d| d.initial = initial)
    }

    pub fn with_q_train(self, q_train: Vec<f64>) -> Result<Self> {
        self.rebuild(|d| d.q_train = q_train)
    }

    pub fn with_q_test(self, q_test: Vec<f64>) -> Result<Self> {
        self.rebuild(|d| d.q_test = q_test)
    }

    fn rebuild(self, edit: impl FnOnce(&mut MdpDocument)) -> Result<Self> {
        let mut doc = MdpDocument::from(self);
        edit(&mut doc);
        GoalMdp::try_from(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn check_sag(&self, s: usize, a: usize, g: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::Index {
                what: "state",
                index: s,
                limit: self.n_states,
            });
        }
        if a >= self.n_actions {
            return Err(Error::Index {
                what: "action",
                index: a,
                limit: self.n_actions,
            });
        }
        if g >= self.n_goals {
            return Err(Error::Index {
                what: "goal",
                index: g,
                limit: self.n_goals,
            });
        }
        Ok(())
    }

    /// r(s,a,g) = E_{s'}[1(phi(s') = g, q_train(g) > 0)].
    pub fn sparse_reward(&self, s: usize, a: usize, g: usize) -> Result<f64> {
        self.check_sag(s, a, g)?;
        Ok(self.reward(s, a, g))
    }

    #[inline]
    pub(crate) fn reward(&self, s: usize, a: usize, g: usize) -> f64 {
        if self.q_train[g] <= 0.0 {
            return 0.0;
        }
        self.successors(s, a)
            .iter()
            .filter(|(s2, _)| self.phi[*s2] == g)
            .map(|(_, p)| p)
            .sum()
    }

    /// Sparse reward as a full `[s][a][g]` tensor.
    pub fn reward_tensor(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.sag_len()];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for &(s2, p) in self.successors(s, a) {
                    let g = self.phi[s2];
                    if self.q_train[g] > 0.0 {
                        r[self.sag(s, a, g)] += p;
                    }
                }
            }
        }
        r
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let succ = self.successors(s, a);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(s2, p) in succ {
            acc += p;
            if u < acc {
                return s2;
            }
        }
        succ.last().map(|&(s2, _)| s2).unwrap_or(s)
    }

    pub fn sample_test_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.q_test, rng)
    }

    /// Shortest number of steps from `s` to any state achieving `g`,
    /// following transitions with positive probability.
    pub fn goal_distance(&self, s: usize, g: usize) -> Option<usize> {
        let mut dist = vec![usize::MAX; self.n_states];
        let mut queue = std::collections::VecDeque::new();
        dist[s] = 0;
        queue.push_back(s);
        while let Some(x) = queue.pop_front() {
            if self.phi[x] == g {
                return Some(dist[x]);
            }
            for a in 0..self.n_actions {
                for &(y, _) in self.successors(x, a) {
                    if dist[y] == usize::MAX {
                        dist[y] = dist[x] + 1;
                        queue.push_back(y);
                    }
                }
            }
        }
        None
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Compact, rebuildable description of a built-in environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        side: usize,
        slip: f64,
        gamma: f64,
        /// Evaluation goals (uniform over these cells); corners when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_goals: Option<Vec<usize>>,
    },
    Chain {
        length: usize,
        gamma: f64,
    },
}

impl EnvSpec {
    pub fn gridworld(side: usize, slip: f64) -> Self {
        EnvSpec::Gridworld {
            side,
            slip,
            gamma: 0.99,
            test_goals: None,
        }
    }

    pub fn build(&self) -> Result<GoalMdp> {
        match self {
            EnvSpec::Gridworld {
                side,
                slip,
                gamma,
                test_goals,
            } => {
                let mut mdp = build_gridworld(*side, *slip)?.with_gamma(*gamma)?;
                if let Some(cells) = test_goals {
                    mdp = mdp.with_q_test(uniform_over(cells, side * side)?)?;
                }
                Ok(mdp)
            }
            EnvSpec::Chain { length, gamma } => build_chain(*length)?.with_gamma(*gamma),
        }
    }
}

/// Uniform distribution over `support` within `n` outcomes.
pub fn uniform_over(support: &[usize], n: usize) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::invalid("empty support"));
    }
    let mut v = vec![0.0; n];
    for &i in support {
        if i >= n {
            return Err(Error::Index {
                what: "support element",
                index: i,
                limit: n,
            });
        }
        v[i] = 1.0;
    }
    let k = v.iter().filter(|&&x| x > 0.0).count() as f64;
    v.iter_mut().for_each(|x| *x /= k);
    Ok(v)
}

pub mod grid_actions {
    pub const STAY: usize = 0;
    pub const UP: usize = 1;
    pub const DOWN: usize = 2;
    pub const LEFT: usize = 3;
    pub const RIGHT: usize = 4;
    pub const COUNT: usize = 5;
}

pub mod chain_actions {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
}

fn grid_move(n: usize, s: usize, action: usize) -> usize {
    use grid_actions::*;
    let (r, c) = (s / n, s % n);
    let (r, c) = match action {
        UP if r > 0 => (r - 1, c),
        DOWN if r + 1 < n => (r + 1, c),
        LEFT if c > 0 => (r, c - 1),
        RIGHT if c + 1 < n => (r, c + 1),
        _ => (r, c),
    };
    r * n + c
}

/// `n x n` grid with actions stay/up/down/left/right. With probability
/// `slip` the executed action is replaced by one of the four moves chosen
/// uniformly at random. Cells are goals; training goals are uniform over all
/// cells, test goals uniform over the four corners. Starts are uniform.
pub fn build_gridworld(n: usize, slip: f64) -> Result<GoalMdp> {
    if n < 2 {
        return Err(Error::invalid(format!("gridworld side {n} must be at least 2")));
    }
    if !(0.0..1.0).contains(&slip) {
        return Err(Error::invalid(format!("slip {slip} must lie in [0, 1)")));
    }
    let ns = n * n;
    let na = grid_actions::COUNT;
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let row = &mut transition[(s * na + a) * ns..][..ns];
            row[grid_move(n, s, a)] += 1.0 - slip;
            for m in [grid_actions::UP, grid_actions::DOWN, grid_actions::LEFT, grid_actions::RIGHT] {
                row[grid_move(n, s, m)] += slip / 4.0;
            }
        }
    }
    let corners = [0, n - 1, ns - n, ns - 1];
    GoalMdp::new(
        ns,
        na,
        ns,
        transition,
        vec![1.0 / ns as f64; ns],
        (0..ns).collect(),
        0.99,
        vec![1.0 / ns as f64; ns],
        uniform_over(&corners, ns)?,
    )
}

/// Chain `0..n` with actions left/right; both ends self-loop when pushed
/// outward. Starts at state 0; test goal is the last state.
pub fn build_chain(n: usize) -> Result<GoalMdp> {
    if n < 2 {
        return Err(Error::invalid(format!("chain length {n} must be at least 2")));
    }
    let mut transition = vec![0.0; n * 2 * n];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        transition[(s * 2 + chain_actions::LEFT) * n + left] = 1.0;
        transition[(s * 2 + chain_actions::RIGHT) * n + right] = 1.0;
    }
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let mut q_test = vec![0.0; n];
    q_test[n - 1] = 1.0;
    GoalMdp::new(
        n,
        2,
        n,
        transition,
        initial,
        (0..n).collect(),
        0.99,
        vec![1.0 / n as f64; n],
        q_test,
    )
}

/// Random MDP for property tests. `phi(s) = s mod n_goals`.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    n_goals: usize,
    gamma: f64,
) -> Result<GoalMdp> {
    if n_goals > n_states {
        return Err(Error::invalid("random_mdp needs n_goals <= n_states"));
    }
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    for row in transition.chunks_mut(n_states) {
        for p in row.iter_mut() {
            // Sparse-ish rows: roughly half the successors carry mass.
            *p = if rng.gen_bool(0.5) { rng.gen::<f64>() } else { 0.0 };
        }
        if row.iter().all(|&p| p == 0.0) {
            row[rng.gen_range(0..n_states)] = 1.0;
        }
        normalize(row);
    }
    let random_simplex = |rng: &mut R, n: usize| {
        let mut v: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
        normalize(&mut v);
        v
    };
    let initial = random_simplex(rng, n_states);
    let q_train = random_simplex(rng, n_goals);
    let q_test = random_simplex(rng, n_goals);
    GoalMdp::new(
        n_states,
        n_actions,
        n_goals,
        transition,
        initial,
        (0..n_states).map(|s| s % n_goals).collect(),
        gamma,
        q_train,
        q_test,
    )
}

pub(crate) fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    // Push the rounding residue into the largest entry so the sum is exact
    // to within one ulp.
    let residue = 1.0 - v.iter().sum::<f64>();
    if let Some(i) = (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])) {
        v[i] += residue;
    }
}

/// Goal-conditioned policy `pi[g][s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_goals: usize,
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_goals: usize, n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_goals * n_states * n_actions {
            return Err(Error::shape(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_goals * n_states * n_actions
            )));
        }
        for (i, row) in probs.chunks(n_actions).enumerate() {
            check_simplex(
                &format!("policy row (g={}, s={})", i / n_states, i % n_states),
                row,
            )?;
        }
        Ok(Self {
            n_goals,
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(mdp: &GoalMdp) -> Self {
        let n = mdp.n_actions;
        Self {
            n_goals: mdp.n_goals,
            n_states: mdp.n_states,
            n_actions: n,
            probs: vec![1.0 / n as f64; mdp.n_goals * mdp.n_states * n],
        }
    }

    /// Deterministic policy from `actions[g * n_states + s]`.
    pub fn deterministic(mdp: &GoalMdp, actions: &[usize]) -> Result<Self> {
        let (ng, ns, na) = (mdp.n_goals, mdp.n_states, mdp.n_actions);
        if actions.len() != ng * ns {
            return Err(Error::shape("one action per (goal, state) expected"));
        }
        let mut probs = vec![0.0; ng * ns * na];
        for (i, &a) in actions.iter().enumerate() {
            if a >= na {
                return Err(Error::Index {
                    what: "action",
                    index: a,
                    limit: na,
                });
            }
            probs[i * na + a] = 1.0;
        }
        Ok(Self {
            n_goals: ng,
            n_states: ns,
            n_actions: na,
            probs,
        })
    }

    /// Random policy with strictly positive rows.
    pub fn random<R: Rng + ?Sized>(mdp: &GoalMdp, rng: &mut R) -> Self {
        let na = mdp.n_actions;
        let mut probs: Vec<f64> = (0..mdp.n_goals * mdp.n_states * na)
            .map(|_| 0.02 + rng.gen::<f64>())
            .collect();
        probs.chunks_mut(na).for_each(normalize);
        Self {
            n_goals: mdp.n_goals,
            n_states: mdp.n_states,
            n_actions: na,
            probs,
        }
    }

    /// Softmax of `[s][a][g]` scores divided by `temperature`.
    pub fn softmax_of_scores(mdp: &GoalMdp, scores: &[f64], temperature: f64) -> Self {
        let (ns, na, ng) = (mdp.n_states, mdp.n_actions, mdp.n_goals);
        let mut probs = vec![0.0; ng * ns * na];
        for g in 0..ng {
            for s in 0..ns {
                let row = &mut probs[(g * ns + s) * na..][..na];
                let max = (0..na)
                    .map(|a| scores[mdp.sag(s, a, g)])
                    .fold(f64::NEG_INFINITY, f64::max);
                for (a, p) in row.iter_mut().enumerate() {
                    *p = ((scores[mdp.sag(s, a, g)] - max) / temperature).exp();
                }
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= z);
            }
        }
        Self {
            n_goals: ng,
            n_states: ns,
            n_actions: na,
            probs,
        }
    }

    pub fn n_goals(&self) -> usize {
        self.n_goals
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, g: usize, s: usize, a: usize) -> f64 {
        self.probs[(g * self.n_states + s) * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, g: usize, s: usize) -> &[f64] {
        &self.probs[(g * self.n_states + s) * self.n_actions..][..self.n_actions]
    }

    pub(crate) fn row_mut(&mut self, g: usize, s: usize) -> &mut [f64] {
        &mut self.probs[(g * self.n_states + s) * self.n_actions..][..self.n_actions]
    }

    /// Replace the slice for goal `g` with a deterministic action map.
    pub fn set_goal_actions(&mut self, g: usize, actions: &[usize]) {
        for (s, &a) in actions.iter().enumerate() {
            let row = self.row_mut(g, s);
            row.iter_mut().for_each(|p| *p = 0.0);
            row[a] = 1.0;
        }
    }

    /// Lowest-index action of maximal probability.
    pub fn greedy_action(&self, g: usize, s: usize) -> usize {
        argmax(self.row(g, s))
    }

    fn check_shape(&self, mdp: &GoalMdp) -> Result<()> {
        if self.n_goals != mdp.n_goals || self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::shape(format!(
                "policy is {}x{}x{}, MDP needs {}x{}x{}",
                self.n_goals, self.n_states, self.n_actions, mdp.n_goals, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// Index of the first maximal entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Joint state-action-goal visitation `d(s,a,g)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTensor {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    pub d: Vec<f64>,
}

impl OccupancyTensor {
    pub fn zeros(mdp: &GoalMdp) -> Self {
        Self {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            n_goals: mdp.n_goals,
            d: vec![0.0; mdp.sag_len()],
        }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, g: usize) -> f64 {
        self.d[sag_index(self.n_actions, self.n_goals, s, a, g)]
    }

    pub fn total(&self) -> f64 {
        self.d.iter().sum()
    }
}

/// Normalized conditional state visitation `mu(s|g)` of a policy, solved
/// exactly from `(I - gamma P_pi^T) mu = (1 - gamma) d0`.
pub fn state_occupancy(mdp: &GoalMdp, policy: &Policy, g: usize) -> Result<Vec<f64>> {
    policy.check_shape(mdp)?;
    let ns = mdp.n_states;
    let gamma = mdp.gamma;
    let mut system = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for (a, &pi) in policy.row(g, s).iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for &(s2, p) in mdp.successors(s, a) {
                system[(s2, s)] -= gamma * pi * p;
            }
        }
    }
    let rhs = DVector::from_iterator(ns, mdp.initial.iter().map(|&x| (1.0 - gamma) * x));
    let mu = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Bellman flow system".into()))?;
    Ok(mu.iter().map(|&x| x.max(0.0)).collect())
}

/// Conditional occupancy `d(s,a|g)` as an `[s][a]` table.
pub fn goal_occupancy(mdp: &GoalMdp, policy: &Policy, g: usize) -> Result<Vec<f64>> {
    let mu = state_occupancy(mdp, policy, g)?;
    let na = mdp.n_actions;
    let mut d = vec![0.0; mdp.n_states * na];
    for (s, &m) in mu.iter().enumerate() {
        for (a, &pi) in policy.row(g, s).iter().enumerate() {
            d[s * na + a] = m * pi;
        }
    }
    Ok(d)
}

/// Normalized occupancy `[s][a]` of a deterministic action map.
pub fn occupancy_of_actions(mdp: &GoalMdp, actions: &[usize]) -> Result<Vec<f64>> {
    let ns = mdp.n_states;
    if actions.len() != ns {
        return Err(Error::shape("one action per state expected"));
    }
    let mut system = DMatrix::<f64>::identity(ns, ns);
    for (s, &a) in actions.iter().enumerate() {
        for &(s2, p) in mdp.successors(s, a) {
            system[(s2, s)] -= mdp.gamma * p;
        }
    }
    let rhs = DVector::from_iterator(ns, mdp.initial.iter().map(|&x| (1.0 - mdp.gamma) * x));
    let mu = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Bellman flow system".into()))?;
    let na = mdp.n_actions;
    let mut d = vec![0.0; ns * na];
    for (s, &a) in actions.iter().enumerate() {
        d[s * na + a] = mu[s].max(0.0);
    }
    Ok(d)
}

/// Joint occupancy `d(s,a,g) = w(g) d(s,a|g)` for goal weights `w`.
pub fn solve_occupancy_weighted(mdp: &GoalMdp, policy: &Policy, weights: &[f64]) -> Result<OccupancyTensor> {
    if weights.len() != mdp.n_goals {
        return Err(Error::shape("goal weights must have one entry per goal"));
    }
    let mut out = OccupancyTensor::zeros(mdp);
    for (g, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        let d = goal_occupancy(mdp, policy, g)?;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                out.d[mdp.sag(s, a, g)] = w * d[s * mdp.n_actions + a];
            }
        }
    }
    Ok(out)
}

/// Joint occupancy under the training goal distribution.
pub fn solve_occupancy(mdp: &GoalMdp, policy: &Policy) -> Result<OccupancyTensor> {
    solve_occupancy_weighted(mdp, policy, &mdp.q_train)
}

/// Largest absolute violation of the policy-explicit flow equation by a
/// joint tensor `d` (goal weights `q_train`).
pub fn flow_residual(mdp: &GoalMdp, policy: &Policy, d: &OccupancyTensor) -> f64 {
    let inflow = discounted_inflow(mdp, &d.d);
    let mut worst: f64 = 0.0;
    for g in 0..mdp.n_goals {
        for s in 0..mdp.n_states {
            let b = (1.0 - mdp.gamma) * mdp.initial[s] * mdp.q_train[g] + inflow[s * mdp.n_goals + g];
            for a in 0..mdp.n_actions {
                let r = d.d[mdp.sag(s, a, g)] - policy.prob(g, s, a) * b;
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// Largest violation of the action-free flow equation
/// `sum_a d(s,a,g) = (1-gamma) d0(s) q_train(g) + gamma sum p(s|s',a') d(s',a',g)`.
pub fn action_free_flow_residual(mdp: &GoalMdp, d: &[f64]) -> f64 {
    let inflow = discounted_inflow(mdp, d);
    let mut worst: f64 = 0.0;
    for g in 0..mdp.n_goals {
        for s in 0..mdp.n_states {
            let lhs: f64 = (0..mdp.n_actions).map(|a| d[mdp.sag(s, a, g)]).sum();
            let rhs = (1.0 - mdp.gamma) * mdp.initial[s] * mdp.q_train[g] + inflow[s * mdp.n_goals + g];
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// `gamma * sum_{s',a'} p(s|s',a') d(s',a',g)` as an `[s][g]` table.
fn discounted_inflow(mdp: &GoalMdp, d: &[f64]) -> Vec<f64> {
    let ng = mdp.n_goals;
    let mut inflow = vec![0.0; mdp.n_states * ng];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            for &(s2, p) in mdp.successors(s, a) {
                for g in 0..ng {
                    inflow[s2 * ng + g] += mdp.gamma * p * d[mdp.sag(s, a, g)];
                }
            }
        }
    }
    inflow
}

/// Result of Q-iteration for a single goal.
#[derive(Clone, Debug)]
pub struct GreedySolution {
    /// `[s][a]` action values.
    pub q_values: Vec<f64>,
    /// Greedy action per state (lowest index on ties).
    pub actions: Vec<usize>,
    pub iterations: usize,
}

/// Q-iteration for reward `reward[s][a]`, stopping when the largest change
/// falls below `tol * max(1, |Q|_inf)`.
pub fn greedy_q_iteration(mdp: &GoalMdp, reward: &[f64], tol: f64, max_iters: usize) -> GreedySolution {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = reward.to_vec();
    let mut v: Vec<f64> = (0..ns).map(|s| row_max(&q[s * na..][..na])).collect();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut delta: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for s in 0..ns {
            for a in 0..na {
                let next: f64 = mdp.successors(s, a).iter().map(|&(s2, p)| p * v[s2]).sum();
                let new = reward[s * na + a] + mdp.gamma * next;
                delta = delta.max((new - q[s * na + a]).abs());
                scale = scale.max(new.abs());
                q[s * na + a] = new;
            }
        }
        for s in 0..ns {
            v[s] = row_max(&q[s * na..][..na]);
        }
        if delta < tol * scale {
            break;
        }
    }
    let actions = (0..ns).map(|s| argmax_tol(&q[s * na..][..na], 1e-12)).collect();
    GreedySolution {
        q_values: q,
        actions,
        iterations,
    }
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Lowest index whose value is within `rel_tol` (relative) of the maximum.
fn argmax_tol(row: &[f64], rel_tol: f64) -> usize {
    let max = row_max(row);
    let slack = rel_tol * max.abs().max(1.0);
    row.iter().position(|&x| x >= max - slack).unwrap_or(0)
}

/// Optimal policy for goal `g` under the sparse reward.
#[derive(Clone, Debug)]
pub struct ExpertPolicy {
    pub goal: usize,
    pub actions: Vec<usize>,
    pub q_values: Vec<f64>,
}

impl ExpertPolicy {
    /// `[s][a]` probability table of the greedy slice.
    pub fn probs(&self, n_actions: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.actions.len() * n_actions];
        for (s, &a) in self.actions.iter().enumerate() {
            p[s * n_actions + a] = 1.0;
        }
        p
    }
}

pub fn value_iteration_expert(mdp: &GoalMdp, g: usize) -> Result<ExpertPolicy> {
    if g >= mdp.n_goals {
        return Err(Error::Index {
            what: "goal",
            index: g,
            limit: mdp.n_goals,
        });
    }
    if mdp.q_train[g] <= 0.0 {
        return Err(Error::invalid(format!("goal {g} has zero training weight")));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            reward[s * na + a] = mdp.reward(s, a, g);
        }
    }
    // Rewards are bounded by 1, so an absolute 1e-10 criterion is the
    // relative one scaled by |Q|_inf <= 1/(1-gamma).
    let tol = 1e-10 * (1.0 - mdp.gamma);
    let sol = greedy_q_iteration(mdp, &reward, tol, usize::MAX);
    Ok(ExpertPolicy {
        goal: g,
        actions: sol.actions,
        q_values: sol.q_values,
    })
}

/// Policy that plays the sparse-reward expert for every goal with positive
/// training weight and acts uniformly elsewhere.
pub fn expert_policy(mdp: &GoalMdp) -> Result<Policy> {
    let mut policy = Policy::uniform(mdp);
    for g in 0..mdp.n_goals {
        if mdp.q_train[g] > 0.0 {
            let e = value_iteration_expert(mdp, g)?;
            policy.set_goal_actions(g, &e.actions);
        }
    }
    Ok(policy)
}

/// Exact discounted return under the test goal distribution,
/// `1/(1-gamma) E_{d^pi}[r]` with goals weighted by `q_test`.
pub fn discounted_return_exact(mdp: &GoalMdp, policy: &Policy) -> Result<f64> {
    policy.check_shape(mdp)?;
    let mut total = 0.0;
    for g in 0..mdp.n_goals {
        let w = mdp.q_test[g];
        if w <= 0.0 || mdp.q_train[g] <= 0.0 {
            continue;
        }
        let d = goal_occupancy(mdp, policy, g)?;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let m = d[s * mdp.n_actions + a];
                if m > 0.0 {
                    total += w * m * mdp.reward(s, a, g);
                }
            }
        }
    }
    Ok(total / (1.0 - mdp.gamma))
}

/// Which goal-transition construction to use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GoalTransitionKind {
    /// `q(s,a,g) ∝ q_train(g) E_{s'}[1(phi(s') = g)]`.
    Hard,
    /// `q(s,a,g) ∝ exp(alpha r(s,a,g))` over every tuple.
    Soft { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalTransitionDistribution {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_goals: usize,
    pub q: Vec<f64>,
}

impl GoalTransitionDistribution {
    #[inline]
    pub fn get(&self, s: usize, a: usize, g: usize) -> f64 {
        self.q[sag_index(self.n_actions, self.n_goals, s, a, g)]
    }
}

pub fn goal_transition_distribution(mdp: &GoalMdp) -> Result<GoalTransitionDistribution> {
    goal_transition_distribution_with(mdp, GoalTransitionKind::Hard)
}

pub fn goal_transition_distribution_with(
    mdp: &GoalMdp,
    kind: GoalTransitionKind,
) -> Result<GoalTransitionDistribution> {
    let r = mdp.reward_tensor();
    let mut q: Vec<f64> = match kind {
        GoalTransitionKind::Hard => (0..mdp.sag_len())
            .map(|i| mdp.q_train[i % mdp.n_goals] * r[i])
            .collect(),
        GoalTransitionKind::Soft { alpha } => r.iter().map(|&x| (alpha * x).exp()).collect(),
    };
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoGoalTransitions);
    }
    q.iter_mut().for_each(|x| *x /= total);
    Ok(GoalTransitionDistribution {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        n_goals: mdp.n_goals,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain2_half() -> GoalMdp {
        build_chain(2)
            .unwrap()
            .with_gamma(0.5)
            .unwrap()
            .with_q_train(vec![0.0, 1.0])
            .unwrap()
    }

    fn always(mdp: &GoalMdp, a: usize) -> Policy {
        Policy::deterministic(mdp, &vec![a; mdp.n_goals() * mdp.n_states()]).unwrap()
    }

    #[test]
    fn gridworld_two_by_two_is_deterministic() {
        let m = build_gridworld(2, 0.0).unwrap();
        assert_eq!(m.n_states(), 4);
        for row in m.transition().chunks(4) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
        }
    }

    #[test]
    fn gridworld_slip_mixture_on_interior_cell() {
        let m = build_gridworld(3, 0.2).unwrap();
        // centre cell 4 moving right lands on 5 with 0.8 + 0.2/4
        let p = m.p(4, grid_actions::RIGHT, 5);
        assert!((p - 0.85).abs() < 1e-15);
        assert!((m.p(4, grid_actions::RIGHT, 1) - 0.05).abs() < 1e-15);
        assert!((m.sparse_reward(4, grid_actions::RIGHT, 5).unwrap() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn gridworld_rejects_tiny_side() {
        assert!(build_gridworld(1, 0.0).is_err());
        assert!(build_gridworld(3, 1.0).is_err());
    }

    #[test]
    fn chain_boundaries() {
        let m = build_chain(2).unwrap();
        assert_eq!(m.p(0, chain_actions::RIGHT, 1), 1.0);
        assert_eq!(m.p(1, chain_actions::RIGHT, 1), 1.0);
        let m5 = build_chain(5).unwrap();
        assert_eq!(m5.p(0, chain_actions::LEFT, 0), 1.0);
        assert!(build_chain(1).is_err());
    }

    #[test]
    fn chain_states_reachable_from_start() {
        let m = build_chain(3).unwrap();
        for s in 0..3 {
            assert!(m.goal_distance(0, s).is_some());
        }
    }

    #[test]
    fn sparse_reward_examples() {
        let m = build_chain(2).unwrap();
        assert_eq!(m.sparse_reward(0, chain_actions::RIGHT, 1).unwrap(), 1.0);
        assert_eq!(m.sparse_reward(1, chain_actions::LEFT, 1).unwrap(), 0.0);
        assert!(m.sparse_reward(2, 0, 0).is_err());
        assert!(m.sparse_reward(0, 0, 9).is_err());
    }

    #[test]
    fn chain_occupancy_by_hand() {
        let m = chain2_half();
        let d = solve_occupancy(&m, &always(&m, chain_actions::RIGHT)).unwrap();
        assert!((d.get(0, 1, 1) - 0.5).abs() < 1e-12);
        assert!((d.get(1, 1, 1) - 0.5).abs() < 1e-12);
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gridworld_uniform_policy_satisfies_flow() {
        let m = build_gridworld(3, 0.0).unwrap();
        let pi = Policy::uniform(&m);
        let d = solve_occupancy(&m, &pi).unwrap();
        assert!(flow_residual(&m, &pi, &d) <= 1e-8);
        assert!((d.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn expert_on_chain_goes_right() {
        let m = build_chain(5).unwrap();
        let e = value_iteration_expert(&m, 4).unwrap();
        assert!(e.actions.iter().all(|&a| a == chain_actions::RIGHT));
    }

    #[test]
    fn expert_stays_at_goal() {
        let m = build_gridworld(3, 0.0).unwrap();
        for g in 0..9 {
            let e = value_iteration_expert(&m, g).unwrap();
            assert_eq!(e.actions[g], grid_actions::STAY, "goal {g}");
        }
    }

    #[test]
    fn myopic_expert_maximizes_immediate_reward() {
        let m = build_gridworld(3, 0.2).unwrap().with_gamma(0.01).unwrap();
        let g = 5;
        let e = value_iteration_expert(&m, g).unwrap();
        for s in 0..9 {
            let r: Vec<f64> = (0..5).map(|a| m.reward(s, a, g)).collect();
            let best = r.iter().copied().fold(f64::MIN, f64::max);
            assert!(r[e.actions[s]] >= best - 1e-12, "state {s}");
        }
    }

    #[test]
    fn exact_return_matches_geometric_series() {
        // Both routes: the occupancy formula and sum_t gamma^t r_t = 1/(1-gamma).
        let m = chain2_half().with_q_test(vec![0.0, 1.0]).unwrap();
        let pi = always(&m, chain_actions::RIGHT);
        let j = discounted_return_exact(&m, &pi).unwrap();
        let series: f64 = (0..200).map(|t| 0.5f64.powi(t)).sum();
        assert!((j - series).abs() < 1e-12);
        assert!((j - 2.0).abs() < 1e-12);
    }

    #[test]
    fn never_reaching_policy_has_zero_return() {
        let m = build_chain(3).unwrap();
        let pi = always(&m, chain_actions::LEFT);
        assert_eq!(discounted_return_exact(&m, &pi).unwrap(), 0.0);
    }

    #[test]
    fn goal_transition_on_chain() {
        let m = build_chain(2).unwrap().with_q_train(vec![0.0, 1.0]).unwrap();
        let q = goal_transition_distribution(&m).unwrap();
        assert!((q.get(0, chain_actions::RIGHT, 1) - 0.5).abs() < 1e-15);
        assert!((q.get(1, chain_actions::RIGHT, 1) - 0.5).abs() < 1e-15);
        assert_eq!(q.get(0, chain_actions::LEFT, 0), 0.0);
        assert!((q.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn goal_transition_support_is_reward_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let m = random_mdp(&mut rng, 5, 3, 3, 0.9).unwrap();
            let q = goal_transition_distribution(&m).unwrap();
            let r = m.reward_tensor();
            for (qi, ri) in q.q.iter().zip(&r) {
                assert!(*qi == 0.0 || *ri > 0.0);
            }
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = build_gridworld(3, 0.1).unwrap();
        let text = m.to_json().unwrap();
        assert_eq!(GoalMdp::from_json(&text).unwrap(), m);
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["gamma"] = serde_json::json!(1.0);
        assert!(GoalMdp::from_json(&doc.to_string()).is_err());
    }

    #[test]
    fn expert_beats_random_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = build_gridworld(3, 0.2).unwrap().with_gamma(0.9).unwrap();
        let expert = expert_policy(&m).unwrap();
        let je = discounted_return_exact(&m, &expert).unwrap();
        for _ in 0..100 {
            let pi = Policy::random(&m, &mut rng);
            assert!(je >= discounted_return_exact(&m, &pi).unwrap() - 1e-9);
        }
    }
}
