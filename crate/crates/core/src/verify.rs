//! Numeric verification suites: conjugate catalogue, strong duality,
//! occupancy bounds and loss gradients.
//!
//! Every check records a measured error and the tolerance it must stay
//! within; a report passes iff every check does.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{gcsl, gofar, iql, smore, Features};
use crate::data::{collect_dataset, sample_batch, sample_goal_transition, CollectConfig, GoalSample};
use crate::divergence::{divergence_raw, Divergence, FDivergence};
use crate::dualcore::{
    closed_form_weight, inner_maximum, min_dual_at_policy, solve_dual_action_free, solve_dual_tabular,
    ActionFreeConfig, DualSolverConfig,
};
use crate::error::{Error, Result};
use crate::mdp::{build_chain, random_mdp, solve_occupancy, state_occupancy, EnvSpec, GoalMdp, Policy};
use crate::nn::{gradient_check, max_relative_error, numeric_gradient, DenseNet, Matrix};
use crate::occupancy::{
    exhaustive_policy_oracle, frank_wolfe_primal, mixture, entropy_bound_check, dataset_bound_check, uniform_active_rho,
    FrankWolfeConfig, MixtureProblem,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Conjugates,
    Duality,
    Bounds,
    Gradients,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["conjugates", "duality", "bounds", "gradients", "all"];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Conjugates => "conjugates",
            Suite::Duality => "duality",
            Suite::Bounds => "bounds",
            Suite::Gradients => "gradients",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Suite::Conjugates, Suite::Duality, Suite::Bounds, Suite::Gradients, Suite::All]
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite {s:?}; expected one of {}", Suite::NAMES.join(", "))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    /// Worst error observed; infinite when the computation itself failed.
    pub measured: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// Passes iff `measured <= tolerance` (NaN fails).
    pub fn bound(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            status: if measured <= tolerance { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            detail: None,
        }
    }

    fn from_result(name: impl Into<String>, tolerance: f64, r: Result<f64>) -> Self {
        match r {
            Ok(m) => Self::bound(name, m, tolerance),
            Err(e) => Self {
                detail: Some(e.to_string()),
                ..Self::bound(name, f64::INFINITY, tolerance)
            },
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn new(suite: impl Into<String>, checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(Check::passed);
        Self {
            suite: suite.into(),
            checks,
            pass,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

/// Runs a suite; `All` concatenates the four with suite-prefixed names.
pub fn run(suite: Suite) -> VerifyReport {
    match suite {
        Suite::Conjugates => conjugates_suite(),
        Suite::Duality => duality_suite(),
        Suite::Bounds => bounds_suite(),
        Suite::Gradients => gradients_suite(),
        Suite::All => {
            let checks = [conjugates_suite(), duality_suite(), bounds_suite(), gradients_suite()]
                .into_iter()
                .flat_map(|r| {
                    let prefix = r.suite;
                    r.checks.into_iter().map(move |c| Check {
                        name: format!("{prefix}/{}", c.name),
                        ..c
                    })
                })
                .collect();
            VerifyReport::new("all", checks)
        }
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn max_over(mut it: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    it.try_fold(0.0f64, |m, x| Ok(m.max(x?)))
}

/// Range of conjugate arguments sampled for each divergence; kept inside
/// the domain and where `(f')^{-1}(y) <= 30`.
fn conjugate_window(d: FDivergence) -> (f64, f64) {
    match d {
        FDivergence::TotalVariation => (-0.5, 0.5),
        FDivergence::JensenShannon => (-2.0, 0.6),
        FDivergence::SquaredHellinger => (-2.0, 0.8),
        _ => (-2.0, 2.0),
    }
}

pub fn conjugates_suite() -> VerifyReport {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let xs: Vec<f64> = grid(0.0, 30.0, 300_001).collect();
    for d in FDivergence::ALL {
        checks.push(Check::from_result(format!("{d}/generator_at_one"), 0.0, d.generator(1.0).map(f64::abs)));

        let h = 1e-3;
        let convex = max_over(grid(0.01, 10.0, 400).map(|x| {
            let second = d.generator(x + h)? - 2.0 * d.generator(x)? + d.generator(x - h)?;
            Ok((-second).max(0.0))
        }));
        checks.push(Check::from_result(format!("{d}/convexity"), 1e-9, convex));

        let fenchel = max_over(grid(0.05, 10.0, 100).map(|x| {
            let y = d.derivative(x)?;
            Ok((d.conjugate(y)? - (x * y - d.generator(x)?)).abs())
        }));
        checks.push(Check::from_result(format!("{d}/fenchel_young"), 1e-9, fenchel));

        // The total variation generator is not differentiable at 1, so it
        // has no inverse derivative.
        if d != FDivergence::TotalVariation {
            let (lo, hi) = conjugate_window(d);
            let step = 1e-5;
            let inverse = max_over(grid(lo, hi - step, 50).map(|y| {
                let central = (d.conjugate(y + step)? - d.conjugate(y - step)?) / (2.0 * step);
                let inv = d.derivative_inverse(y)?;
                Ok((central - inv).abs() / inv.abs().max(1.0))
            }));
            checks.push(Check::from_result(format!("{d}/conjugate_derivative"), 1e-7, inverse));
        }

        let (lo, hi) = conjugate_window(d);
        let ys: Vec<f64> = (0..20).map(|_| rng.gen_range(lo..hi)).collect();
        let biconj = max_over(ys.iter().map(|&y| {
            let mut sup = f64::NEG_INFINITY;
            for &x in &xs {
                sup = sup.max(x * y - d.generator(x)?);
            }
            Ok((sup - d.conjugate(y)?).abs())
        }));
        checks.push(Check::from_result(format!("{d}/biconjugation"), 1e-4, biconj));
    }
    VerifyReport::new("conjugates", checks)
}

/// A fixed matching instance for the duality certificates.
pub struct DualityInstance {
    pub name: &'static str,
    pub problem: MixtureProblem,
    /// The target is the occupancy of a deterministic policy, so the
    /// deterministic oracle attains the continuous optimum.
    pub achievable: bool,
}

/// Chain whose target equals the always-right occupancy from the middle.
pub fn achievable_chain(n: usize) -> Result<GoalMdp> {
    let mut initial = vec![0.0; n];
    initial[n - 2] = 1.0;
    let mut q_train = vec![0.0; n];
    q_train[n - 1] = 1.0;
    build_chain(n)?.with_gamma(0.5)?.with_initial(initial)?.with_q_train(q_train)
}

pub fn duality_instances() -> Result<Vec<DualityInstance>> {
    let chain3 = achievable_chain(3)?;
    let chain4 = achievable_chain(4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(211);
    let rand5 = random_mdp(&mut rng, 5, 2, 2, 0.8)?;
    let rand6 = random_mdp(&mut rng, 6, 3, 2, 0.8)?;
    let rand8 = random_mdp(&mut rng, 8, 2, 2, 0.7)?;
    let mk = |name, mdp: &GoalMdp, beta, achievable| -> Result<DualityInstance> {
        Ok(DualityInstance {
            name,
            problem: MixtureProblem::new(mdp.clone(), uniform_active_rho(mdp), beta)?,
            achievable,
        })
    };
    Ok(vec![
        mk("chain3_beta0.5", &chain3, 0.5, true)?,
        mk("chain4_beta1.0", &chain4, 1.0, true)?,
        mk("random5_beta0.5", &rand5, 0.5, false)?,
        mk("random6_beta0.5", &rand6, 0.5, false)?,
        mk("random8_beta0.5", &rand8, 0.5, false)?,
    ])
}

/// `|min_S L(S, pi) + D_f(Mix(d^pi, rho) || Mix(q, rho))|` at a policy,
/// with the divergence computed from the generator and the dual from `div`.
fn duality_value_gap(problem: &MixtureProblem, div: &dyn Divergence, policy: &Policy) -> Result<f64> {
    let d = solve_occupancy(&problem.mdp, policy)?.d;
    let beta = problem.beta();
    let primal = divergence_raw(&FDivergence::Chi2, &mixture(beta, &d, &problem.rho)?, &problem.mixed_target());
    let dual = min_dual_at_policy(problem, div, policy)?.value;
    match primal {
        Ok(p) => Ok((dual + p).abs()),
        // Infinite primal: the dual must be unbounded below.
        Err(Error::Support { .. }) if dual == f64::NEG_INFINITY => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Strong duality and closed-form weight checks with the chi-square
/// divergence.
pub fn duality_suite() -> VerifyReport {
    duality_suite_with(&FDivergence::Chi2)
}

/// [`duality_suite`] with the dual side computed from `div`, which should
/// behave as the chi-square divergence. The primal side always uses the
/// catalogue generator, so a faulty conjugate shows up as a duality gap.
pub fn duality_suite_with(div: &dyn Divergence) -> VerifyReport {
    let mut checks = Vec::new();
    let instances = match duality_instances() {
        Ok(v) => v,
        Err(e) => {
            return VerifyReport::new("duality", vec![Check::from_result("instances", 0.0, Err(e))]);
        }
    };
    let chi2 = FDivergence::Chi2;
    for inst in &instances {
        let p = &inst.problem;
        let fw = frank_wolfe_primal(p, &chi2, &FrankWolfeConfig::default());
        let dual = solve_dual_tabular(p, div, &DualSolverConfig::default());
        // An achievable target is the occupancy of a deterministic policy, so
        // the argmax of S is the recovered policy; elsewhere the optimum can
        // be stochastic and the soft policy is used.
        let attained = match (&fw, &dual) {
            (Ok(fw), Ok(dual)) => {
                let policy = if inst.achievable { &dual.greedy_policy } else { &dual.policy };
                p.policy_objective(&chi2, policy).map(|v| (v - fw.objective).abs())
            }
            (Err(e), _) | (_, Err(e)) => Err(Error::Numerical(e.to_string())),
        };
        checks.push(Check::from_result(format!("{}/dual_policy_vs_primal", inst.name), 1e-2, attained));

        let oracle = exhaustive_policy_oracle(p, &chi2);
        let vs_oracle = match (&fw, oracle) {
            (Ok(fw), Ok(o)) if inst.achievable => Ok((fw.objective - o.objective).abs()),
            // The continuous optimum can only be lower than the best
            // deterministic policy.
            (Ok(fw), Ok(o)) => Ok((fw.objective - o.objective).max(0.0)),
            (Err(e), _) => Err(Error::Numerical(e.to_string())),
            (_, Err(e)) => Err(e),
        };
        let (name, tol) = if inst.achievable {
            ("primal_matches_oracle", 1e-3)
        } else {
            ("primal_below_oracle", 1e-9)
        };
        checks.push(Check::from_result(format!("{}/{name}", inst.name), tol, vs_oracle));

        let gap = match &dual {
            Ok(dual) => duality_value_gap(p, div, &dual.greedy_policy),
            Err(e) => Err(Error::Numerical(e.to_string())),
        };
        checks.push(Check::from_result(format!("{}/duality_gap", inst.name), 1e-8, gap));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(307);
    let ws: Vec<f64> = grid(0.0, 20.0, 200_001).collect();
    let weight = max_over((0..1000).map(|_| {
        let y: f64 = rng.gen_range(-4.0..4.0);
        let mut best = f64::NEG_INFINITY;
        for &w in &ws {
            best = best.max(w * y - div.generator(w)?);
        }
        let closed = inner_maximum(div, y)?;
        if closed_form_weight(div, y)? < 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok((closed - best).abs())
    }));
    checks.push(Check::from_result("closed_form_weight", 1e-6, weight));

    let agree = (|| -> Result<f64> {
        let problem = &instances[0].problem;
        let mdp = &problem.mdp;
        let af = solve_dual_action_free(problem, div, &ActionFreeConfig::default())?;
        let full = solve_dual_tabular(problem, div, &DualSolverConfig::default())?;
        let fw = frank_wolfe_primal(problem, &chi2, &FrankWolfeConfig::default())?;
        let mut disagreements = 0;
        for g in (0..mdp.n_goals()).filter(|&g| mdp.q_train()[g] > 0.0) {
            let mu = state_occupancy(mdp, &fw.policy, g)?;
            for s in (0..mdp.n_states()).filter(|&s| mu[s] > 1e-9) {
                if af.greedy_policy.greedy_action(g, s) != full.greedy_policy.greedy_action(g, s) {
                    disagreements += 1;
                }
            }
        }
        Ok(disagreements as f64)
    })();
    checks.push(Check::from_result("chain3/action_free_agrees", 0.0, agree));
    VerifyReport::new("duality", checks)
}

fn random_triple_mdp(rng: &mut ChaCha8Rng) -> Result<GoalMdp> {
    let ns = rng.gen_range(2..=6);
    let na = rng.gen_range(1..=3);
    let ng = rng.gen_range(1..=ns.min(3));
    let gamma = rng.gen_range(0.5..0.95);
    random_mdp(rng, ns, na, ng, gamma)
}

/// Entropy-regularized return against soft-target matching, and the
/// dataset-regularized mixture bound, on random instances.
pub fn bounds_suite() -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let mut kl_gap: Result<f64> = Ok(0.0);
    let mut chi2_slack: Result<f64> = Ok(0.0);
    for _ in 0..50 {
        let r = (|| {
            let mdp = random_triple_mdp(&mut rng)?;
            let policy = Policy::random(&mdp, &mut rng);
            let alpha = rng.gen_range(0.2..5.0);
            entropy_bound_check(&mdp, &policy, alpha)
        })();
        match r {
            Ok(c) => {
                kl_gap = kl_gap.map(|m| m.max((c.lhs - c.rhs_kl).abs()));
                chi2_slack = chi2_slack.map(|m| m.max(c.rhs_chi2 - c.lhs));
            }
            Err(e) => {
                kl_gap = Err(Error::Numerical(e.to_string()));
                chi2_slack = Err(e);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(409);
    let mut tight: Result<f64> = Ok(0.0);
    let mut chi2: Result<f64> = Ok(0.0);
    for _ in 0..20 {
        let r = (|| {
            let mdp = random_triple_mdp(&mut rng)?;
            let policy = Policy::random(&mdp, &mut rng);
            let mut rho: Vec<f64> = (0..mdp.sag_len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = rho.iter().sum();
            rho.iter_mut().for_each(|x| *x /= total);
            let beta = rng.gen_range(0.1..1.0);
            dataset_bound_check(&mdp, &policy, &rho, beta)
        })();
        match r {
            Ok(c) => {
                tight = tight.map(|m| m.max(-c.slack_tight));
                chi2 = chi2.map(|m| m.max(-c.slack_chi2));
            }
            Err(e) => {
                tight = Err(Error::Numerical(e.to_string()));
                chi2 = Err(e);
            }
        }
    }
    // A non-negative slack measures as zero violation.
    let clamp = |r: Result<f64>| r.map(|v| v.max(0.0));
    VerifyReport::new(
        "bounds",
        vec![
            Check::from_result("kl_identity_tight", 1e-6, kl_gap),
            Check::from_result("chi2_lower_bound", 1e-9, clamp(chi2_slack)),
            Check::from_result("mixture_bound", 1e-9, clamp(tight)),
            Check::from_result("mixture_bound_chi2", 1e-9, clamp(chi2)),
        ],
    )
}

struct GradFixture {
    f: Features,
    phi: Vec<usize>,
    rho: Vec<GoalSample>,
    q: Vec<GoalSample>,
    rng: ChaCha8Rng,
}

impl GradFixture {
    fn new() -> Result<Self> {
        let env = EnvSpec::gridworld(3, 0.1);
        let mdp = env.build()?;
        let data = collect_dataset(
            &env,
            &CollectConfig {
                n_episodes: 8,
                horizon: 10,
                expert_fraction: 0.5,
                ..Default::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(503);
        let rho = sample_batch(&data, 6, 0.8, &mut rng)?;
        let q = sample_goal_transition(&data, 0.8, 5, &mut rng)?;
        Ok(Self {
            f: Features::of(&mdp),
            phi: mdp.phi().to_vec(),
            rho,
            q,
            rng,
        })
    }

    fn net(&mut self, hidden: &[usize], out: usize) -> Result<DenseNet<f64>> {
        DenseNet::new(&self.f.net_sizes(hidden, out), &mut self.rng)
    }
}

/// Relative error between an analytic parameter gradient and central
/// differences of `loss`.
fn fd_error(net: &DenseNet<f64>, analytic: &[f64], loss: impl Fn(&DenseNet<f64>) -> Result<f64>) -> Result<f64> {
    let mut probe = net.clone();
    let mut failure = None;
    let fd = numeric_gradient(net.params(), 1e-5, |p| {
        probe.params_mut().copy_from_slice(p);
        loss(&probe).unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(max_relative_error(analytic, &fd)),
    }
}

/// Finite-difference checks of every agent loss and of backpropagation.
pub fn gradients_suite() -> VerifyReport {
    const TOL: f64 = 1e-4;
    let checks = match gradient_checks() {
        Ok(list) => list.into_iter().map(|(name, r)| Check::from_result(name, TOL, r)).collect(),
        Err(e) => vec![Check::from_result("fixture", TOL, Err(e))],
    };
    VerifyReport::new("gradients", checks)
}

fn gradient_checks() -> Result<Vec<(String, Result<f64>)>> {
    let mut x = GradFixture::new()?;
    let (f, rho, q) = (x.f, x.rho.clone(), x.q.clone());
    let mut out: Vec<(String, Result<f64>)> = Vec::new();

    let mlp = DenseNet::<f64>::new(&[4, 7, 5, 3], &mut x.rng)?;
    let batch = Matrix::new(5, 4, (0..20).map(|k| (k as f64 * 0.37).sin()).collect())?;
    let target: Vec<f64> = (0..15).map(|k| (k as f64 * 0.11).cos()).collect();
    out.push((
        "mlp_backprop".into(),
        gradient_check(&mlp, &batch, |y| {
            let n = y.data().len() as f64;
            let diff: Vec<f64> = y.data().iter().zip(&target).map(|(a, b)| a - b).collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
            (loss, Matrix::new(y.rows(), y.cols(), diff.iter().map(|d| 2.0 * d / n).collect()).expect("shape"))
        }),
    ));

    let (s, m, pi) = (x.net(&[6, 6], 5)?, x.net(&[6], 1)?, x.net(&[6], 5)?);
    let targets = smore::score_targets(&s, &m, &pi, &f, &rho, &q)?;
    for beta in [0.5, 1.0] {
        let (_, g) = smore::score_objective(&s, &f, beta, 0.99, &rho, &q, &targets)?;
        let err = fd_error(&s, &g, |n| Ok(smore::score_objective(n, &f, beta, 0.99, &rho, &q, &targets)?.0));
        out.push((format!("smore_score_beta{beta}"), err));
    }
    let (_, g) = smore::expectile_objective(&s, &m, &f, 0.8, &rho)?;
    out.push((
        "smore_expectile".into(),
        fd_error(&m, &g, |n| Ok(smore::expectile_objective(&s, n, &f, 0.8, &rho)?.0)),
    ));
    let (_, g) = smore::policy_objective(&s, &m, &pi, &f, 3.0, 100.0, &rho)?;
    out.push((
        "smore_policy".into(),
        fd_error(&pi, &g, |n| Ok(smore::policy_objective(&s, &m, n, &f, 3.0, 100.0, &rho)?.0)),
    ));

    let (qn, v) = (x.net(&[6], 5)?, x.net(&[6], 1)?);
    let (_, g) = iql::value_objective(&qn, &v, &f, 0.8, &rho)?;
    out.push((
        "iql_value".into(),
        fd_error(&v, &g, |n| Ok(iql::value_objective(&qn, n, &f, 0.8, &rho)?.0)),
    ));
    let phi = x.phi.clone();
    let (_, g) = iql::q_objective(&qn, &v, &f, &phi, 0.99, &rho)?;
    out.push((
        "iql_q".into(),
        fd_error(&qn, &g, |n| Ok(iql::q_objective(n, &v, &f, &phi, 0.99, &rho)?.0)),
    ));
    let (_, g) = iql::policy_objective(&qn, &v, &pi, &f, 3.0, 100.0, &rho)?;
    out.push((
        "iql_policy".into(),
        fd_error(&pi, &g, |n| Ok(iql::policy_objective(&qn, &v, n, &f, 3.0, 100.0, &rho)?.0)),
    ));

    let disc = x.net(&[6], 1)?;
    let (_, g) = gofar::discriminator_objective(&disc, &f, &q, &rho)?;
    out.push((
        "gofar_discriminator".into(),
        fd_error(&disc, &g, |n| Ok(gofar::discriminator_objective(n, &f, &q, &rho)?.0)),
    ));
    let reward = gofar::pseudo_reward(&disc, &f, 10.0, &rho)?;
    let (_, g) = gofar::value_objective(&v, &f, 0.99, &reward, &rho)?;
    out.push((
        "gofar_value".into(),
        fd_error(&v, &g, |n| Ok(gofar::value_objective(n, &f, 0.99, &reward, &rho)?.0)),
    ));
    let (_, g) = gofar::policy_objective(&v, &pi, &f, 0.99, 100.0, &reward, &rho)?;
    out.push((
        "gofar_policy".into(),
        fd_error(&pi, &g, |n| Ok(gofar::policy_objective(&v, n, &f, 0.99, 100.0, &reward, &rho)?.0)),
    ));

    let (_, g) = gcsl::cloning_objective(&pi, &f, &rho)?;
    out.push((
        "gcsl_cloning".into(),
        fd_error(&pi, &g, |n| Ok(gcsl::cloning_objective(n, &f, &rho)?.0)),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().as_str(), name);
        }
        assert!("dual".parse::<Suite>().is_err());
    }

    #[test]
    fn report_passes_iff_every_check_does() {
        let ok = VerifyReport::new("x", vec![Check::bound("a", 0.5, 1.0), Check::bound("b", 1.0, 1.0)]);
        assert!(ok.pass);
        let bad = VerifyReport::new("x", vec![Check::bound("a", 0.5, 1.0), Check::bound("b", f64::NAN, 1.0)]);
        assert!(!bad.pass);
        assert_eq!(bad.failures().next().unwrap().name, "b");
    }

    #[test]
    fn conjugates_suite_passes() {
        let r = conjugates_suite();
        assert!(r.pass, "{:#?}", r.failures().collect::<Vec<_>>());
        assert_eq!(r.checks.len(), 5 * 5 - 1);
    }

    #[test]
    fn bounds_suite_passes() {
        let r = bounds_suite();
        assert!(r.pass, "{:#?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn gradients_suite_passes() {
        let r = gradients_suite();
        assert!(r.pass, "{:#?}", r.failures().collect::<Vec<_>>());
        assert_eq!(r.checks.len(), 12);
    }

    /// Chi-square with the conjugate's sign flipped; everything else intact.
    struct FlippedConjugate;

    impl Divergence for FlippedConjugate {
        fn name(&self) -> &'static str {
            "chi2"
        }
        fn generator(&self, x: f64) -> Result<f64> {
            FDivergence::Chi2.generator(x)
        }
        fn derivative(&self, x: f64) -> Result<f64> {
            FDivergence::Chi2.derivative(x)
        }
        fn derivative_inverse(&self, y: f64) -> Result<f64> {
            FDivergence::Chi2.derivative_inverse(y)
        }
        fn conjugate(&self, y: f64) -> Result<f64> {
            Ok(-FDivergence::Chi2.conjugate(y)?)
        }
        fn conjugate_derivative(&self, y: f64) -> Result<f64> {
            FDivergence::Chi2.conjugate_derivative(y)
        }
        fn conjugate_domain(&self) -> &'static str {
            FDivergence::Chi2.conjugate_domain()
        }
    }

    #[test]
    fn duality_suite_passes() {
        let r = duality_suite();
        assert!(r.pass, "{:#?}", r.checks);
        assert_eq!(r.checks.len(), 5 * 3 + 2);
    }

    #[test]
    fn flipped_conjugate_fails_duality_gap() {
        let r = duality_suite_with(&FlippedConjugate);
        assert!(!r.pass);
        assert!(r.failures().any(|c| c.name.ends_with("/duality_gap")), "{:#?}", r.checks);
    }
}
