//! Experiment configuration, sweep expansion and per-seed runs.
//!
//! A configuration has the sections `[env]`, `[data]`, `[agent]` and
//! `[eval]` plus an optional top-level `out`. Keys missing from a section
//! take the desk defaults; unknown keys are errors. In a sweep any scalar
//! key of the first three sections may be given as a list, and list-valued
//! keys (`agent.hidden`, `env.test_goals`) as a list of lists.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::agents::{train, AgentConfig, AgentKind};
use crate::data::{collect_dataset, CollectConfig, OfflineDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, perf_drop, Metrics, MetricRow, SummaryRow};
use crate::mdp::{EnvSpec, GoalMdp};

/// Added to a training seed to seed its evaluation rollouts.
pub const EVAL_SEED_OFFSET: u64 = 1 << 32;

const SECTIONS: [&str; 4] = ["env", "data", "agent", "eval"];
const LIST_KEYS: [&str; 2] = ["env.test_goals", "agent.hidden"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Gridworld,
    Chain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(rename = "type")]
    pub kind: EnvKind,
    pub size: usize,
    pub slip: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_goals: Option<Vec<usize>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Gridworld,
            size: 5,
            slip: 0.0,
            gamma: 0.99,
            test_goals: None,
        }
    }
}

impl EnvConfig {
    pub fn spec(&self) -> Result<EnvSpec> {
        match self.kind {
            EnvKind::Gridworld => Ok(EnvSpec::Gridworld {
                side: self.size,
                slip: self.slip,
                gamma: self.gamma,
                test_goals: self.test_goals.clone(),
            }),
            EnvKind::Chain => {
                if self.slip != 0.0 || self.test_goals.is_some() {
                    return Err(Error::invalid("chain environments take neither slip nor test_goals"));
                }
                Ok(EnvSpec::Chain {
                    length: self.size,
                    gamma: self.gamma,
                })
            }
        }
    }

    /// Short name used in result tables, e.g. `gridworld5`.
    pub fn label(&self) -> String {
        let kind = match self.kind {
            EnvKind::Gridworld => "gridworld",
            EnvKind::Chain => "chain",
        };
        format!("{kind}{}", self.size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub horizon: usize,
    /// Training seeds; each seed trains and evaluates one agent.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            horizon: 50,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.horizon == 0 {
            return Err(Error::invalid("eval.episodes and eval.horizon must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("eval.seeds must not be empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub data: CollectConfig,
    pub agent: AgentKind,
    pub hyper: AgentConfig,
    /// Training steps between logged evaluations; 0 logs only the end.
    pub eval_interval: u64,
    pub eval: EvalConfig,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            data: CollectConfig::default(),
            agent: AgentKind::Smore,
            hyper: AgentConfig::desk(),
            eval_interval: 5_000,
            eval: EvalConfig::default(),
            out: None,
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config sections serialize to tables"),
    }
}

fn section<'de, T: Deserialize<'de>>(name: &str, table: Table) -> Result<T> {
    T::deserialize(Value::Table(table)).map_err(|e| Error::invalid(format!("[{name}]: {}", e.message())))
}

fn overlay(mut base: Table, user: Option<&Value>, name: &str) -> Result<Table> {
    match user {
        None => Ok(base),
        Some(Value::Table(t)) => {
            for (k, v) in t {
                base.insert(k.clone(), v.clone());
            }
            Ok(base)
        }
        Some(_) => Err(Error::invalid(format!("{name} must be a section"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::invalid(e.message().to_string()))?;
        Self::from_table(&table)
    }

    /// Builds a configuration from a parsed document with scalar values.
    pub fn from_table(table: &Table) -> Result<Self> {
        for key in table.keys() {
            if !SECTIONS.contains(&key.as_str()) && key != "out" {
                return Err(Error::invalid(format!("unknown top-level key {key:?}")));
            }
        }
        let d = Self::default();
        let env: EnvConfig = section("env", overlay(to_table(&d.env), table.get("env"), "env")?)?;
        let data: CollectConfig = section("data", overlay(to_table(&d.data), table.get("data"), "data")?)?;
        let mut agent = overlay(to_table(&d.hyper), table.get("agent"), "agent")?;
        let kind = match agent.remove("name") {
            None => d.agent,
            Some(Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::invalid(format!("agent.name must be a string, got {v}"))),
        };
        let eval_interval = match agent.remove("eval_interval") {
            None => d.eval_interval,
            Some(Value::Integer(i)) if i >= 0 => i as u64,
            Some(v) => return Err(Error::invalid(format!("agent.eval_interval must be a nonnegative integer, got {v}"))),
        };
        let hyper: AgentConfig = section("agent", agent)?;
        let eval: EvalConfig = section("eval", overlay(to_table(&d.eval), table.get("eval"), "eval")?)?;
        let out = match table.get("out") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(v) => return Err(Error::invalid(format!("out must be a string, got {v}"))),
        };
        let config = Self {
            env,
            data,
            agent: kind,
            hyper,
            eval_interval,
            eval,
            out,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.spec()?.build()?;
        if !(0.0..=1.0).contains(&self.data.expert_fraction) {
            return Err(Error::invalid(format!(
                "data.expert_fraction {} outside [0, 1]",
                self.data.expert_fraction
            )));
        }
        if self.data.n_episodes == 0 || self.data.horizon == 0 {
            return Err(Error::invalid("data.n_episodes and data.horizon must be positive"));
        }
        self.hyper.validate()?;
        self.eval.validate()
    }

    /// The full configuration, defaults included, as a document.
    pub fn to_table(&self) -> Table {
        let mut agent = Table::new();
        agent.insert("name".into(), Value::String(self.agent.as_str().into()));
        agent.insert("eval_interval".into(), Value::Integer(self.eval_interval as i64));
        agent.extend(to_table(&self.hyper));
        let mut t = Table::new();
        t.insert("env".into(), Value::Table(to_table(&self.env)));
        t.insert("data".into(), Value::Table(to_table(&self.data)));
        t.insert("agent".into(), Value::Table(agent));
        t.insert("eval".into(), Value::Table(to_table(&self.eval)));
        if let Some(out) = &self.out {
            t.insert("out".into(), Value::String(out.display().to_string()));
        }
        t
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("plain tables serialize")
    }

    /// Everything that determines a trained agent, for resume checks.
    pub fn training_identity(&self) -> Table {
        let mut t = self.to_table();
        t.remove("out");
        if let Some(Value::Table(eval)) = t.get_mut("eval") {
            eval.remove("episodes");
        }
        t
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        self.env.spec()
    }

    pub fn build(&self) -> Result<GoalMdp> {
        self.env.spec()?.build()
    }

    pub fn dataset(&self) -> Result<OfflineDataset> {
        collect_dataset(&self.env.spec()?, &self.data)
    }
}

/// Trains on `dataset` with `seed` and evaluates greedily.
pub fn run_seed(config: &ExperimentConfig, mdp: &GoalMdp, dataset: &OfflineDataset, seed: u64) -> Result<Metrics> {
    let agent = train(config.agent, mdp, dataset, &config.hyper, seed)?;
    evaluate(mdp, &agent, config.eval.episodes, config.eval.horizon, seed.wrapping_add(EVAL_SEED_OFFSET))
}

/// One point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Swept keys other than the agent name, `key=value` joined by commas;
    /// `default` when nothing but the agent varies.
    pub setting: String,
    pub config: ExperimentConfig,
}

fn is_swept(key: &str, v: &Value) -> bool {
    match v {
        Value::Array(items) if LIST_KEYS.contains(&key) => items.iter().all(Value::is_array) && !items.is_empty(),
        Value::Array(_) => true,
        _ => false,
    }
}

fn show(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Cartesian product of every list-valued key, in key order with values in
/// listed order.
pub fn expand_sweep(table: &Table) -> Result<Vec<Cell>> {
    let mut axes: BTreeMap<String, Vec<Value>> = BTreeMap::new();
    for (name, sec) in table {
        let Value::Table(sec) = sec else { continue };
        if name == "eval" {
            continue;
        }
        for (k, v) in sec {
            let key = format!("{name}.{k}");
            if is_swept(&key, v) {
                let Value::Array(items) = v else { unreachable!() };
                if items.is_empty() {
                    return Err(Error::invalid(format!("sweep list {key} is empty")));
                }
                axes.insert(key, items.clone());
            }
        }
    }
    let keys: Vec<&String> = axes.keys().collect();
    let total: usize = axes.values().map(Vec::len).product();
    let mut cells = Vec::with_capacity(total);
    for mut i in 0..total {
        // Last key varies fastest.
        let mut pick = vec![0; keys.len()];
        for (j, k) in keys.iter().enumerate().rev() {
            let n = axes[*k].len();
            pick[j] = i % n;
            i /= n;
        }
        let mut t = table.clone();
        let mut label = Vec::new();
        for (j, k) in keys.iter().enumerate() {
            let v = axes[*k][pick[j]].clone();
            let (sec, field) = k.split_once('.').expect("dotted key");
            if let Some(Value::Table(s)) = t.get_mut(sec) {
                s.insert(field.to_string(), v.clone());
            }
            if k.as_str() != "agent.name" {
                label.push(format!("{k}={}", show(&v)));
            }
        }
        let setting = if label.is_empty() { "default".to_string() } else { label.join(",") };
        cells.push(Cell {
            setting,
            config: ExperimentConfig::from_table(&t)?,
        });
    }
    Ok(cells)
}

/// Trains and evaluates every (cell, seed) pair on at most `jobs` threads.
/// Rows come back in cell, seed, metric order whatever the thread count.
pub fn run_cells(cells: &[Cell], jobs: usize) -> Result<Vec<MetricRow>> {
    // One dataset per distinct environment and collection config.
    let mut datasets: Vec<((EnvConfig, CollectConfig), (GoalMdp, OfflineDataset))> = Vec::new();
    for c in cells {
        let key = (c.config.env.clone(), c.config.data.clone());
        if !datasets.iter().any(|(k, _)| *k == key) {
            datasets.push((key, (c.config.build()?, c.config.dataset()?)));
        }
    }
    let tasks: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.config.eval.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<Metrics>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, seed)| {
                let cfg = &cells[i].config;
                let (_, (mdp, data)) = datasets
                    .iter()
                    .find(|(k, _)| k.0 == cfg.env && k.1 == cfg.data)
                    .expect("dataset built above");
                run_seed(cfg, mdp, data, seed)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(tasks.len() * Metrics::NAMES.len());
    for (&(i, seed), m) in tasks.iter().zip(results) {
        let m = m?;
        let c = &cells[i];
        for name in Metrics::NAMES {
            rows.push(MetricRow {
                env: c.config.env.label(),
                agent: c.config.agent.as_str().to_string(),
                setting: c.setting.clone(),
                seed,
                metric: name.to_string(),
                value: m.get(name).expect("known metric"),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfDropRow {
    pub env: String,
    pub agent: String,
    pub base: String,
    pub setting: String,
    pub mean_base: f64,
    pub mean_setting: f64,
    pub drop: f64,
}

/// Relative change of the mean discounted return of every setting against
/// `base`, per (env, agent).
pub fn perf_drops(summary: &[SummaryRow], base: &str) -> Vec<PerfDropRow> {
    let returns: Vec<&SummaryRow> = summary.iter().filter(|r| r.metric == "discounted_return").collect();
    let mut out = Vec::new();
    for b in returns.iter().filter(|r| r.setting == base) {
        for r in returns.iter().filter(|r| r.env == b.env && r.agent == b.agent && r.setting != base) {
            out.push(PerfDropRow {
                env: r.env.clone(),
                agent: r.agent.clone(),
                base: base.to_string(),
                setting: r.setting.clone(),
                mean_base: b.mean,
                mean_setting: r.mean,
                drop: perf_drop(b.mean, r.mean),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let c = ExperimentConfig::parse(
            "out = \"runs\"\n[env]\nslip = 0.2\n[data]\nexpert_fraction = 0.05\n[agent]\nname = \"gcsl\"\nbeta = 0.7\nhidden = [8]\n[eval]\nseeds = [3]\n",
        )
        .unwrap();
        assert_eq!(c.env.slip, 0.2);
        assert_eq!(c.data.expert_fraction, 0.05);
        assert_eq!(c.agent, AgentKind::Gcsl);
        assert_eq!(c.hyper.beta, 0.7);
        assert_eq!(c.hyper.hidden, vec![8]);
        assert_eq!(c.hyper.batch_size, AgentConfig::desk().batch_size);
        assert_eq!(c.eval.seeds, vec![3]);
        assert_eq!(c.out, Some(PathBuf::from("runs")));
    }

    #[test]
    fn unknown_keys_are_errors() {
        for doc in [
            "[env]\nslipp = 0.1\n",
            "[data]\nexpert = 0.1\n",
            "[agent]\nlearning_rate = 0.1\n",
            "[eval]\nepisode = 3\n",
            "[train]\nsteps = 1\n",
            "seed = 3\n",
        ] {
            assert!(ExperimentConfig::parse(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn out_of_range_values_are_errors() {
        for doc in [
            "[agent]\nname = \"dqn\"\n",
            "[agent]\nbeta = 1.5\n",
            "[env]\nslip = 1.0\n",
            "[env]\ntype = \"chain\"\nslip = 0.1\n",
            "[data]\nexpert_fraction = 2.0\n",
            "[eval]\nseeds = []\n",
        ] {
            assert!(ExperimentConfig::parse(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn document_round_trip() {
        let c = ExperimentConfig::parse("[agent]\nname = \"iql_sparse\"\nhidden = [16, 8]\n").unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn sweep_is_a_cartesian_product() {
        let t: Table = "[env]\nslip = [0.0, 0.2, 0.4]\n[agent]\nname = [\"smore\", \"gcsl\"]\nhidden = [[8], [16]]\n"
            .parse()
            .unwrap();
        let cells = expand_sweep(&t).unwrap();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].setting, "agent.hidden=[8],env.slip=0.0");
        assert_eq!(cells[0].config.agent, AgentKind::Smore);
        assert_eq!(cells[1].config.agent, AgentKind::Smore);
        assert_eq!(cells[1].config.env.slip, 0.2);
        assert_eq!(cells[3].config.agent, AgentKind::Gcsl);
        assert_eq!(cells[11].config.hyper.hidden, vec![16]);
    }

    #[test]
    fn plain_list_keys_are_not_swept() {
        let t: Table = "[agent]\nhidden = [8, 8]\n".parse().unwrap();
        let cells = expand_sweep(&t).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].setting, "default");
        assert_eq!(cells[0].config.hyper.hidden, vec![8, 8]);
    }

    #[test]
    fn beta_grid_expands_to_four_cells() {
        let t: Table = "[agent]\nbeta = [0.5, 0.7, 0.8, 0.9]\n".parse().unwrap();
        let settings: Vec<String> = expand_sweep(&t).unwrap().into_iter().map(|c| c.setting).collect();
        assert_eq!(settings, ["agent.beta=0.5", "agent.beta=0.7", "agent.beta=0.8", "agent.beta=0.9"]);
    }

    fn tiny_cells(jobs_doc: &str) -> Vec<Cell> {
        let doc = format!(
            "[env]\nsize = 3\n[data]\nn_episodes = 6\nhorizon = 8\n[agent]\nname = [\"smore\", \"gcsl\"]\nhidden = [8]\nbatch_size = 8\ntotal_steps = 20\n[eval]\nepisodes = 10\nhorizon = 8\nseeds = [0, 1]\n{jobs_doc}"
        );
        expand_sweep(&doc.parse().unwrap()).unwrap()
    }

    #[test]
    fn rows_do_not_depend_on_thread_count() {
        let cells = tiny_cells("");
        let one = run_cells(&cells, 1).unwrap();
        let three = run_cells(&cells, 3).unwrap();
        assert_eq!(one, three);
        assert_eq!(one.len(), 2 * 2 * 3);
        assert_eq!((one[0].agent.as_str(), one[0].seed), ("smore", 0));
    }

    #[test]
    fn perf_drop_against_base_setting() {
        let row = |setting: &str, agent: &str, mean: f64| SummaryRow {
            env: "gridworld5".into(),
            setting: setting.into(),
            metric: "discounted_return".into(),
            agent: agent.into(),
            n_seeds: 5,
            mean,
            std: 0.0,
            p_value: None,
            star: false,
        };
        let s = vec![row("a", "smore", 20.0), row("b", "smore", 15.0), row("b", "gcsl", 1.0)];
        let d = perf_drops(&s, "a");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].drop, -0.25);
    }
}
