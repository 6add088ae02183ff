use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use smore_core::agents::{Agent, Trainer, TrainingState};
use smore_core::data::{export_csv, save_dataset};
use smore_core::eval::{aggregate, evaluate, markdown_table, mean_std, write_rows_csv, Metrics, MetricRow};
use smore_core::experiment::{expand_sweep, perf_drops, run_cells, ExperimentConfig, EVAL_SEED_OFFSET};
use smore_core::verify::{self, Suite};
use toml::{Table, Value};

use crate::{Cli, Command};

pub enum Failure {
    /// Bad or inconsistent configuration; exit code 2.
    Config(anyhow::Error),
    /// A verification check failed; exit code 1.
    Check(String),
    /// Anything else that went wrong while running; exit code 1.
    Runtime(anyhow::Error),
}

type Outcome<T = ()> = Result<T, Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

const DEFAULT_OUT: &str = "smore-out";
pub const THREADS_ENV: &str = "SMORE_LAB_THREADS";

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Verify { suite } => cmd_verify(cli, suite),
        Command::GenData => cmd_gen_data(cli),
        Command::Train => cmd_train(cli),
        Command::Eval { checkpoint } => cmd_eval(cli, checkpoint.as_deref()),
        Command::Sweep => cmd_sweep(cli),
        Command::Report => cmd_report(&out_dir(cli, None)),
    }
}

/// The config document with command-line overrides applied.
fn load_table(cli: &Cli) -> Outcome<Table> {
    let mut table = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(config_err)?;
            text.parse::<Table>()
                .map_err(|e| config_err(anyhow!("{}: {}", path.display(), e.message())))?
        }
        None => Table::new(),
    };
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| config_err(anyhow!("--seed {seed} is too large")))?;
        for (section, key, value) in [
            ("data", "seed", Value::Integer(seed)),
            ("eval", "seeds", Value::Array(vec![Value::Integer(seed)])),
        ] {
            match table.entry(section).or_insert_with(|| Value::Table(Table::new())) {
                Value::Table(t) => {
                    t.insert(key.into(), value);
                }
                _ => return Err(config_err(anyhow!("{section} must be a section"))),
            }
        }
    }
    if let Some(out) = &cli.out {
        table.insert("out".into(), Value::String(out.display().to_string()));
    }
    Ok(table)
}

fn load_config(cli: &Cli) -> Outcome<ExperimentConfig> {
    ExperimentConfig::from_table(&load_table(cli)?).map_err(config_err)
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime_err)
}

/// `--jobs` (default: available cores), capped by `SMORE_LAB_THREADS`.
fn jobs(cli: &Cli) -> Outcome<usize> {
    let wanted = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map(usize::from).unwrap_or(1));
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| config_err(anyhow!("{THREADS_ENV}={v:?} is not a positive integer")))?,
        Err(_) => usize::MAX,
    };
    Ok(wanted.clamp(1, cap))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    // Write then rename so an interrupted run never leaves a torn file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime_err)
}

fn csv_bytes<T: serde::Serialize>(rows: &[T]) -> Outcome<Vec<u8>> {
    let mut buf = Vec::new();
    write_rows_csv(&mut buf, rows).map_err(runtime_err)?;
    Ok(buf)
}

fn cmd_verify(cli: &Cli, suite: &str) -> Outcome {
    let suite: Suite = suite.parse().map_err(config_err)?;
    let report = verify::run(suite);
    let json = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
    println!("{json}");
    if let Some(dir) = &cli.out {
        create_dir(dir)?;
        write_file(&dir.join(format!("verify_{suite}.json")), json.as_bytes())?;
    }
    if report.pass {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(Failure::Check(names.join(", ")))
    }
}

fn cmd_gen_data(cli: &Cli) -> Outcome {
    let config = load_config(cli)?;
    let dir = out_dir(cli, Some(&config));
    create_dir(&dir)?;
    let data = config.dataset().map_err(runtime_err)?;
    let path = dir.join("dataset.bin");
    save_dataset(&data, &path).map_err(runtime_err)?;
    let mut csv = Vec::new();
    export_csv(&mut csv, &data).map_err(runtime_err)?;
    write_file(&dir.join("dataset.csv"), &csv)?;
    println!("{}", path.display());
    eprintln!("{} transitions in {} episodes", data.len(), data.episodes().len());
    Ok(())
}

const LOG_HEADER: &str = "step,losses,discounted_return,success_rate,final_distance\n";

fn log_line(step: u64, losses: &[(&str, f64)], m: &Metrics) -> Outcome<Vec<u8>> {
    let joined: Vec<String> = losses.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize((step, joined.join(";"), m.discounted_return, m.success_rate, m.final_distance))
        .map_err(runtime_err)?;
    w.into_inner().map_err(|e| runtime_err(anyhow!("{e}")))
}

fn flatten(t: &Table) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (k, v) in t {
        match v {
            Value::Table(inner) => out.extend(flatten(inner).into_iter().map(|(ik, iv)| (format!("{k}.{ik}"), iv))),
            other => out.push((k.clone(), other.to_string())),
        }
    }
    out
}

fn first_difference(a: &Table, b: &Table) -> Option<String> {
    let (fa, fb) = (flatten(a), flatten(b));
    for (k, v) in &fa {
        match fb.iter().find(|(kb, _)| kb == k) {
            Some((_, vb)) if vb == v => {}
            Some((_, vb)) => return Some(format!("{k}: {vb} in the run, {v} now")),
            None => return Some(format!("{k} missing from the run")),
        }
    }
    fb.iter()
        .find(|(k, _)| !fa.iter().any(|(ka, _)| ka == k))
        .map(|(k, _)| format!("{k} only in the run"))
}

fn cmd_train(cli: &Cli) -> Outcome {
    let config = load_config(cli)?;
    let dir = out_dir(cli, Some(&config));
    create_dir(&dir)?;
    let seed = config.eval.seeds[0];
    let ckpt = dir.join("agent.ckpt");
    let state_path = dir.join("train_state.json");
    let identity_path = dir.join("train_config.toml");
    let log_path = dir.join("train_log.csv");
    let identity = config.training_identity();

    let mdp = config.build().map_err(runtime_err)?;
    let data = config.dataset().map_err(runtime_err)?;
    let mut trainer = if identity_path.exists() {
        let stored: Table = fs::read_to_string(&identity_path)
            .map_err(anyhow::Error::from)
            .and_then(|s| s.parse().map_err(anyhow::Error::from))
            .with_context(|| format!("reading {}", identity_path.display()))
            .map_err(runtime_err)?;
        if let Some(diff) = first_difference(&identity, &stored) {
            return Err(config_err(anyhow!(
                "refusing to resume the run in {}: config differs ({diff})",
                dir.display()
            )));
        }
        let agent = Agent::load(&ckpt).map_err(runtime_err)?;
        let state: TrainingState = fs::read_to_string(&state_path)
            .map_err(anyhow::Error::from)
            .and_then(|s| serde_json::from_str(&s).map_err(anyhow::Error::from))
            .with_context(|| format!("reading {}", state_path.display()))
            .map_err(runtime_err)?;
        eprintln!("resuming at step {}", state.steps_done);
        Trainer::resume(agent, state, seed).map_err(runtime_err)?
    } else {
        let trainer = Trainer::new(config.agent, &mdp, config.hyper.clone(), seed).map_err(config_err)?;
        write_file(&log_path, LOG_HEADER.as_bytes())?;
        write_file(&ckpt, &[])?;
        trainer.agent.save(&ckpt).map_err(runtime_err)?;
        write_file(&state_path, serde_json::to_string(&trainer.state()).map_err(runtime_err)?.as_bytes())?;
        write_file(&identity_path, toml::to_string(&identity).map_err(runtime_err)?.as_bytes())?;
        trainer
    };

    let total = trainer.agent.planned_steps();
    let every = config.eval_interval;
    let eval_seed = seed.wrapping_add(EVAL_SEED_OFFSET);
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))
        .map_err(runtime_err)?;
    let mut record = |trainer: &Trainer, losses: &[(&str, f64)]| -> Outcome {
        let step = trainer.agent.steps_done();
        let m = evaluate(&mdp, &trainer.agent, config.eval.episodes, config.eval.horizon, eval_seed).map_err(runtime_err)?;
        trainer.agent.save(&ckpt).map_err(runtime_err)?;
        write_file(&state_path, serde_json::to_string(&trainer.state()).map_err(runtime_err)?.as_bytes())?;
        log.write_all(&log_line(step, losses, &m)?).map_err(runtime_err)?;
        eprintln!("step {step}/{total}: return {:.3}, success {:.3}", m.discounted_return, m.success_rate);
        Ok(())
    };
    if total == 0 && trainer.agent.steps_done() == 0 && fs::metadata(&log_path).map(|m| m.len()).unwrap_or(0) == LOG_HEADER.len() as u64 {
        record(&trainer, &[])?;
    }
    while !trainer.finished() {
        let losses = trainer.step(&mdp, &data).map_err(runtime_err)?;
        let k = trainer.agent.steps_done();
        if (every > 0 && k % every == 0) || k == total {
            record(&trainer, &losses)?;
        }
    }
    println!("{}", ckpt.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, checkpoint: Option<&Path>) -> Outcome {
    let config = load_config(cli)?;
    let dir = out_dir(cli, Some(&config));
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.join("agent.ckpt"));
    let agent = Agent::load(&ckpt)
        .with_context(|| format!("loading {}", ckpt.display()))
        .map_err(runtime_err)?;
    let mdp = config.build().map_err(runtime_err)?;
    let f = agent.features;
    if (f.n_states, f.n_actions, f.n_goals) != (mdp.n_states(), mdp.n_actions(), mdp.n_goals()) {
        return Err(config_err(anyhow!(
            "checkpoint was trained on {} states, {} actions and {} goals; the config builds {}, {} and {}",
            f.n_states,
            f.n_actions,
            f.n_goals,
            mdp.n_states(),
            mdp.n_actions(),
            mdp.n_goals()
        )));
    }
    let mut rows = Vec::new();
    for &seed in &config.eval.seeds {
        let m = evaluate(&mdp, &agent, config.eval.episodes, config.eval.horizon, seed.wrapping_add(EVAL_SEED_OFFSET))
            .map_err(runtime_err)?;
        for name in Metrics::NAMES {
            rows.push(MetricRow {
                env: config.env.label(),
                agent: agent.kind.as_str().into(),
                setting: "default".into(),
                seed,
                metric: name.into(),
                value: m.get(name).expect("known metric"),
            });
        }
    }
    create_dir(&dir)?;
    let path = dir.join("eval.csv");
    write_file(&path, &csv_bytes(&rows)?)?;
    for name in Metrics::NAMES {
        let v: Vec<f64> = rows.iter().filter(|r| r.metric == name).map(|r| r.value).collect();
        let (m, s) = mean_std(&v);
        eprintln!("{name}: {m:.4} ± {s:.4}");
    }
    println!("{}", path.display());
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Outcome {
    let table = load_table(cli)?;
    let cells = expand_sweep(&table).map_err(config_err)?;
    let dir = out_dir(cli, cells.first().map(|c| &c.config));
    create_dir(&dir)?;
    let jobs = jobs(cli)?;
    eprintln!(
        "{} cells x {} seeds on {jobs} threads",
        cells.len(),
        cells.first().map_or(0, |c| c.config.eval.seeds.len())
    );
    let rows = run_cells(&cells, jobs).map_err(runtime_err)?;
    write_file(&dir.join("metrics.csv"), &csv_bytes(&rows)?)?;
    cmd_report(&dir)
}

const PERF_DROP_HEADER: &str = "env,agent,base,setting,mean_base,mean_setting,drop\n";

fn cmd_report(dir: &Path) -> Outcome {
    let path = dir.join("metrics.csv");
    let mut reader = csv::Reader::from_path(&path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(runtime_err)?;
    let rows: Vec<MetricRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime_err)?;
    if rows.is_empty() {
        return Err(runtime_err(anyhow!("{} holds no rows", path.display())));
    }
    let summary = aggregate(&rows).map_err(runtime_err)?;
    write_file(&dir.join("summary.csv"), &csv_bytes(&summary)?)?;
    // Settings keep their sweep order; the first is the baseline.
    let base = rows[0].setting.clone();
    let drops = perf_drops(&summary, &base);
    let drop_csv = if drops.is_empty() {
        PERF_DROP_HEADER.as_bytes().to_vec()
    } else {
        csv_bytes(&drops)?
    };
    write_file(&dir.join("perf_drop.csv"), &drop_csv)?;

    let mut md = String::new();
    for name in Metrics::NAMES {
        md.push_str(&format!("## {name}\n\n{}\n", markdown_table(&summary, name)));
    }
    if !drops.is_empty() {
        md.push_str(&format!("## perf drop vs {base}\n\n| env | agent | setting | drop |\n|---|---|---|---|\n"));
        for d in &drops {
            md.push_str(&format!("| {} | {} | {} | {:+.2}% |\n", d.env, d.agent, d.setting, 100.0 * d.drop));
        }
        md.push('\n');
    }
    write_file(&dir.join("summary.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}
