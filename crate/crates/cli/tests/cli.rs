use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_smore-lab");

const SMALL: &str = r#"
[env]
type = "gridworld"
size = 3

[data]
n_episodes = 20

[agent]
name = "gcsl"
total_steps = 300
hidden = [16]
batch_size = 32
eval_interval = 100

[eval]
episodes = 20
horizon = 10
seeds = [0, 1]
"#;

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("spawn smore-lab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn with_config(text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), text).unwrap();
    dir
}

#[test]
fn verify_conjugates_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["verify", "conjugates", "--out", "v"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert!(dir.path().join("v/verify_conjugates.json").exists());
}

#[test]
fn unknown_suite_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lab(dir.path(), &["verify", "nope"])), 2);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = with_config(&format!("{SMALL}\n[extra]\nx = 1\n"));
    assert_eq!(code(&lab(dir.path(), &["--config", "c.toml", "gen-data"])), 2);
    let dir = with_config(&SMALL.replace("n_episodes", "episodes_n"));
    let out = lab(dir.path(), &["--config", "c.toml", "train"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("episodes_n"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lab(dir.path(), &["--config", "absent.toml", "gen-data"])), 2);
}

#[test]
fn gen_data_is_deterministic_and_loadable() {
    let dir = with_config(SMALL);
    for o in ["a", "b"] {
        assert_eq!(code(&lab(dir.path(), &["--config", "c.toml", "gen-data", "--out", o])), 0);
    }
    let p = dir.path();
    assert_eq!(fs::read(p.join("a/dataset.bin")).unwrap(), fs::read(p.join("b/dataset.bin")).unwrap());
    assert_eq!(fs::read(p.join("a/dataset.csv")).unwrap(), fs::read(p.join("b/dataset.csv")).unwrap());
    let data = smore_core::data::load_dataset(&p.join("a/dataset.bin")).unwrap();
    assert_eq!(data.episodes().len(), 20);

    assert_eq!(code(&lab(p, &["--config", "c.toml", "gen-data", "--out", "c", "--seed", "9"])), 0);
    assert_ne!(fs::read(p.join("a/dataset.bin")).unwrap(), fs::read(p.join("c/dataset.bin")).unwrap());
}

#[test]
fn train_logs_every_interval_and_refuses_a_changed_config() {
    let dir = with_config(SMALL);
    let p = dir.path();
    let out = lab(p, &["--config", "c.toml", "train", "--out", "t"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(p.join("t/train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,losses,discounted_return,success_rate,final_distance");
    let steps: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["100", "200", "300"]);

    // A finished run is left alone.
    assert_eq!(code(&lab(p, &["--config", "c.toml", "train", "--out", "t"])), 0);
    assert_eq!(fs::read_to_string(p.join("t/train_log.csv")).unwrap(), log);

    let out = lab(p, &["--config", "c.toml", "train", "--out", "t", "--seed", "3"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing to resume"));

    // Eval episode count is not part of the training identity.
    fs::write(p.join("d.toml"), SMALL.replace("episodes = 20\nhorizon", "episodes = 5\nhorizon")).unwrap();
    assert_eq!(code(&lab(p, &["--config", "d.toml", "train", "--out", "t"])), 0);
}

#[test]
fn eval_writes_metric_rows_deterministically() {
    let dir = with_config(SMALL);
    let p = dir.path();
    assert_eq!(code(&lab(p, &["--config", "c.toml", "train", "--out", "t"])), 0);
    assert_eq!(code(&lab(p, &["--config", "c.toml", "eval", "--out", "t"])), 0);
    let first = fs::read_to_string(p.join("t/eval.csv")).unwrap();
    assert_eq!(code(&lab(p, &["--config", "c.toml", "eval", "--out", "t"])), 0);
    assert_eq!(fs::read_to_string(p.join("t/eval.csv")).unwrap(), first);

    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "env,agent,setting,seed,metric,value");
    // Two seeds times three metrics.
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("gridworld3,gcsl,default,0,discounted_return,"));

    fs::write(p.join("big.toml"), SMALL.replace("size = 3", "size = 4")).unwrap();
    let out = lab(p, &["--config", "big.toml", "eval", "--checkpoint", "t/agent.ckpt", "--out", "t2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_expands_lists_and_reruns_byte_identically() {
    let text = SMALL
        .replace("name = \"gcsl\"", "name = [\"gcsl\", \"iql_sparse\"]")
        .replace("n_episodes = 20", "n_episodes = 20\nexpert_fraction = [0.5, 0.1]");
    let dir = with_config(&text);
    let p = dir.path();
    let out = lab(p, &["--config", "c.toml", "sweep", "--out", "a", "--jobs", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&lab(p, &["--config", "c.toml", "sweep", "--out", "b", "--jobs", "1"])), 0);
    for f in ["metrics.csv", "summary.csv", "perf_drop.csv", "summary.md"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }

    let metrics = fs::read_to_string(p.join("a/metrics.csv")).unwrap();
    // 2 agents x 2 fractions x 2 seeds x 3 metrics.
    assert_eq!(metrics.lines().count(), 1 + 24);
    let drops = fs::read_to_string(p.join("a/perf_drop.csv")).unwrap();
    let lines: Vec<&str> = drops.lines().collect();
    assert_eq!(lines[0], "env,agent,base,setting,mean_base,mean_setting,drop");
    assert_eq!(lines.len(), 3);
    assert!(lines[1..].iter().all(|l| l.contains("data.expert_fraction=0.5,data.expert_fraction=0.1")));

    // `report` reproduces the aggregates from metrics.csv alone.
    let summary = fs::read(p.join("a/summary.csv")).unwrap();
    fs::remove_file(p.join("a/summary.csv")).unwrap();
    assert_eq!(code(&lab(p, &["report", "--out", "a"])), 0);
    assert_eq!(fs::read(p.join("a/summary.csv")).unwrap(), summary);
}

#[test]
fn report_without_metrics_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lab(dir.path(), &["report", "--out", "nothing"])), 1);
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let dir = with_config(SMALL);
    let out = Command::new(BIN)
        .current_dir(dir.path())
        .env("SMORE_LAB_THREADS", "zero")
        .args(["--config", "c.toml", "sweep"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn shipped_configs_expand() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let expected = [("benchmark", 4), ("coverage", 4), ("slip", 6), ("beta", 4), ("smoke", 2)];
    for (name, cells) in expected {
        let text = fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap();
        let table: toml::Table = text.parse().unwrap();
        let got = smore_core::experiment::expand_sweep(&table).unwrap();
        assert_eq!(got.len(), cells, "{name}");
    }
}

#[test]
fn smoke_config_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let config = config.to_str().unwrap();
    let out = lab(dir.path(), &["--config", config, "sweep", "--out", "s"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let md = fs::read_to_string(dir.path().join("s/summary.md")).unwrap();
    assert!(md.contains("| gridworld3 | default |"));
}
