use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{mann_whitney_u, mean_std};
use crate::error::Result;

/// Long-format result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub env: String,
    pub agent: String,
    pub setting: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub setting: String,
    pub metric: String,
    pub agent: String,
    pub n_seeds: usize,
    pub mean: f64,
    pub std: f64,
    /// p-value of the best agent against the runner-up; only set on the best.
    pub p_value: Option<f64>,
    /// Best agent, significantly ahead of the runner-up at 0.05.
    pub star: bool,
}

fn lower_is_better(metric: &str) -> bool {
    metric == "final_distance"
}

/// Mean and std per (env, setting, metric, agent), sorted by that key. The
/// best agent of each (env, setting, metric) group is starred when the U
/// test against the second best gives p < 0.05.
pub fn aggregate(rows: &[MetricRow]) -> Result<Vec<SummaryRow>> {
    let mut cells: BTreeMap<(String, String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.env.clone(), r.setting.clone(), r.metric.clone()))
            .or_default()
            .entry(r.agent.clone())
            .or_default()
            .push(r.value);
    }
    let mut out = Vec::new();
    for ((env, setting, metric), agents) in cells {
        let mut group: Vec<SummaryRow> = agents
            .iter()
            .map(|(agent, v)| {
                let (mean, std) = mean_std(v);
                SummaryRow {
                    env: env.clone(),
                    setting: setting.clone(),
                    metric: metric.clone(),
                    agent: agent.clone(),
                    n_seeds: v.len(),
                    mean,
                    std,
                    p_value: None,
                    star: false,
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..group.len()).collect();
        let lower = lower_is_better(&metric);
        // Stable sort keeps name order among equal means.
        order.sort_by(|&i, &j| {
            let c = group[i].mean.total_cmp(&group[j].mean);
            if lower {
                c
            } else {
                c.reverse()
            }
        });
        if order.len() >= 2 {
            let (best, second) = (order[0], order[1]);
            let p = mann_whitney_u(&agents[&group[best].agent], &agents[&group[second].agent])?;
            group[best].p_value = Some(p);
            group[best].star = p < 0.05 && group[best].mean != group[second].mean;
        }
        out.extend(group);
    }
    Ok(out)
}

/// `(mean_setting - mean_base) / mean_base`.
pub fn perf_drop(mean_base: f64, mean_setting: f64) -> f64 {
    (mean_setting - mean_base) / mean_base
}

/// Rows (env, setting) by agent columns for one metric, cells `mean ± std`.
pub fn markdown_table(summary: &[SummaryRow], metric: &str) -> String {
    let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.metric == metric).collect();
    let mut agents: Vec<&str> = rows.iter().map(|r| r.agent.as_str()).collect();
    agents.sort_unstable();
    agents.dedup();
    let mut keys: Vec<(&str, &str)> = rows.iter().map(|r| (r.env.as_str(), r.setting.as_str())).collect();
    keys.sort_unstable();
    keys.dedup();

    let mut s = format!("| env | setting | {} |\n", agents.join(" | "));
    s.push_str(&format!("|---|---|{}\n", "---|".repeat(agents.len())));
    for (env, setting) in keys {
        let cells: Vec<String> = agents
            .iter()
            .map(|a| {
                rows.iter()
                    .find(|r| r.env == env && r.setting == setting && r.agent == *a)
                    .map(|r| format!("{:.2} ± {:.2}{}", r.mean, r.std, if r.star { "*" } else { "" }))
                    .unwrap_or_else(|| "-".to_string())
            })
            .collect();
        s.push_str(&format!("| {env} | {setting} | {} |\n", cells.join(" | ")));
    }
    s
}

/// Headered CSV of serializable rows.
pub fn write_rows_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
