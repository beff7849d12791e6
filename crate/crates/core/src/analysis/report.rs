//! Cross-method comparison tables built from metrics CSVs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::curves::{split_by_seed, summarize_run};
use crate::agents::EpisodeRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub env: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// Mean and standard deviation across seeds of the final-window statistics,
/// using the best `best_k` seeds by final episode length when given.
pub fn summarize(method: &str, env: &str, records: &[EpisodeRecord], window: usize, best_k: Option<usize>) -> Result<Vec<ReportRow>> {
    let mut runs: Vec<_> = split_by_seed(records).iter().filter_map(|r| summarize_run(r, window)).collect();
    if runs.is_empty() {
        return Err(Error::InsufficientRuns { needed: 1, got: 0 });
    }
    if let Some(k) = best_k {
        if runs.len() < k || k == 0 {
            return Err(Error::InsufficientRuns { needed: k.max(1), got: runs.len() });
        }
        runs.sort_by(|a, b| a.final_steps.total_cmp(&b.final_steps).then(a.seed.cmp(&b.seed)));
        runs.truncate(k);
    }
    let stat = |f: &dyn Fn(&super::curves::RunSummary) -> f64| {
        let n = runs.len() as f64;
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = runs.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let metrics: [(&str, &dyn Fn(&super::curves::RunSummary) -> f64); 4] = [
        ("final_steps", &|r| r.final_steps),
        ("final_return", &|r| r.final_return),
        ("success_rate", &|r| r.final_success),
        ("env_steps", &|r| r.env_steps as f64),
    ];
    Ok(metrics
        .iter()
        .map(|(name, f)| {
            let (mean, std) = stat(*f);
            ReportRow { method: method.into(), env: env.into(), metric: (*name).into(), mean, std, seeds: runs.len() }
        })
        .collect())
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,env,metric,mean,std,seeds\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.method, r.env, r.metric, r.mean, r.std, r.seeds).unwrap();
    }
    out
}

/// Markdown table with one row per (method, env) and one column per metric.
pub fn report_markdown(rows: &[ReportRow]) -> String {
    let mut metrics: Vec<&str> = Vec::new();
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
        if !keys.contains(&(r.method.as_str(), r.env.as_str())) {
            keys.push((&r.method, &r.env));
        }
    }
    let mut out = format!("| method | env | {} |\n", metrics.join(" | "));
    out.push_str(&format!("|---|---|{}\n", "---|".repeat(metrics.len())));
    for (method, env) in keys {
        let cells: Vec<String> = metrics
            .iter()
            .map(|m| {
                rows.iter()
                    .find(|r| r.method == method && r.env == env && r.metric == *m)
                    .map_or("-".to_string(), |r| format!("{:.3} ± {:.3}", r.mean, r.std))
            })
            .collect();
        writeln!(out, "| {method} | {env} | {} |", cells.join(" | ")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<EpisodeRecord> {
        let mut out = Vec::new();
        for seed in 0..4u64 {
            for e in 0..10 {
                out.push(EpisodeRecord { seed, episode: e, steps: 5 + seed as usize, ret: 1.0, success: seed != 3 });
            }
        }
        out
    }

    #[test]
    fn best_k_summary() {
        let rows = summarize("OURS", "grid6", &records(), 5, Some(2)).unwrap();
        let steps = rows.iter().find(|r| r.metric == "final_steps").unwrap();
        assert_eq!((steps.mean, steps.std, steps.seeds), (5.5, 0.5, 2));
        let all = summarize("OURS", "grid6", &records(), 5, None).unwrap();
        assert_eq!(all.iter().find(|r| r.metric == "success_rate").unwrap().mean, 0.75);
        assert!(summarize("OURS", "grid6", &records(), 5, Some(5)).is_err());
    }

    #[test]
    fn tables() {
        let mut rows = summarize("OURS", "grid6", &records(), 5, None).unwrap();
        rows.extend(summarize("DQN", "grid6", &records(), 5, None).unwrap());
        let md = report_markdown(&rows);
        assert_eq!(md.lines().count(), 4);
        assert!(md.contains("| DQN | grid6 |"));
        assert_eq!(report_csv(&rows).lines().count(), 9);
    }
}
