//! Per-seed learning curves and best-k aggregation.

use serde::{Deserialize, Serialize};

use crate::agents::EpisodeRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Steps,
    Success,
    Return,
}

impl Metric {
    pub fn value(self, r: &EpisodeRecord) -> f64 {
        match self {
            Metric::Steps => r.steps as f64,
            Metric::Success => f64::from(u8::from(r.success)),
            Metric::Return => r.ret,
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Steps)
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Steps => "avg_steps",
            Metric::Success => "success_ratio",
            Metric::Return => "avg_return",
        }
    }
}

/// One seed's series, indexed by episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Trailing moving average over `window` episodes (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Splits a metrics stream into one smoothed run per seed, in seed order.
pub fn runs_from_records(records: &[EpisodeRecord], metric: Metric, window: usize) -> Vec<Run> {
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .into_iter()
        .map(|seed| {
            let mut own: Vec<&EpisodeRecord> = records.iter().filter(|r| r.seed == seed).collect();
            own.sort_by_key(|r| r.episode);
            let raw: Vec<f64> = own.iter().map(|r| metric.value(r)).collect();
            Run { seed, values: moving_average(&raw, window) }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub metric: String,
    pub selected_seeds: Vec<u64>,
    pub mean: Vec<f64>,
    /// Population variance across the selected runs.
    pub variance: Vec<f64>,
}

impl CurveSet {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,mean,variance\n");
        for (i, (m, v)) in self.mean.iter().zip(&self.variance).enumerate() {
            out.push_str(&format!("{i},{m},{v}\n"));
        }
        out
    }
}

fn final_mean(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(window.max(1))..];
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Ranks the runs by their mean over the last `final_window` points, keeps
/// the best `best_k` and averages them pointwise over their common length.
/// Ties are broken by seed, so the result does not depend on run order.
pub fn aggregate_curves(runs: &[Run], best_k: usize, final_window: usize, metric: Metric) -> Result<CurveSet> {
    if best_k == 0 || runs.len() < best_k {
        return Err(Error::InsufficientRuns { needed: best_k.max(1), got: runs.len() });
    }
    let mut ranked: Vec<(f64, &Run)> = runs.iter().map(|r| (final_mean(&r.values, final_window), r)).collect();
    ranked.sort_by(|(a, ra), (b, rb)| {
        let order = if metric.lower_is_better() { a.total_cmp(b) } else { b.total_cmp(a) };
        order.then(ra.seed.cmp(&rb.seed))
    });
    let chosen: Vec<&Run> = ranked.into_iter().take(best_k).map(|(_, r)| r).collect();
    let len = chosen.iter().map(|r| r.values.len()).min().unwrap_or(0);
    let k = chosen.len() as f64;
    let mut mean = Vec::with_capacity(len);
    let mut variance = Vec::with_capacity(len);
    for i in 0..len {
        let m = chosen.iter().map(|r| r.values[i]).sum::<f64>() / k;
        mean.push(m);
        variance.push(chosen.iter().map(|r| (r.values[i] - m).powi(2)).sum::<f64>() / k);
    }
    Ok(CurveSet { metric: metric.label().to_string(), selected_seeds: chosen.iter().map(|r| r.seed).collect(), mean, variance })
}

/// Environment steps consumed before the trailing `window`-episode mean of
/// episode length first drops to `threshold`. `None` if it never does.
pub fn steps_to_threshold(records: &[EpisodeRecord], threshold: f64, window: usize) -> Option<usize> {
    let steps: Vec<f64> = records.iter().map(|r| r.steps as f64).collect();
    let smooth = moving_average(&steps, window);
    let mut consumed = 0usize;
    for (i, r) in records.iter().enumerate() {
        consumed += r.steps;
        if i + 1 >= window && smooth[i] <= threshold {
            return Some(consumed);
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub episodes: usize,
    pub env_steps: usize,
    pub final_steps: f64,
    pub final_return: f64,
    pub final_success: f64,
}

/// Final-window statistics of one seed's records.
pub fn summarize_run(records: &[EpisodeRecord], window: usize) -> Option<RunSummary> {
    let seed = records.first()?.seed;
    let tail = &records[records.len().saturating_sub(window.max(1))..];
    let n = tail.len() as f64;
    Some(RunSummary {
        seed,
        episodes: records.len(),
        env_steps: records.iter().map(|r| r.steps).sum(),
        final_steps: tail.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        final_return: tail.iter().map(|r| r.ret).sum::<f64>() / n,
        final_success: tail.iter().filter(|r| r.success).count() as f64 / n,
    })
}

/// Records of each seed, in seed order.
pub fn split_by_seed(records: &[EpisodeRecord]) -> Vec<Vec<EpisodeRecord>> {
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .into_iter()
        .map(|s| {
            let mut own: Vec<EpisodeRecord> = records.iter().filter(|r| r.seed == s).cloned().collect();
            own.sort_by_key(|r| r.episode);
            own
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seed: u64, last: f64) -> Run {
        Run { seed, values: vec![40.0, 30.0, last, last] }
    }

    #[test]
    fn identical_runs_have_zero_variance() {
        let runs: Vec<Run> = (0..10).map(|s| run(s, 8.0)).collect();
        let set = aggregate_curves(&runs, 3, 2, Metric::Steps).unwrap();
        assert!(set.variance.iter().all(|&v| v == 0.0));
        assert_eq!(set.selected_seeds, vec![0, 1, 2]);
    }

    #[test]
    fn selects_the_best_three() {
        let finals = [20.0, 6.0, 30.0, 5.0, 7.0, 25.0];
        let runs: Vec<Run> = finals.iter().enumerate().map(|(i, &f)| run(i as u64, f)).collect();
        let set = aggregate_curves(&runs, 3, 2, Metric::Steps).unwrap();
        let mut chosen = set.selected_seeds.clone();
        chosen.sort_unstable();
        assert_eq!(chosen, vec![1, 3, 4]);
        assert!((set.mean[3] - 6.0).abs() < 1e-12);
        assert!((set.variance[3] - 2.0 / 3.0).abs() < 1e-12);
        let success = aggregate_curves(&runs, 2, 2, Metric::Success).unwrap();
        assert_eq!(success.selected_seeds, vec![2, 5]);
    }

    #[test]
    fn k_equal_to_runs_is_plain_mean_and_order_free() {
        let runs = vec![run(0, 4.0), run(1, 8.0)];
        let set = aggregate_curves(&runs, 2, 1, Metric::Steps).unwrap();
        assert_eq!(set.mean[3], 6.0);
        assert_eq!(set.variance[3], 4.0);
        let reversed: Vec<Run> = runs.iter().rev().cloned().collect();
        assert_eq!(aggregate_curves(&reversed, 2, 1, Metric::Steps).unwrap(), set);
    }

    #[test]
    fn insufficient_runs() {
        assert!(matches!(
            aggregate_curves(&[run(0, 1.0)], 3, 1, Metric::Steps),
            Err(Error::InsufficientRuns { needed: 3, got: 1 })
        ));
    }

    #[test]
    fn threshold_and_moving_average() {
        assert_eq!(moving_average(&[2.0, 4.0, 6.0], 2), vec![2.0, 3.0, 5.0]);
        let records: Vec<EpisodeRecord> = [10, 8, 4, 2, 2]
            .iter()
            .enumerate()
            .map(|(i, &s)| EpisodeRecord { seed: 0, episode: i, steps: s, ret: 0.0, success: true })
            .collect();
        assert_eq!(steps_to_threshold(&records, 3.0, 2), Some(24));
        assert_eq!(steps_to_threshold(&records, 1.0, 2), None);
        let summary = summarize_run(&records, 2).unwrap();
        assert_eq!((summary.final_steps, summary.env_steps, summary.final_success), (2.0, 26, 1.0));
    }
}
