//! One-axis parameter sweeps over seeds, run in parallel.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::engine::Simulator;
use super::metrics::SlotMetrics;
use crate::error::{CoreError, Result};
use crate::predictors::LosClassifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Users,
    RisElements,
}

impl FromStr for SweepAxis {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "users" => Ok(SweepAxis::Users),
            "ris-elements" => Ok(SweepAxis::RisElements),
            other => Err(CoreError::config("sweep.axis", format!("unknown axis `{other}` (users | ris-elements)"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Users => "users",
            SweepAxis::RisElements => "ris-elements",
        })
    }
}

impl SweepAxis {
    pub fn apply(self, cfg: &mut SimConfig, value: usize) {
        match self {
            SweepAxis::Users => cfg.scene.users = value,
            SweepAxis::RisElements => cfg.channel.ris_elements = value,
        }
    }
}

/// Aggregate of one sweep point over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub seeds: usize,
    pub mean_qoe: f64,
    pub se_qoe: f64,
    pub mean_t_vr: f64,
    pub se_t_vr: f64,
}

/// Per-run score: mean QoE and VR latency over the second half of the final
/// episode, after the learners have settled.
pub fn converged_scores(records: &[SlotMetrics]) -> (f64, f64) {
    let Some(last_ep) = records.iter().map(|r| r.episode).max() else {
        return (0.0, 0.0);
    };
    let ep: Vec<&SlotMetrics> = records.iter().filter(|r| r.episode == last_ep).collect();
    let tail = &ep[ep.len() / 2..];
    let n = tail.len().max(1) as f64;
    (tail.iter().map(|r| r.mean_qoe()).sum::<f64>() / n, tail.iter().map(|r| r.mean_t_vr()).sum::<f64>() / n)
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Runs every `(value, seed)` pair in parallel and aggregates per value.
/// Rows come back in `values` order regardless of scheduling.
pub fn run_sweep(
    cfg: &SimConfig,
    axis: SweepAxis,
    values: &[usize],
    seeds: &[u64],
    cnn: Option<Arc<LosClassifier>>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(CoreError::config("sweep.values", "need at least one value and one seed"));
    }
    let jobs: Vec<(usize, u64)> = values.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let scores: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let mut c = cfg.clone();
            axis.apply(&mut c, v);
            c.run.seed = s;
            let records = Simulator::new(c, cnn.clone())?.run()?;
            Ok(converged_scores(&records))
        })
        .collect::<Result<_>>()?;
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let chunk = &scores[i * seeds.len()..(i + 1) * seeds.len()];
            let (mean_qoe, se_qoe) = mean_se(&chunk.iter().map(|s| s.0).collect::<Vec<_>>());
            let (mean_t_vr, se_t_vr) = mean_se(&chunk.iter().map(|s| s.1).collect::<Vec<_>>());
            SweepRow { axis, value: v, seeds: seeds.len(), mean_qoe, se_qoe, mean_t_vr, se_t_vr }
        })
        .collect())
}

/// Writes sweep rows as CSV.
pub fn write_sweep(rows: &[SweepRow], path: &std::path::Path) -> Result<()> {
    super::metrics::write_csv(rows, path)
}

/// Whether `v` is monotone in the given direction, allowing at most one
/// adjacent inversion no larger than the pair's combined standard error.
pub fn monotone_with_slack(v: &[(f64, f64)], increasing: bool) -> bool {
    let mut inversions = 0;
    for w in v.windows(2) {
        let (a, sa) = w[0];
        let (b, sb) = w[1];
        let bad = if increasing { b < a } else { b > a };
        if bad {
            if (a - b).abs() > sa + sb {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}
