//! Plot-ready tables derived from metrics directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{read_csv, write_csv, CsvRow, EpisodeSummary};
use super::sweep::{SweepAxis, SweepRow};
use crate::error::{CoreError, Result};

#[derive(Debug, Serialize)]
struct SlotPoint {
    episode: usize,
    slot: usize,
    reward: f64,
    mean_qoe: f64,
    mean_t_vr: f64,
    viewpoint_mse: Option<f64>,
    direction_loss: Option<f64>,
    dqn_loss: Option<f64>,
    los_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct EpisodePoint {
    episode: usize,
    mean_reward: f64,
    mean_qoe: f64,
    mean_t_vr: f64,
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    value: usize,
    mean_qoe: f64,
    se_qoe: f64,
    mean_t_vr: f64,
    se_t_vr: f64,
}

/// Reads `slots.csv`, `episodes.csv` and `sweep.csv` from `dir` (whichever
/// exist) and writes plot tables into `dir/plots`. Returns the files written.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let out = dir.join("plots");
    let mut written = Vec::new();
    let slots = dir.join("slots.csv");
    let episodes = dir.join("episodes.csv");
    let sweep = dir.join("sweep.csv");
    if !slots.exists() && !episodes.exists() && !sweep.exists() {
        return Err(CoreError::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no metrics files found")));
    }
    std::fs::create_dir_all(&out).map_err(|e| CoreError::io(&out, e))?;

    if slots.exists() {
        let rows: Vec<CsvRow> = read_csv(&slots)?;
        let mut by_slot: BTreeMap<(usize, usize), Vec<&CsvRow>> = BTreeMap::new();
        for r in &rows {
            by_slot.entry((r.episode, r.slot)).or_default().push(r);
        }
        let points: Vec<SlotPoint> = by_slot
            .into_iter()
            .map(|((episode, slot), rs)| {
                let n = rs.len() as f64;
                SlotPoint {
                    episode,
                    slot,
                    reward: rs[0].reward,
                    mean_qoe: rs.iter().map(|r| r.qoe).sum::<f64>() / n,
                    mean_t_vr: rs.iter().map(|r| r.t_vr).sum::<f64>() / n,
                    viewpoint_mse: rs[0].viewpoint_mse,
                    direction_loss: rs[0].direction_loss,
                    dqn_loss: rs[0].dqn_loss,
                    los_accuracy: rs.iter().filter(|r| r.los_true == r.los_pred).count() as f64 / n,
                }
            })
            .collect();
        let p = out.join("per_slot.csv");
        write_csv(&points, &p)?;
        written.push(p);
    }

    if episodes.exists() {
        let rows: Vec<EpisodeSummary> = read_csv(&episodes)?;
        let points: Vec<EpisodePoint> = rows
            .iter()
            .map(|r| EpisodePoint {
                episode: r.episode,
                mean_reward: r.mean_reward,
                mean_qoe: r.mean_qoe,
                mean_t_vr: r.mean_t_vr,
            })
            .collect();
        let p = out.join("reward_by_episode.csv");
        write_csv(&points, &p)?;
        written.push(p);
    }

    if sweep.exists() {
        let rows: Vec<SweepRow> = read_csv(&sweep)?;
        for axis in [SweepAxis::Users, SweepAxis::RisElements] {
            let points: Vec<SweepPoint> = rows
                .iter()
                .filter(|r| r.axis == axis)
                .map(|r| SweepPoint {
                    value: r.value,
                    mean_qoe: r.mean_qoe,
                    se_qoe: r.se_qoe,
                    mean_t_vr: r.mean_t_vr,
                    se_t_vr: r.se_t_vr,
                })
                .collect();
            if !points.is_empty() {
                let p = out.join(format!("qoe_latency_vs_{axis}.csv"));
                write_csv(&points, &p)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
