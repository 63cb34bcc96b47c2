//! Per-slot records and their CSV / JSONL / summary outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSlot {
    pub user: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub los_true: bool,
    pub los_pred: bool,
    pub viewpoint_actual: f64,
    pub viewpoint_pred: f64,
    pub hit: bool,
    pub rate_up: f64,
    pub rate_down: f64,
    pub t_uplink: f64,
    pub t_render: f64,
    pub t_downlink: f64,
    pub t_vr: f64,
    pub q_now: f64,
    pub qoe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub episode: usize,
    pub slot: usize,
    pub action: usize,
    pub reward: f64,
    /// Violation-form latency cost used by the agent.
    pub cost: f64,
    /// `t_th − mean downlink latency`, logged for comparison.
    pub cost_signed: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub dqn_loss: Option<f64>,
    pub viewpoint_mse: Option<f64>,
    pub direction_loss: Option<f64>,
    pub users: Vec<UserSlot>,
}

impl SlotMetrics {
    pub fn mean_qoe(&self) -> f64 {
        mean(self.users.iter().map(|u| u.qoe))
    }

    pub fn mean_t_vr(&self) -> f64 {
        mean(self.users.iter().map(|u| u.t_vr))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Flat CSV row: slot-level fields repeated for every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub episode: usize,
    pub slot: usize,
    pub action: usize,
    pub reward: f64,
    pub cost: f64,
    pub cost_signed: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub dqn_loss: Option<f64>,
    pub viewpoint_mse: Option<f64>,
    pub direction_loss: Option<f64>,
    pub user: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub los_true: bool,
    pub los_pred: bool,
    pub viewpoint_actual: f64,
    pub viewpoint_pred: f64,
    pub hit: bool,
    pub rate_up: f64,
    pub rate_down: f64,
    pub t_uplink: f64,
    pub t_render: f64,
    pub t_downlink: f64,
    pub t_vr: f64,
    pub q_now: f64,
    pub qoe: f64,
}

pub fn csv_rows(records: &[SlotMetrics]) -> Vec<CsvRow> {
    records
        .iter()
        .flat_map(|r| {
            r.users.iter().map(move |u| CsvRow {
                episode: r.episode,
                slot: r.slot,
                action: r.action,
                reward: r.reward,
                cost: r.cost,
                cost_signed: r.cost_signed,
                lambda: r.lambda,
                epsilon: r.epsilon,
                dqn_loss: r.dqn_loss,
                viewpoint_mse: r.viewpoint_mse,
                direction_loss: r.direction_loss,
                user: u.user,
                x: u.x,
                y: u.y,
                z: u.z,
                los_true: u.los_true,
                los_pred: u.los_pred,
                viewpoint_actual: u.viewpoint_actual,
                viewpoint_pred: u.viewpoint_pred,
                hit: u.hit,
                rate_up: u.rate_up,
                rate_down: u.rate_down,
                t_uplink: u.t_uplink,
                t_render: u.t_render,
                t_downlink: u.t_downlink,
                t_vr: u.t_vr,
                q_now: u.q_now,
                qoe: u.qoe,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| CoreError::parse(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CoreError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CoreError::io(path, io),
        other => CoreError::parse(path, format!("{other:?}")),
    }
}

/// One JSON object per slot.
pub fn write_jsonl(records: &[SlotMetrics], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CoreError::parse(path, e))?;
        w.write_all(b"\n").map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Per-episode aggregate over all slots and users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub slots: usize,
    pub mean_qoe: f64,
    pub mean_reward: f64,
    pub mean_t_vr: f64,
    pub mean_t_downlink: f64,
    pub mean_cost: f64,
    pub hit_rate: f64,
    pub los_accuracy: f64,
    pub vr_violation_rate: f64,
    pub final_lambda: f64,
}

/// Summaries of every episode present in `records`, in episode order.
pub fn summarize(records: &[SlotMetrics], t_th_vr: f64) -> Vec<EpisodeSummary> {
    let mut episodes: Vec<usize> = records.iter().map(|r| r.episode).collect();
    episodes.sort_unstable();
    episodes.dedup();
    episodes
        .into_iter()
        .map(|e| {
            let rs: Vec<&SlotMetrics> = records.iter().filter(|r| r.episode == e).collect();
            let users = || rs.iter().flat_map(|r| r.users.iter());
            EpisodeSummary {
                episode: e,
                slots: rs.len(),
                mean_qoe: mean(users().map(|u| u.qoe)),
                mean_reward: mean(rs.iter().map(|r| r.reward)),
                mean_t_vr: mean(users().map(|u| u.t_vr)),
                mean_t_downlink: mean(users().map(|u| u.t_downlink)),
                mean_cost: mean(rs.iter().map(|r| r.cost)),
                hit_rate: mean(users().map(|u| f64::from(u8::from(u.hit)))),
                los_accuracy: mean(users().map(|u| f64::from(u8::from(u.los_true == u.los_pred)))),
                vr_violation_rate: mean(users().map(|u| f64::from(u8::from(u.t_vr > t_th_vr)))),
                final_lambda: rs.last().map_or(0.0, |r| r.lambda),
            }
        })
        .collect()
}

/// Writes `slots.csv`, `slots.jsonl` and `episodes.csv` into `dir`.
pub fn write_metrics(records: &[SlotMetrics], t_th_vr: f64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    write_csv(&csv_rows(records), &dir.join("slots.csv"))?;
    write_jsonl(records, &dir.join("slots.jsonl"))?;
    write_csv(&summarize(records, t_th_vr), &dir.join("episodes.csv"))
}
