//! Head-orientation traces: a synthetic generator and a CSV loader.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewpointSample {
    pub slot: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn of(self, s: &ViewpointSample) -> f64 {
        match self {
            Axis::X => s.x,
            Axis::Y => s.y,
            Axis::Z => s.z,
        }
    }

    /// Half-width of the admissible angle range in degrees.
    pub fn limit(self) -> f64 {
        match self {
            Axis::Y => 150.0,
            Axis::X | Axis::Z => 50.0,
        }
    }
}

/// Per-axis synthetic motion: slow sinusoid + random-walk drift + fixation
/// noise, amplitudes as fractions of the axis limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceParams {
    pub sine_amplitude: f64,
    pub period_slots: [f64; 2],
    pub drift_step: f64,
    pub noise: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self { sine_amplitude: 0.5, period_slots: [60.0, 200.0], drift_step: 0.01, noise: 0.01 }
    }
}

fn axis_trace<R: Rng + ?Sized>(p: &TraceParams, limit: f64, slots: usize, rng: &mut R) -> Vec<f64> {
    let period = rng.random_range(p.period_slots[0]..=p.period_slots[1]);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = p.sine_amplitude * limit * rng.random_range(0.5..1.0);
    let step = Normal::new(0.0, p.drift_step * limit).expect("finite std");
    let noise = Normal::new(0.0, p.noise * limit).expect("finite std");
    let bound = limit * 0.999;
    let mut drift = 0.0f64;
    (0..slots)
        .map(|t| {
            drift = (drift + step.sample(rng)).clamp(-0.3 * limit, 0.3 * limit);
            let s = amp * (std::f64::consts::TAU * t as f64 / period + phase).sin();
            (s + drift + noise.sample(rng)).clamp(-bound, bound)
        })
        .collect()
}

/// One trace per user, `slots` samples each.
pub fn synthetic_traces<R: Rng + ?Sized>(
    params: &TraceParams,
    users: usize,
    slots: usize,
    rng: &mut R,
) -> Vec<Vec<ViewpointSample>> {
    (0..users)
        .map(|_| {
            let x = axis_trace(params, Axis::X.limit(), slots, rng);
            let y = axis_trace(params, Axis::Y.limit(), slots, rng);
            let z = axis_trace(params, Axis::Z.limit(), slots, rng);
            (0..slots).map(|t| ViewpointSample { slot: t, x: x[t], y: y[t], z: z[t] }).collect()
        })
        .collect()
}

#[derive(Deserialize)]
struct TraceRow {
    slot: usize,
    user: usize,
    x_deg: f64,
    y_deg: f64,
    z_deg: f64,
}

/// Reads `slot,user,x_deg,y_deg,z_deg` rows. Users are numbered from 0 and
/// each must cover the same contiguous slots.
pub fn load_trace_csv(path: &Path) -> Result<Vec<Vec<ViewpointSample>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CoreError::parse(path, e))?;
    let mut by_user: BTreeMap<usize, Vec<ViewpointSample>> = BTreeMap::new();
    for row in reader.deserialize::<TraceRow>() {
        let r = row.map_err(|e| CoreError::parse(path, e))?;
        by_user
            .entry(r.user)
            .or_default()
            .push(ViewpointSample { slot: r.slot, x: r.x_deg, y: r.y_deg, z: r.z_deg });
    }
    let mut out = Vec::with_capacity(by_user.len());
    for (i, (user, mut samples)) in by_user.into_iter().enumerate() {
        if user != i {
            return Err(CoreError::parse(path, format!("users must be numbered 0.., missing {i}")));
        }
        samples.sort_by_key(|s| s.slot);
        if samples.iter().enumerate().any(|(t, s)| s.slot != samples[0].slot + t) {
            return Err(CoreError::parse(path, format!("user {user} has gaps or duplicate slots")));
        }
        out.push(samples);
    }
    if out.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(CoreError::parse(path, "users have traces of different lengths"));
    }
    Ok(out)
}
