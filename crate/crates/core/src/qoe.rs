//! FoV payload size, rendering and transmission latency, viewpoint hits and
//! per-user QoE.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Bits of a stereo RGB FoV: `3·8·n_p·n_v·2`.
pub fn fov_size_bits(n_p: u64, n_v: u64) -> u64 {
    3 * 8 * n_p * n_v * 2
}

/// MEC rendering time `f_MEC·C/F_MEC`, the same for every user.
pub fn render_latency(bits: f64, cycles_per_bit: f64, cycles_per_s: f64) -> Result<f64> {
    if !(cycles_per_s > 0.0) {
        return Err(CoreError::config("video.mec_cycles_per_s", "must be positive"));
    }
    Ok(cycles_per_bit * bits / cycles_per_s)
}

/// `bits/(rate·bandwidth)`, or `+∞` when the link carries nothing.
pub fn transmit_latency(bits: f64, rate: f64, bandwidth: f64) -> f64 {
    let throughput = rate * bandwidth;
    if throughput > 0.0 && throughput.is_finite() {
        bits / throughput
    } else {
        f64::INFINITY
    }
}

/// Inclusive angular tolerance test.
pub fn viewpoint_hit(pred_deg: f64, actual_deg: f64, tol_deg: f64) -> bool {
    (pred_deg - actual_deg).abs() <= tol_deg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityParams {
    /// Rate threshold `R_th` in bits/s/Hz.
    pub r_th: f64,
    /// Floor applied to `ln(R/R_th)`, also used for dead links.
    pub q_min: f64,
}

impl Default for QualityParams {
    fn default() -> Self {
        Self { r_th: 1.0, q_min: -20.0 }
    }
}

impl QualityParams {
    /// `q(R) = ln(R/R_th)` clamped below at `q_min`.
    pub fn quality(&self, rate: f64) -> f64 {
        if rate > 0.0 {
            (rate / self.r_th).ln().max(self.q_min)
        } else {
            self.q_min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoERecord {
    pub hit: bool,
    pub q_now: f64,
    pub q_prev: f64,
    pub qoe: f64,
}

/// `hit·(q_now − |q_now − q_prev|)`. Without a previous rate the variation
/// term is zero.
pub fn qoe(hit: bool, rate_now: f64, rate_prev: Option<f64>, params: &QualityParams) -> QoERecord {
    let q_now = params.quality(rate_now);
    let q_prev = rate_prev.map_or(q_now, |r| params.quality(r));
    let qoe = if hit { q_now - (q_now - q_prev).abs() } else { 0.0 };
    QoERecord { hit, q_now, q_prev, qoe }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBudget {
    pub t_uplink: f64,
    pub t_render: f64,
    pub t_downlink: f64,
    pub t_total: f64,
}

impl LatencyBudget {
    pub fn new(t_uplink: f64, t_render: f64, t_downlink: f64) -> Self {
        Self { t_uplink, t_render, t_downlink, t_total: t_uplink + t_render + t_downlink }
    }
}
