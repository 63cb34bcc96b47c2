//! Discrete RIS phase configurations, matched-filter beamformers and the
//! per-user uplink/downlink spectral efficiencies.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::channel::{norm, ChannelSet, C64};
use crate::error::{CoreError, Result};

pub const MAX_PHASE_BITS: u8 = 8;

/// The `2^b` uniformly spaced phase levels starting at 0.
pub fn discrete_phase_set(bits: u8) -> Result<Vec<f64>> {
    if !(1..=MAX_PHASE_BITS).contains(&bits) {
        return Err(CoreError::config("channel.phase_bits", format!("must be in 1..=8, got {bits}")));
    }
    let levels = 1usize << bits;
    let step = 2.0 * PI / levels as f64;
    Ok((0..levels).map(|i| i as f64 * step).collect())
}

/// One phase level index per RIS element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub levels: Vec<u16>,
    pub bits: u8,
}

impl PhaseConfig {
    pub fn new(levels: Vec<u16>, bits: u8) -> Result<Self> {
        discrete_phase_set(bits)?;
        let l = 1u32 << bits;
        if let Some(bad) = levels.iter().find(|&&v| u32::from(v) >= l) {
            return Err(CoreError::Domain(format!("phase level {bad} outside 0..{l}")));
        }
        Ok(Self { levels, bits })
    }

    pub fn zeros(n: usize, bits: u8) -> Self {
        Self { levels: vec![0; n], bits }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level_count(&self) -> usize {
        1 << self.bits
    }

    pub fn phases(&self) -> Vec<f64> {
        let step = 2.0 * PI / self.level_count() as f64;
        self.levels.iter().map(|&l| f64::from(l) * step).collect()
    }

    /// The `index`-th configuration of the full `L̂^N` space, element 0 as
    /// the least significant digit.
    pub fn from_index(mut index: u64, n: usize, bits: u8) -> Self {
        let l = 1u64 << bits;
        let levels = (0..n)
            .map(|_| {
                let d = (index % l) as u16;
                index /= l;
                d
            })
            .collect();
        Self { levels, bits }
    }

    /// Nearest level to an arbitrary angle.
    pub fn quantize(phase: f64, bits: u8) -> u16 {
        let l = 1usize << bits;
        let step = 2.0 * PI / l as f64;
        ((phase.rem_euclid(2.0 * PI) / step).round() as usize % l) as u16
    }
}

/// Diagonal of `Θ = diag(e^{jθ_1}, …, e^{jθ_N})`.
pub fn reflection_diag(cfg: &PhaseConfig) -> Array1<C64> {
    cfg.phases().into_iter().map(|t| C64::from_polar(1.0, t)).collect()
}

pub fn reflection_matrix(cfg: &PhaseConfig) -> Array2<C64> {
    Array2::from_diag(&reflection_diag(cfg))
}

fn cdot(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn rate(signal: f64, interference: f64, p_tx: f64, noise: f64) -> f64 {
    let r = (1.0 + p_tx * signal / (p_tx * interference + noise)).log2();
    if r.is_finite() {
        r.max(0.0)
    } else {
        0.0
    }
}

/// Effective uplink channel `h_k + G_up·Θ·g_k` of every user.
pub fn uplink_effective(ch: &ChannelSet, theta: &Array1<C64>) -> Vec<Array1<C64>> {
    (0..ch.users())
        .map(|k| ch.h_eff(k) + ch.g_up.dot(&(theta * &ch.g[k])))
        .collect()
}

/// Uplink rate of user `k` with the matched receive beamformer
/// `u_k = e_k/‖e_k‖`; every other user's effective channel interferes.
pub fn uplink_rate(k: usize, ch: &ChannelSet, theta: &Array1<C64>, p_tx: f64, noise: f64) -> f64 {
    uplink_rates(ch, theta, p_tx, noise)[k]
}

pub fn uplink_rates(ch: &ChannelSet, theta: &Array1<C64>, p_tx: f64, noise: f64) -> Vec<f64> {
    let eff = uplink_effective(ch, theta);
    (0..eff.len())
        .map(|k| {
            let n = norm(&eff[k]);
            if n == 0.0 {
                return 0.0;
            }
            let u = &eff[k] / C64::new(n, 0.0);
            let signal = cdot(&u, &eff[k]).norm_sqr();
            let interference: f64 = (0..eff.len()).filter(|&i| i != k).map(|i| cdot(&u, &eff[i]).norm_sqr()).sum();
            rate(signal, interference, p_tx, noise)
        })
        .collect()
}

/// Downlink precoders and serving groups for one RIS configuration.
///
/// LoS-served users get `v_k = h_k/‖h_k‖`; RIS-served users get
/// `v_b ∝ G_downᴴ·Θ·g_b`. The effective RIS row `g_bᴴ·Θ·G_down` is kept
/// for each RIS-served user.
#[derive(Debug, Clone)]
pub struct Downlink {
    pub serve_los: Vec<bool>,
    pub precoders: Vec<Array1<C64>>,
    ris_rows: Vec<Option<Array1<C64>>>,
}

fn unit(v: Array1<C64>) -> Array1<C64> {
    let n = norm(&v);
    if n == 0.0 {
        v
    } else {
        v / C64::new(n, 0.0)
    }
}

impl Downlink {
    pub fn new(ch: &ChannelSet, theta: &Array1<C64>, serve_los: &[bool]) -> Self {
        let k = ch.users();
        assert_eq!(serve_los.len(), k, "one serving flag per user");
        let mut precoders = Vec::with_capacity(k);
        let mut ris_rows = Vec::with_capacity(k);
        for b in 0..k {
            if serve_los[b] {
                precoders.push(unit(ch.h[b].clone()));
                ris_rows.push(None);
            } else {
                let tg = theta * &ch.g[b];
                precoders.push(unit(ch.g_down.t().mapv(|v| v.conj()).dot(&tg)));
                let row: Array1<C64> = ch.g[b].mapv(|v| v.conj()) * theta;
                ris_rows.push(Some(row.dot(&ch.g_down)));
            }
        }
        Self { serve_los: serve_los.to_vec(), precoders, ris_rows }
    }

    /// Rate of a LoS-served user; its received direct channel is zero when
    /// the path is actually blocked.
    pub fn rate_los(&self, k: usize, ch: &ChannelSet, p_tx: f64, noise: f64) -> Result<f64> {
        if !self.serve_los.get(k).copied().unwrap_or(false) {
            return Err(CoreError::Contract(format!("user {k} is not in the LoS group")));
        }
        let h = ch.h_eff(k);
        let gain = |i: usize| cdot(&h, &self.precoders[i]).norm_sqr();
        let signal = gain(k);
        let interference: f64 = (0..self.precoders.len()).filter(|&i| i != k).map(gain).sum();
        Ok(rate(signal, interference, p_tx, noise))
    }

    /// Rate of a RIS-served user; only other RIS-served users interfere.
    pub fn rate_nlos(&self, b: usize, p_tx: f64, noise: f64) -> Result<f64> {
        let Some(Some(row)) = self.ris_rows.get(b) else {
            return Err(CoreError::Contract(format!("user {b} is not in the NLoS group")));
        };
        let gain = |j: usize| row.iter().zip(self.precoders[j].iter()).map(|(a, v)| a * v).sum::<C64>().norm_sqr();
        let signal = gain(b);
        let interference: f64 = (0..self.precoders.len())
            .filter(|&j| j != b && !self.serve_los[j])
            .map(gain)
            .sum();
        Ok(rate(signal, interference, p_tx, noise))
    }

    pub fn rates(&self, ch: &ChannelSet, p_tx: f64, noise: f64) -> Vec<f64> {
        (0..self.precoders.len())
            .map(|k| {
                if self.serve_los[k] {
                    self.rate_los(k, ch, p_tx, noise)
                } else {
                    self.rate_nlos(k, p_tx, noise)
                }
                .expect("group membership checked")
            })
            .collect()
    }
}

pub fn downlink_rate_los(
    k: usize,
    ch: &ChannelSet,
    theta: &Array1<C64>,
    serve_los: &[bool],
    p_tx: f64,
    noise: f64,
) -> Result<f64> {
    Downlink::new(ch, theta, serve_los).rate_los(k, ch, p_tx, noise)
}

pub fn downlink_rate_nlos(
    b: usize,
    ch: &ChannelSet,
    theta: &Array1<C64>,
    serve_los: &[bool],
    p_tx: f64,
    noise: f64,
) -> Result<f64> {
    Downlink::new(ch, theta, serve_los).rate_nlos(b, p_tx, noise)
}

/// Per-user link summary of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRates {
    pub uplink: Vec<f64>,
    pub downlink: Vec<f64>,
    pub served_los: Vec<bool>,
}

/// Cascaded RIS coefficients `c_i` of user `b`: its received RIS signal is
/// proportional to `|Σ c_i·e^{jθ_i}|`.
pub fn cascade_coefficients(ch: &ChannelSet, b: usize) -> Array1<C64> {
    let n = ch.g[b].len();
    // rank-one G_down = s·a_ris·a_mecᴴ: any non-zero column is ∝ a_ris
    let col = (0..ch.g_down.ncols())
        .map(|m| ch.g_down.column(m).to_owned())
        .find(|c| norm(c) > 0.0)
        .unwrap_or_else(|| Array1::zeros(n));
    Array1::from_shape_fn(n, |i| ch.g[b][i].conj() * col[i])
}

/// Discrete configuration maximizing `|Σ c_i·e^{jθ_i}|`.
///
/// Quantizing `ψ − arg c_i` for a common rotation `ψ` is optimal for some
/// `ψ`, and the quantized vector only changes at the `N·L̂` rotations where
/// an element crosses a decision boundary, so trying one rotation per
/// boundary interval finds the exact discrete optimum.
pub fn cophase_config(coeffs: &Array1<C64>, bits: u8) -> PhaseConfig {
    let l = 1usize << bits;
    let step = 2.0 * PI / l as f64;
    let args: Vec<f64> = coeffs.iter().map(|c| c.arg()).collect();
    let build = |psi: f64| -> Vec<u16> { args.iter().map(|a| PhaseConfig::quantize(psi - a, bits)).collect() };
    let gain = |levels: &[u16]| -> f64 {
        coeffs
            .iter()
            .zip(levels)
            .map(|(c, &lv)| c * C64::from_polar(1.0, f64::from(lv) * step))
            .sum::<C64>()
            .norm_sqr()
    };
    let mut best = build(0.0);
    let mut best_gain = gain(&best);
    for a in &args {
        for k in 0..l {
            let cand = build(a + (k as f64 + 0.5) * step + 1e-9);
            let g = gain(&cand);
            if g > best_gain * (1.0 + 1e-12) {
                best_gain = g;
                best = cand;
            }
        }
    }
    PhaseConfig { levels: best, bits }
}

/// Configuration that maximizes the RIS-reflected power of user `b`.
pub fn steering_config(ch: &ChannelSet, b: usize, bits: u8) -> PhaseConfig {
    cophase_config(&cascade_coefficients(ch, b), bits)
}
