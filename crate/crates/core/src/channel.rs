//! Deterministic THz channels: spreading loss, molecular absorption and
//! uniform-linear-array responses for the MEC↔user, MEC↔RIS and RIS↔user
//! links.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{LinkState, Position3};

pub type C64 = Complex64;

pub const SPEED_OF_LIGHT: f64 = 3e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub freq_hz: f64,
    /// Molecular absorption coefficient τ(f) in 1/m.
    pub tau: f64,
    pub mec_antennas: usize,
    pub ris_elements: usize,
    pub ris_gain: f64,
    pub c: f64,
    /// Element spacing in wavelengths (0.5 for a half-wavelength array).
    pub element_spacing: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq_hz > 0.0) {
            return Err(CoreError::config("channel.freq_hz", "must be positive"));
        }
        if !(self.tau >= 0.0) {
            return Err(CoreError::config("channel.absorption", "τ must be non-negative"));
        }
        if self.mec_antennas == 0 {
            return Err(CoreError::config("channel.mec_antennas", "must be at least 1"));
        }
        if self.ris_elements == 0 {
            return Err(CoreError::config("channel.ris_elements", "must be at least 1"));
        }
        if !(self.ris_gain > 0.0) {
            return Err(CoreError::config("channel.ris_gain", "must be positive"));
        }
        if !(self.element_spacing > 0.0) {
            return Err(CoreError::config("channel.element_spacing", "must be positive"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.c / self.freq_hz
    }

    /// Path-loss compensation factor `2√π·f·G_RIS·N/c`.
    pub fn ris_eta(&self) -> f64 {
        2.0 * PI.sqrt() * self.freq_hz * self.ris_gain * self.ris_elements as f64 / self.c
    }
}

/// Normalized ULA steering vector, element `m` equal to
/// `exp(−j·2π·(spacing/λ)·m·sin φ)/√n`.
pub fn array_response(n: usize, phi: f64, spacing: f64, lambda: f64) -> Array1<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    let k = 2.0 * PI * spacing / lambda * phi.sin();
    Array1::from_shape_fn(n, |m| C64::from_polar(scale, -k * m as f64))
}

/// Free-space spreading times absorption, with the propagation-delay phase.
pub fn path_gain(freq_hz: f64, d: f64, tau: f64, c: f64) -> Result<C64> {
    if !(d > 0.0) {
        return Err(CoreError::Domain(format!("path length must be positive, got {d}")));
    }
    let mag = c / (4.0 * PI * freq_hz * d) * (-tau * d / 2.0).exp();
    Ok(C64::from_polar(mag, -2.0 * PI * freq_hz * d / c))
}

fn steering(params: &ChannelParams, n: usize, phi: f64) -> Array1<C64> {
    array_response(n, phi, params.element_spacing * params.wavelength(), params.wavelength())
}

/// MEC→user direct channel (length `M`); all zeros when the user is blocked.
pub fn los_channel(params: &ChannelParams, d: f64, phi: f64, state: LinkState) -> Result<Array1<C64>> {
    let g = path_gain(params.freq_hz, d, params.tau, params.c)?;
    if !state.is_los() {
        return Ok(Array1::zeros(params.mec_antennas));
    }
    Ok(steering(params, params.mec_antennas, phi) * g)
}

/// `(G_up, G_down)` between the MEC (`M` antennas) and the RIS (`N`
/// elements). Both are rank one; `G_down = G_upᴴ`.
pub fn ris_mec_channels(
    params: &ChannelParams,
    d_mi: f64,
    phi_mec: f64,
    phi_ris: f64,
) -> Result<(Array2<C64>, Array2<C64>)> {
    let gain = path_gain(params.freq_hz, d_mi, params.tau, params.c)? * params.ris_eta();
    let a_mec = steering(params, params.mec_antennas, phi_mec);
    let a_ris = steering(params, params.ris_elements, phi_ris);
    let g_up = Array2::from_shape_fn((a_mec.len(), a_ris.len()), |(m, n)| gain * a_mec[m] * a_ris[n].conj());
    let g_down = g_up.t().mapv(|v| v.conj());
    Ok((g_up, g_down))
}

/// RIS→user channel (length `N`).
pub fn ris_user_channel(params: &ChannelParams, d: f64, phi: f64) -> Result<Array1<C64>> {
    let g = path_gain(params.freq_hz, d, params.tau, params.c)?;
    Ok(steering(params, params.ris_elements, phi) * g)
}

/// Piecewise-linear `(frequency Hz, τ 1/m)` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionTable {
    points: Vec<(f64, f64)>,
}

impl AbsorptionTable {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::config("channel.absorption", "table is empty"));
        }
        if points.iter().any(|&(f, t)| !(f > 0.0) || !(t >= 0.0)) {
            return Err(CoreError::config("channel.absorption", "frequencies must be positive and τ non-negative"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(CoreError::config("channel.absorption", "duplicate frequency"));
        }
        Ok(Self { points })
    }

    /// Reads whitespace- or comma-separated `Hz 1/m` rows; `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let parse = |s: &str| s.parse::<f64>().map_err(|e| CoreError::parse(path, format!("line {}: {e}", i + 1)));
            if cols.len() != 2 {
                return Err(CoreError::parse(path, format!("line {}: expected two columns", i + 1)));
            }
            points.push((parse(cols[0])?, parse(cols[1])?));
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn coefficient(&self, f: f64) -> Result<f64> {
        let first = self.points[0];
        let last = *self.points.last().expect("non-empty");
        if f < first.0 || f > last.0 {
            return Err(CoreError::config(
                "channel.freq_hz",
                format!("{f} Hz outside absorption table [{}, {}]", first.0, last.0),
            ));
        }
        if self.points.len() == 1 {
            return Ok(first.1);
        }
        let i = self.points.partition_point(|p| p.0 <= f).clamp(1, self.points.len() - 1);
        let (f0, t0) = self.points[i - 1];
        let (f1, t1) = self.points[i];
        Ok(t0 + (t1 - t0) * (f - f0) / (f1 - f0))
    }
}

/// Where the arrays sit and which way they face. Broadside angles are
/// azimuths in the floor plane, measured from `+x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayPlacement {
    pub mec: Position3,
    pub ris: Position3,
    pub mec_broadside: f64,
    pub ris_broadside: f64,
}

impl ArrayPlacement {
    /// Angle of departure/arrival of `to` as seen from an array at `from`
    /// facing `broadside`.
    pub fn angle(from: &Position3, to: &Position3, broadside: f64) -> f64 {
        (to.y - from.y).atan2(to.x - from.x) - broadside
    }
}

/// Every channel needed for one slot.
///
/// `h` holds the geometric direct channels used for beamforming, while
/// `blocked` records which of them are physically cut; received signals use
/// [`ChannelSet::h_eff`].
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub h: Vec<Array1<C64>>,
    pub blocked: Vec<bool>,
    pub g: Vec<Array1<C64>>,
    pub g_up: Array2<C64>,
    pub g_down: Array2<C64>,
}

impl ChannelSet {
    pub fn users(&self) -> usize {
        self.h.len()
    }

    pub fn h_eff(&self, k: usize) -> Array1<C64> {
        if self.blocked[k] {
            Array1::zeros(self.h[k].len())
        } else {
            self.h[k].clone()
        }
    }

    /// Multiplies every user-side entry by `1 + σ·CN(0,1)`.
    pub fn apply_fading<R: Rng + ?Sized>(&mut self, sigma: f64, rng: &mut R) {
        if sigma <= 0.0 {
            return;
        }
        let draw = |rng: &mut R| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(1.0 + sigma * re / 2f64.sqrt(), sigma * im / 2f64.sqrt())
        };
        for v in self.h.iter_mut().chain(self.g.iter_mut()) {
            v.mapv_inplace(|x| x * draw(rng));
        }
    }
}

/// Builds the slot's channels from user positions and their true blockage.
pub fn build_channel_set(
    params: &ChannelParams,
    placement: &ArrayPlacement,
    users: &[Position3],
    states: &[LinkState],
) -> Result<ChannelSet> {
    let mut h = Vec::with_capacity(users.len());
    let mut g = Vec::with_capacity(users.len());
    for u in users {
        let d = placement.mec.dist3d(u);
        h.push(los_channel(params, d, ArrayPlacement::angle(&placement.mec, u, placement.mec_broadside), LinkState::Los)?);
        let db = placement.ris.dist3d(u);
        g.push(ris_user_channel(params, db, ArrayPlacement::angle(&placement.ris, u, placement.ris_broadside))?);
    }
    let d_mi = placement.mec.dist3d(&placement.ris);
    let (g_up, g_down) = ris_mec_channels(
        params,
        d_mi,
        ArrayPlacement::angle(&placement.mec, &placement.ris, placement.mec_broadside),
        ArrayPlacement::angle(&placement.ris, &placement.mec, placement.ris_broadside),
    )?;
    Ok(ChannelSet {
        h,
        blocked: states.iter().map(|s| !s.is_los()).collect(),
        g,
        g_up,
        g_down,
    })
}

pub fn norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ChannelParams {
        ChannelParams {
            freq_hz: 3e11,
            tau: 0.0033,
            mec_antennas: 30,
            ris_elements: 20,
            ris_gain: 1.0,
            c: SPEED_OF_LIGHT,
            element_spacing: 0.5,
        }
    }

    #[test]
    fn array_response_small_cases() {
        let a = array_response(1, 0.7, 0.5, 1.0);
        assert_eq!(a[0], C64::new(1.0, 0.0));
        let b = array_response(2, 0.0, 0.5, 1.0);
        let r = 1.0 / 2f64.sqrt();
        assert!((b[0] - C64::new(r, 0.0)).norm() < 1e-15);
        assert!((b[1] - C64::new(r, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn spreading_loss_at_ten_metres() {
        let g = path_gain(3e11, 10.0, 0.0, SPEED_OF_LIGHT).unwrap();
        assert!((g.norm() - 7.9577e-6).abs() < 1e-9);
        let g2 = path_gain(3e11, 20.0, 0.0, SPEED_OF_LIGHT).unwrap();
        assert!((g2.norm() - g.norm() / 2.0).abs() < 1e-18);
        let ga = path_gain(3e11, 10.0, 0.0033, SPEED_OF_LIGHT).unwrap();
        assert!((ga.norm() / g.norm() - 0.98364).abs() < 1e-5);
        assert!(path_gain(3e11, 0.0, 0.0, SPEED_OF_LIGHT).is_err());
    }

    #[test]
    fn eta_value() {
        assert!((params().ris_eta() - 7.0898e4).abs() / 7.0898e4 < 1e-4);
    }

    #[test]
    fn blocked_user_has_zero_direct_channel() {
        let h = los_channel(&params(), 5.0, 0.3, LinkState::Nlos).unwrap();
        assert!(h.iter().all(|v| *v == C64::new(0.0, 0.0)));
    }

    #[test]
    fn down_is_conjugate_transpose_of_up() {
        let (up, down) = ris_mec_channels(&params(), 22.5, 0.4, -0.2).unwrap();
        for m in 0..30 {
            for n in 0..20 {
                assert_eq!(down[[n, m]], up[[m, n]].conj());
            }
        }
    }

    #[test]
    fn scalar_arrays_collapse_to_gain() {
        let p = ChannelParams { mec_antennas: 1, ris_elements: 1, ..params() };
        let (up, down) = ris_mec_channels(&p, 12.0, 0.3, 0.1).unwrap();
        let expected = path_gain(3e11, 12.0, 0.0033, SPEED_OF_LIGHT).unwrap() * p.ris_eta();
        assert!((up[[0, 0]] - expected).norm() < 1e-18);
        assert!((down[[0, 0]] - expected.conj()).norm() < 1e-18);
    }

    #[test]
    fn absorption_interpolation() {
        let t = AbsorptionTable::new(vec![(3e11, 0.0033)]).unwrap();
        assert_eq!(t.coefficient(3e11).unwrap(), 0.0033);
        assert!(t.coefficient(2e11).unwrap_err().is_config());
        let t2 = AbsorptionTable::new(vec![(3e11, 0.002), (2e11, 0.001)]).unwrap();
        assert!((t2.coefficient(2.5e11).unwrap() - 0.0015).abs() < 1e-15);
        assert_eq!(t2.coefficient(3e11).unwrap(), 0.002);
    }

    #[test]
    fn absorption_table_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tau.txt");
        std::fs::write(&p, "# Hz 1/m\n2e11, 0.001\n3e11 0.002\n").unwrap();
        let t = AbsorptionTable::load(&p).unwrap();
        assert_eq!(t.points().len(), 2);
        std::fs::write(&p, "2e11\n").unwrap();
        assert!(AbsorptionTable::load(&p).is_err());
    }
}
