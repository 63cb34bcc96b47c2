//! Simulation configuration: TOML file, environment overrides, validation
//! and a report of every key left at its default.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thzvr_nn::ConvNetConfig;

use crate::channel::{AbsorptionTable, ArrayPlacement, ChannelParams, SPEED_OF_LIGHT};
use crate::control::AgentConfig;
use crate::error::{CoreError, Result};
use crate::geometry::{MobilityArea, Obstacle, Position3, SceneLayout};
use crate::predictors::{DirectionParams, TraceParams, ViewpointMode, ViewpointParams};
use crate::qoe::{fov_size_bits, render_latency, QualityParams};

/// Prefix of environment overrides: `THZVR__RUN__SEED=7` sets `run.seed`.
pub const ENV_PREFIX: &str = "THZVR__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Cdrl,
    Exhaustive,
    Random,
}

/// Where the MEC's LoS flags, positions and viewpoints come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorSource {
    /// Ground truth.
    Genie,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Room side length in metres (the room is square).
    pub width: f64,
    pub height: f64,
    pub mec: [f64; 3],
    pub ris: [f64; 3],
    pub users: usize,
    pub user_height: [f64; 2],
    /// Metres walked per slot.
    pub speed: f64,
    pub body_radius: f64,
    pub obstacles: Vec<Obstacle>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 20.0,
            height: 3.0,
            mec: [0.0, 0.0, 3.0],
            ris: [10.0, 20.0, 3.0],
            users: 5,
            user_height: [1.2, 1.8],
            speed: 1.0,
            body_radius: 0.3,
            obstacles: vec![
                Obstacle { x_range: [4.0, 8.0], y_range: [8.0, 12.0], height: 3.0 },
                Obstacle { x_range: [12.0, 16.0], y_range: [8.0, 12.0], height: 3.0 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub freq_hz: f64,
    /// Absorption coefficient τ in 1/m, used unless a table is given.
    pub absorption: f64,
    /// CSV of `freq_hz,tau` rows interpolated at `freq_hz`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub absorption_table: Option<PathBuf>,
    pub mec_antennas: usize,
    pub ris_elements: usize,
    pub phase_bits: u8,
    pub ris_gain: f64,
    pub element_spacing: f64,
    pub tx_power_w: f64,
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
    /// Relative std of an optional complex Gaussian perturbation; 0 disables it.
    pub fading_sigma: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            freq_hz: 3e11,
            absorption: 0.0033,
            absorption_table: None,
            mec_antennas: 30,
            ris_elements: 20,
            phase_bits: 2,
            ris_gain: 1.0,
            element_spacing: 0.5,
            tx_power_w: 1.0,
            bandwidth_hz: 1e9,
            noise_dbm: -110.0,
            fading_sigma: 0.0,
        }
    }
}

impl ChannelConfig {
    pub fn noise_w(&self) -> f64 {
        10f64.powf((self.noise_dbm - 30.0) / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub n_p: u64,
    pub n_v: u64,
    /// Divides the FoV size for rendering and transmission; 1 is raw.
    pub compression_ratio: f64,
    pub mec_cycles_per_bit: f64,
    pub mec_cycles_per_s: f64,
    pub t_th_downlink: f64,
    pub t_th_vr: f64,
    pub viewpoint_tol_deg: f64,
    pub r_th: f64,
    pub q_min: f64,
    /// Ceiling on any single latency so dead links stay finite in the logs.
    pub latency_cap: f64,
    pub viewpoint_packet_bits: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            n_p: 3840,
            n_v: 2160,
            compression_ratio: 6000.0,
            mec_cycles_per_bit: 1000.0,
            mec_cycles_per_s: 5e9,
            t_th_downlink: 0.012,
            t_th_vr: 0.020,
            viewpoint_tol_deg: 15.0,
            r_th: 1.0,
            q_min: -20.0,
            latency_cap: 0.1,
            viewpoint_packet_bits: 192.0,
        }
    }
}

impl VideoConfig {
    /// Bits of one compressed FoV.
    pub fn fov_bits(&self) -> f64 {
        fov_size_bits(self.n_p, self.n_v) as f64 / self.compression_ratio
    }

    pub fn render_time(&self) -> Result<f64> {
        render_latency(self.fov_bits(), self.mec_cycles_per_bit, self.mec_cycles_per_s)
    }

    pub fn quality(&self) -> QualityParams {
        QualityParams { r_th: self.r_th, q_min: self.q_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Pre-trained weights; when absent the classifier is trained at start-up.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub filters: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Generated training scenes (each yields one image per user).
    pub scenes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { checkpoint: None, filters: 16, hidden: 128, lr: 1e-3, batch: 32, epochs: 20, scenes: 80 }
    }
}

impl CnnConfig {
    pub fn net(&self, layout: &SceneLayout) -> ConvNetConfig {
        let n = crate::predictors::raster::grid_size(layout);
        ConvNetConfig { height: n, width: n, filters: self.filters, hidden: self.hidden, ..ConvNetConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub source: PredictorSource,
    pub viewpoint_mode: ViewpointMode,
    pub viewpoint: ViewpointParams,
    pub direction: DirectionParams,
    pub cnn: CnnConfig,
    pub traces: TraceParams,
    /// Recorded viewpoint traces (`slot,user,x_deg,y_deg,z_deg`); synthetic
    /// traces are generated when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<PathBuf>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            source: PredictorSource::Learned,
            viewpoint_mode: ViewpointMode::Centralized,
            viewpoint: ViewpointParams::default(),
            direction: DirectionParams::default(),
            cnn: CnnConfig::default(),
            traces: TraceParams::default(),
            trace_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ControlMode,
    pub slots: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { mode: ControlMode::Cdrl, slots: 300, episodes: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scene: SceneConfig,
    pub channel: ChannelConfig,
    pub video: VideoConfig,
    pub predictors: PredictorConfig,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

/// A parsed configuration and the dotted keys that took default values.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: SimConfig,
    pub defaulted: Vec<String>,
}

fn pos(v: [f64; 3]) -> Position3 {
    Position3::new(v[0], v[1], v[2])
}

impl SimConfig {
    pub fn layout(&self) -> SceneLayout {
        let s = &self.scene;
        SceneLayout {
            width: s.width,
            height: s.height,
            mec: pos(s.mec),
            ris: pos(s.ris),
            obstacles: s.obstacles.clone(),
            body_radius: s.body_radius,
        }
    }

    /// Walkable cells, excluding the cell under the MEC.
    pub fn area(&self) -> Result<MobilityArea> {
        let mec = pos(self.scene.mec).cell(self.scene.width);
        MobilityArea::new(self.scene.width, self.scene.obstacles.clone(), &[mec])
    }

    /// The MEC array faces the room centre; the RIS faces straight back
    /// from its wall.
    pub fn placement(&self) -> ArrayPlacement {
        let s = &self.scene;
        let centre = (s.width / 2.0, s.width / 2.0);
        let mec_broadside = (centre.1 - s.mec[1]).atan2(centre.0 - s.mec[0]);
        let ris_broadside = if s.ris[1] >= s.width - 1e-9 {
            -PI / 2.0
        } else if s.ris[1] <= 1e-9 {
            PI / 2.0
        } else if s.ris[0] <= 1e-9 {
            0.0
        } else if s.ris[0] >= s.width - 1e-9 {
            PI
        } else {
            (centre.1 - s.ris[1]).atan2(centre.0 - s.ris[0])
        };
        ArrayPlacement { mec: pos(s.mec), ris: pos(s.ris), mec_broadside, ris_broadside }
    }

    pub fn channel_params(&self) -> Result<ChannelParams> {
        let c = &self.channel;
        let tau = match &c.absorption_table {
            Some(path) => AbsorptionTable::load(path)?.coefficient(c.freq_hz)?,
            None => c.absorption,
        };
        let p = ChannelParams {
            freq_hz: c.freq_hz,
            tau,
            mec_antennas: c.mec_antennas,
            ris_elements: c.ris_elements,
            ris_gain: c.ris_gain,
            c: SPEED_OF_LIGHT,
            element_spacing: c.element_spacing,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |k: &str, why: &str| Err(CoreError::config(k, why));
        let s = &self.scene;
        if s.users == 0 {
            return err("scene.users", "at least one user is required");
        }
        if !(s.width >= 1.0) || !(s.height > 0.0) {
            return err("scene.width", "room dimensions must be positive (width at least 1 m)");
        }
        if !(s.speed > 0.0) {
            return err("scene.speed", "must be positive");
        }
        if !(s.body_radius >= 0.0) {
            return err("scene.body_radius", "must be non-negative");
        }
        let [lo, hi] = s.user_height;
        if !(lo > 0.0 && lo <= hi && hi <= s.height) {
            return err("scene.user_height", "needs 0 < min ≤ max ≤ room height");
        }
        for (key, p) in [("scene.mec", s.mec), ("scene.ris", s.ris)] {
            if p.iter().any(|v| !v.is_finite()) || p[0] < 0.0 || p[1] < 0.0 || p[0] > s.width || p[1] > s.width {
                return err(key, "must lie inside the room footprint");
            }
        }
        for o in &s.obstacles {
            if !(o.x_range[0] < o.x_range[1] && o.y_range[0] < o.y_range[1] && o.height > 0.0) {
                return err("scene.obstacles", "each obstacle needs increasing ranges and a positive height");
            }
        }
        let area = self.area()?;
        if area.free_cells().len() < s.users {
            return err("scene.users", "more users than walkable cells");
        }
        self.channel_params()?;
        let c = &self.channel;
        if !(1..=8).contains(&c.phase_bits) {
            return err("channel.phase_bits", "must lie in 1..=8");
        }
        if !(c.tx_power_w > 0.0) || !(c.bandwidth_hz > 0.0) || !c.noise_dbm.is_finite() {
            return err("channel.tx_power_w", "power, bandwidth and noise must be positive and finite");
        }
        if !(c.fading_sigma >= 0.0) {
            return err("channel.fading_sigma", "must be non-negative");
        }
        let v = &self.video;
        if v.n_p == 0 || v.n_v == 0 {
            return err("video.n_p", "FoV resolution must be positive");
        }
        if !(v.compression_ratio >= 1.0) {
            return err("video.compression_ratio", "must be at least 1");
        }
        if !(v.mec_cycles_per_bit > 0.0) || !(v.mec_cycles_per_s > 0.0) {
            return err("video.mec_cycles_per_s", "MEC compute figures must be positive");
        }
        if !(v.t_th_downlink > 0.0) || !(v.t_th_vr > 0.0) || !(v.latency_cap > 0.0) {
            return err("video.t_th_downlink", "latency thresholds and cap must be positive");
        }
        if !(v.viewpoint_tol_deg >= 0.0) || !(v.r_th > 0.0) || !v.q_min.is_finite() {
            return err("video.r_th", "tolerance must be non-negative, r_th positive, q_min finite");
        }
        if !(v.viewpoint_packet_bits > 0.0) {
            return err("video.viewpoint_packet_bits", "must be positive");
        }
        let p = &self.predictors;
        if p.viewpoint.window == 0 || p.viewpoint.hidden == 0 || !(p.viewpoint.lr > 0.0) {
            return err("predictors.viewpoint", "window, hidden size and learning rate must be positive");
        }
        if p.direction.window < 2 || p.direction.hidden == 0 || !(p.direction.lr > 0.0) || p.direction.batch == 0 {
            return err("predictors.direction", "window ≥ 2; hidden, batch and learning rate positive");
        }
        if p.cnn.filters == 0 || p.cnn.hidden == 0 || !(p.cnn.lr > 0.0) || p.cnn.batch == 0 || p.cnn.scenes == 0 {
            return err("predictors.cnn", "filters, hidden, lr, batch and scenes must be positive");
        }
        let t = &p.traces;
        if !(t.period_slots[0] > 0.0 && t.period_slots[0] <= t.period_slots[1]) || t.noise < 0.0 || t.drift_step < 0.0 {
            return err("predictors.traces", "periods must be positive and ordered; noise and drift non-negative");
        }
        self.agent.validate()?;
        if self.run.slots == 0 {
            return err("run.slots", "must be positive");
        }
        if self.run.episodes == 0 {
            return err("run.episodes", "must be positive");
        }
        Ok(())
    }

    /// Effective configuration as TOML text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::config("<root>", e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| CoreError::io(path, e))
    }
}

/// Parses TOML text, applies `overrides` (dotted key, raw value) and
/// validates.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<LoadedConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CoreError::config("<file>", e.message()))?;
    for (key, raw) in overrides {
        set_dotted(&mut table, key, parse_scalar(raw))?;
    }
    let defaulted = defaulted_keys(&table)?;
    let config: SimConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CoreError::config(error_key(&e), e.message()))?;
    config.validate()?;
    Ok(LoadedConfig { config, defaulted })
}

/// Reads a config file and applies `THZVR__*` environment overrides.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_config(&text, &env_overrides())
}

/// `THZVR__SECTION__KEY=value` pairs as `section.key`, sorted by key.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, val)| {
            k.strip_prefix(ENV_PREFIX).map(|rest| (rest.split("__").map(str::to_lowercase).collect::<Vec<_>>().join("."), val))
        })
        .collect();
    v.sort();
    v
}

fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().ok_or_else(|| CoreError::config(key, "empty override key"))?;
    let mut cur = table;
    for p in path {
        let entry = cur.entry((*p).to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CoreError::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert((*last).to_owned(), value);
    Ok(())
}

fn leaf_keys(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_keys(&name, child, out);
            }
        }
        _ => out.push(prefix.to_owned()),
    }
}

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Every leaf key of the default configuration missing from `table`.
fn defaulted_keys(table: &toml::Table) -> Result<Vec<String>> {
    let defaults = toml::Value::try_from(SimConfig::default()).map_err(|e| CoreError::config("<root>", e.to_string()))?;
    let mut keys = Vec::new();
    leaf_keys("", &defaults, &mut keys);
    // Optional keys have no serialized default but are still defaulted.
    keys.extend(
        ["channel.absorption_table", "predictors.cnn.checkpoint", "predictors.trace_file"].map(str::to_owned),
    );
    keys.retain(|k| lookup(table, k).is_none());
    keys.sort();
    Ok(keys)
}

fn error_key(e: &toml::de::Error) -> String {
    // serde reports unknown fields in the message; the span is not a key.
    let msg = e.message();
    msg.split('`').nth(1).map_or_else(|| "<file>".to_owned(), str::to_owned)
}
