//! Episode orchestration, configuration, metrics, sweeps and plot tables.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod plots;
pub mod sweep;

pub use config::{load_config, parse_config, ControlMode, LoadedConfig, PredictorSource, SimConfig};
pub use engine::{codebook_len, pretrain_cnn, run_episode, Simulator, SlotContext, World};
pub use metrics::{summarize, write_metrics, EpisodeSummary, SlotMetrics, UserSlot};
pub use sweep::{run_sweep, SweepAxis, SweepRow};
