//! Learned predictors: viewpoint (GRU, centralized or FedAvg), moving
//! direction (LSTM) and LoS status (CNN over a rasterized scene).

pub mod direction;
pub mod fedavg;
pub mod los;
pub mod raster;
pub mod traces;
pub mod viewpoint;

pub use direction::{argmax, direction_dataset, DirectionParams, DirectionPredictor, DirectionSample};
pub use fedavg::{fedavg_aggregate, FedClientState};
pub use los::{generate_los_dataset, LosClassifier, LosDataset};
pub use raster::{decode_users, rasterize_scene};
pub use traces::{load_trace_csv, synthetic_traces, Axis, TraceParams, ViewpointSample};
pub use viewpoint::{ViewpointMode, ViewpointParams, ViewpointPredictor};
