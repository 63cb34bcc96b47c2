//! Minimal 64-bit neural-network toolkit: dense, convolution and pooling
//! layers, GRU/LSTM with backpropagation through time, softmax, MSE and
//! cross-entropy losses, SGD and Adam, and finite-difference gradient
//! checking. Everything is CPU-only and deterministic given a seeded RNG.

pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod models;
pub mod optim;
pub mod recurrent;
pub mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{grad_check, standard_suite, GradCheckReport};
pub use models::{Activation, ConvNet, ConvNetConfig, GruRegressor, LstmClassifier, Mlp};
pub use optim::{clip_grad_norm, sgd_step, Adam, AdamConfig};
pub use tensor::{Model, Param, ParameterTree, Tensor};
