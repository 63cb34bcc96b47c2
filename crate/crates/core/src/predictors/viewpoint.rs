//! Online GRU viewpoint prediction, centralized or federated.
//!
//! The network sees the last `window` angles of one axis as offsets from the
//! newest one (scaled by the axis limit) and predicts the next offset, so a
//! zero output means "carry the last value forward".

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thzvr_nn::{sgd_step, GruRegressor, Model};

use super::fedavg::{fedavg_aggregate, FedClientState};
use super::traces::Axis;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewpointMode {
    Centralized,
    Fedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewpointParams {
    pub axis: Axis,
    pub window: usize,
    pub hidden: usize,
    pub lr: f64,
}

impl Default for ViewpointParams {
    fn default() -> Self {
        Self { axis: Axis::Y, window: 10, hidden: 64, lr: 0.005 }
    }
}

#[derive(Debug, Clone)]
pub struct ViewpointPredictor {
    pub params: ViewpointParams,
    pub mode: ViewpointMode,
    model: GruRegressor,
    client_samples: Vec<usize>,
    histories: Vec<VecDeque<f64>>,
}

impl ViewpointPredictor {
    pub fn new<R: Rng + ?Sized>(params: ViewpointParams, mode: ViewpointMode, users: usize, rng: &mut R) -> Self {
        Self {
            params,
            mode,
            model: GruRegressor::new(1, params.hidden, 1, rng),
            client_samples: vec![0; users],
            histories: vec![VecDeque::with_capacity(params.window + 1); users],
        }
    }

    pub fn model(&self) -> &GruRegressor {
        &self.model
    }

    /// Clears every user's history (the model and sample counts are kept).
    pub fn reset_histories(&mut self) {
        for h in &mut self.histories {
            h.clear();
        }
    }

    /// Size of one model upload in bits (32-bit weights).
    pub fn model_bits(&self) -> f64 {
        32.0 * self.model.params().num_scalars() as f64
    }

    fn scale(&self) -> f64 {
        self.params.axis.limit()
    }

    fn inputs(&self, windows: &[&VecDeque<f64>]) -> Vec<Array2<f64>> {
        let w = self.params.window;
        let scale = self.scale();
        (0..w)
            .map(|t| {
                Array2::from_shape_fn((windows.len(), 1), |(b, _)| {
                    let h = windows[b];
                    let last = h[h.len() - 1];
                    (h[h.len() - w + t] - last) / scale
                })
            })
            .collect()
    }

    fn ready(&self, k: usize) -> bool {
        self.histories[k].len() >= self.params.window
    }

    /// Predicted next angle of every user. Users with fewer than `window`
    /// observations get their last value (0 before any observation).
    pub fn predict_all(&self) -> Result<Vec<f64>> {
        let ready: Vec<usize> = (0..self.histories.len()).filter(|&k| self.ready(k)).collect();
        let mut out: Vec<f64> = self.histories.iter().map(|h| h.back().copied().unwrap_or(0.0)).collect();
        if !ready.is_empty() {
            let windows: Vec<&VecDeque<f64>> = ready.iter().map(|&k| &self.histories[k]).collect();
            let y = self.model.forward(&self.inputs(&windows))?;
            let lim = self.scale();
            for (i, &k) in ready.iter().enumerate() {
                out[k] = (out[k] + y[[i, 0]] * lim).clamp(-lim, lim);
            }
        }
        Ok(out)
    }

    fn step_on(&self, model: &mut GruRegressor, windows: &[&VecDeque<f64>], targets: &[f64]) -> Result<f64> {
        let xs = self.inputs(windows);
        let scale = self.scale();
        let target = Array2::from_shape_fn((windows.len(), 1), |(b, _)| {
            (targets[b] - windows[b][windows[b].len() - 1]) / scale
        });
        model.params_mut().zero_grad();
        let (y, cache) = model.forward_train(&xs)?;
        let (loss, grad) = thzvr_nn::loss::mse(y.view(), target.view())?;
        model.backward(&cache, grad.view())?;
        sgd_step(model.params_mut(), self.params.lr);
        Ok(loss)
    }

    /// Reveals this slot's actual angles and trains on them.
    ///
    /// Centralized: the MEC takes one SGD step per user, in user order.
    /// Federated: every user takes one local step from the current global
    /// model and the MEC averages the local models weighted by how many
    /// samples each client has trained on. Returns the mean squared error
    /// (in scaled units) of the users that contributed a sample.
    pub fn observe(&mut self, actual: &[f64]) -> Result<Option<f64>> {
        assert_eq!(actual.len(), self.histories.len(), "one angle per user");
        let ready: Vec<usize> = (0..actual.len()).filter(|&k| self.ready(k)).collect();
        let mut losses = Vec::with_capacity(ready.len());
        match self.mode {
            ViewpointMode::Centralized => {
                let mut model = self.model.clone();
                for &k in &ready {
                    losses.push(self.step_on(&mut model, &[&self.histories[k]], &[actual[k]])?);
                }
                self.model = model;
            }
            ViewpointMode::Fedavg if !ready.is_empty() => {
                let mut clients = Vec::with_capacity(ready.len());
                for &k in &ready {
                    let mut local = self.model.clone();
                    losses.push(self.step_on(&mut local, &[&self.histories[k]], &[actual[k]])?);
                    self.client_samples[k] += 1;
                    clients.push(FedClientState { tree: local.params().clone(), samples: self.client_samples[k] });
                }
                let avg = fedavg_aggregate(&clients)?;
                self.model.params_mut().copy_values_from(&avg)?;
            }
            ViewpointMode::Fedavg => {}
        }
        for (h, &a) in self.histories.iter_mut().zip(actual) {
            h.push_back(a);
            if h.len() > self.params.window {
                h.pop_front();
            }
        }
        Ok((!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64))
    }
}
