//! Online LSTM prediction of each user's next grid move.
//!
//! Each time step of the input window is `[x/W, y/W, Δx/v, Δy/v]`: the
//! position normalized by the room width and the last displacement
//! normalized by the walking speed.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thzvr_nn::{loss, sgd_step, LstmClassifier, Model};

use crate::error::Result;
use crate::geometry::{spawn_user, vrmm_step, Direction, MobilityArea, Position3};

pub const FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectionParams {
    pub window: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub replay: usize,
}

impl Default for DirectionParams {
    fn default() -> Self {
        Self { window: 10, hidden: 64, lr: 0.005, batch: 64, replay: 2048 }
    }
}

/// One labelled window: `window` feature rows and the move that followed.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSample {
    pub features: Vec<[f64; FEATURES]>,
    pub label: Direction,
}

/// Feature rows for the last `window` positions of `track` (which must hold
/// at least `window` entries; one more supplies the first displacement).
pub fn window_features(track: &[Position3], window: usize, width: f64, speed: f64) -> Vec<[f64; FEATURES]> {
    let n = track.len();
    (n - window..n)
        .map(|i| {
            let p = track[i];
            let (dx, dy) = if i > 0 { (p.x - track[i - 1].x, p.y - track[i - 1].y) } else { (0.0, 0.0) };
            [p.x / width, p.y / width, dx / speed, dy / speed]
        })
        .collect()
}

fn batch_inputs(samples: &[&[[f64; FEATURES]]], window: usize) -> Vec<Array2<f64>> {
    (0..window)
        .map(|t| Array2::from_shape_fn((samples.len(), FEATURES), |(b, f)| samples[b][t][f]))
        .collect()
}

/// Simulates `users` walkers for `slots` slots and labels every window that
/// is followed by a move.
pub fn direction_dataset<R: Rng + ?Sized>(
    area: &MobilityArea,
    users: usize,
    slots: usize,
    window: usize,
    speed: f64,
    rng: &mut R,
) -> Result<Vec<DirectionSample>> {
    let mut out = Vec::new();
    for _ in 0..users {
        let mut s = spawn_user(area, 1.5, speed, rng);
        let mut track = vec![s.position];
        for _ in 0..slots {
            s = vrmm_step(&s, area, rng)?;
            let prev = *track.last().expect("non-empty");
            if track.len() >= window {
                if let Some(label) = Direction::of_move(s.position.x - prev.x, s.position.y - prev.y) {
                    out.push(DirectionSample { features: window_features(&track, window, area.width, speed), label });
                }
            }
            track.push(s.position);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DirectionPredictor {
    pub params: DirectionParams,
    width: f64,
    speed: f64,
    model: LstmClassifier,
    tracks: Vec<VecDeque<Position3>>,
    replay: VecDeque<DirectionSample>,
}

impl DirectionPredictor {
    pub fn new<R: Rng + ?Sized>(params: DirectionParams, users: usize, width: f64, speed: f64, rng: &mut R) -> Self {
        Self {
            params,
            width,
            speed,
            model: LstmClassifier::new(FEATURES, params.hidden, 4, rng),
            tracks: vec![VecDeque::new(); users],
            replay: VecDeque::new(),
        }
    }

    pub fn model(&self) -> &LstmClassifier {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut LstmClassifier {
        &mut self.model
    }

    /// Starts new tracks (e.g. at an episode boundary); the model and replay
    /// memory are kept.
    pub fn reset_tracks(&mut self, users: usize) {
        self.tracks = vec![VecDeque::new(); users];
    }

    fn track_window(&self, k: usize) -> Option<Vec<[f64; FEATURES]>> {
        let t = &self.tracks[k];
        (t.len() >= self.params.window).then(|| {
            let v: Vec<Position3> = t.iter().copied().collect();
            window_features(&v, self.params.window, self.width, self.speed)
        })
    }

    /// Move probabilities in `Direction::ALL` order for every user; uniform
    /// while a user's history is shorter than the window.
    pub fn predict_proba(&self) -> Result<Vec<[f64; 4]>> {
        let mut out = vec![[0.25; 4]; self.tracks.len()];
        let ready: Vec<(usize, Vec<[f64; FEATURES]>)> =
            (0..self.tracks.len()).filter_map(|k| self.track_window(k).map(|w| (k, w))).collect();
        if ready.is_empty() {
            return Ok(out);
        }
        let refs: Vec<&[[f64; FEATURES]]> = ready.iter().map(|(_, w)| w.as_slice()).collect();
        let probs = self.model.predict_proba(&batch_inputs(&refs, self.params.window))?;
        for (i, (k, _)) in ready.iter().enumerate() {
            for d in 0..4 {
                out[*k][d] = probs[[i, d]];
            }
        }
        Ok(out)
    }

    /// Next-slot positions: one step along the most likely direction,
    /// clamped to the room. Users still warming up are predicted to stay.
    pub fn predict_positions(&self) -> Result<Vec<Position3>> {
        let probs = self.predict_proba()?;
        Ok(self
            .tracks
            .iter()
            .zip(&probs)
            .map(|(t, p)| {
                let Some(&cur) = t.back() else {
                    return Position3::new(0.0, 0.0, 0.0);
                };
                if t.len() < self.params.window {
                    return cur;
                }
                let (ux, uy) = Direction::ALL[argmax(p)].unit();
                Position3::new(
                    (cur.x + ux * self.speed).clamp(0.0, self.width),
                    (cur.y + uy * self.speed).clamp(0.0, self.width),
                    cur.z,
                )
            })
            .collect())
    }

    /// One SGD step on the averaged cross-entropy of `samples`.
    pub fn train_batch(&mut self, samples: &[&DirectionSample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let refs: Vec<&[[f64; FEATURES]]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
        self.model.params_mut().zero_grad();
        let (logits, cache) = self.model.forward_train(&batch_inputs(&refs, self.params.window))?;
        let (l, dlogits, _) = loss::softmax_cross_entropy(logits.view(), &labels)?;
        self.model.backward(&cache, dlogits.view())?;
        sgd_step(self.model.params_mut(), self.params.lr);
        Ok(l)
    }

    /// One pass over `data` in shuffled minibatches; returns the mean loss.
    pub fn fit_epoch<R: Rng + ?Sized>(&mut self, data: &[DirectionSample], rng: &mut R) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.params.batch.max(1)) {
            let batch: Vec<&DirectionSample> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.train_batch(&batch)? * batch.len() as f64;
        }
        Ok(if data.is_empty() { 0.0 } else { total / data.len() as f64 })
    }

    /// Mean cross-entropy and argmax error rate on `data`.
    pub fn evaluate(&self, data: &[DirectionSample]) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Ok((0.0, 0.0));
        }
        let refs: Vec<&[[f64; FEATURES]]> = data.iter().map(|s| s.features.as_slice()).collect();
        let labels: Vec<usize> = data.iter().map(|s| s.label.index()).collect();
        let probs = self.model.predict_proba(&batch_inputs(&refs, self.params.window))?;
        let ce = loss::cross_entropy(probs.view(), &labels)?;
        let wrong = labels
            .iter()
            .enumerate()
            .filter(|(i, &l)| {
                let row: Vec<f64> = probs.row(*i).to_vec();
                argmax(&row) != l
            })
            .count();
        Ok((ce, wrong as f64 / data.len() as f64))
    }

    /// Reveals the users' actual positions, stores a labelled window for
    /// every user that moved, and takes one SGD step on a replayed
    /// minibatch. Returns the minibatch loss if a step was taken.
    pub fn observe<R: Rng + ?Sized>(&mut self, positions: &[Position3], rng: &mut R) -> Result<Option<f64>> {
        assert_eq!(positions.len(), self.tracks.len(), "one position per user");
        for (k, &p) in positions.iter().enumerate() {
            if let (Some(features), Some(&prev)) = (self.track_window(k), self.tracks[k].back()) {
                if let Some(label) = Direction::of_move(p.x - prev.x, p.y - prev.y) {
                    self.replay.push_back(DirectionSample { features, label });
                    if self.replay.len() > self.params.replay {
                        self.replay.pop_front();
                    }
                }
            }
            let t = &mut self.tracks[k];
            t.push_back(p);
            if t.len() > self.params.window + 1 {
                t.pop_front();
            }
        }
        if self.replay.is_empty() {
            return Ok(None);
        }
        let n = self.params.batch.min(self.replay.len());
        let picks: Vec<usize> = rand::seq::index::sample(rng, self.replay.len(), n).into_vec();
        let replay = std::mem::take(&mut self.replay);
        let batch: Vec<&DirectionSample> = picks.iter().map(|&i| &replay[i]).collect();
        let l = self.train_batch(&batch);
        self.replay = replay;
        l.map(Some)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
