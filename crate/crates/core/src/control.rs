//! RIS phase selection: the action codebook, state encoding, a constrained
//! deep-Q agent and the exhaustive and random baselines.

use std::collections::{HashSet, VecDeque};

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thzvr_nn::{Activation, Adam, AdamConfig, Mlp, Model};

use crate::channel::ChannelSet;
use crate::error::{CoreError, Result};
use crate::geometry::Position3;
use crate::phy::{steering_config, PhaseConfig};

/// Largest full configuration space [`exhaustive_full`] will enumerate.
pub const FULL_SPACE_LIMIT: u64 = 1 << 20;

/// Size of the full `L̂^N` space, or `None` on overflow.
pub fn full_space_size(elements: usize, bits: u8) -> Option<u64> {
    let l = 1u64.checked_shl(u32::from(bits))?;
    let mut total = 1u64;
    for _ in 0..elements {
        total = total.checked_mul(l)?;
    }
    Some(total)
}

/// Finite set of candidate phase configurations.
///
/// When the full space fits in `size` the codebook is that space in index
/// order. Otherwise entry 0 is all zeros, the next entries steer towards one
/// user each (refreshed every slot from the current channels) and the rest are
/// random configurations fixed at construction.
#[derive(Debug, Clone)]
pub struct ActionCodebook {
    elements: usize,
    bits: u8,
    entries: Vec<PhaseConfig>,
    /// `steering[j]` is the entry index of user `j`'s steering config.
    steering: Vec<usize>,
    full: bool,
}

impl ActionCodebook {
    pub fn new<R: Rng + ?Sized>(elements: usize, bits: u8, size: usize, users: usize, rng: &mut R) -> Result<Self> {
        if size < 2 {
            return Err(CoreError::config("agent.codebook_size", "must be at least 2"));
        }
        PhaseConfig::new(Vec::new(), bits)?;
        if let Some(total) = full_space_size(elements, bits).filter(|&t| t <= size as u64) {
            let entries = (0..total).map(|i| PhaseConfig::from_index(i, elements, bits)).collect();
            return Ok(Self { elements, bits, entries, steering: Vec::new(), full: true });
        }
        let slots = users.min(size - 1);
        if slots < users {
            log::warn!("codebook of {size} entries holds steering configs for only {slots} of {users} users");
        }
        let mut entries = vec![PhaseConfig::zeros(elements, bits)];
        // Placeholders until the first refresh; they are valid distinct configs.
        let mut seen: HashSet<PhaseConfig> = entries.iter().cloned().collect();
        while entries.len() < size {
            let cfg = random_config(elements, bits, rng);
            if seen.insert(cfg.clone()) {
                entries.push(cfg);
            }
        }
        Ok(Self { elements, bits, entries, steering: (1..=slots).collect(), full: false })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &PhaseConfig {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[PhaseConfig] {
        &self.entries
    }

    pub fn is_full_space(&self) -> bool {
        self.full
    }

    /// Entry indices holding steering configurations.
    pub fn steering_slots(&self) -> &[usize] {
        &self.steering
    }

    /// Recomputes the steering entries for the current channels.
    ///
    /// With fewer slots than users, predicted-NLoS users take priority.
    /// Entries that would duplicate another are replaced by fresh random
    /// configurations.
    pub fn refresh_steering<R: Rng + ?Sized>(&mut self, ch: &ChannelSet, predicted_los: &[bool], rng: &mut R) {
        if self.full || self.steering.is_empty() {
            return;
        }
        let k = ch.users();
        let mut order: Vec<usize> = (0..k).filter(|&u| !predicted_los.get(u).copied().unwrap_or(false)).collect();
        order.extend((0..k).filter(|&u| predicted_los.get(u).copied().unwrap_or(false)));
        let chosen: Vec<usize> = {
            let mut c: Vec<usize> = order.into_iter().take(self.steering.len()).collect();
            c.sort_unstable();
            c
        };
        let steer_set: HashSet<usize> = self.steering.iter().copied().collect();
        let mut seen: HashSet<PhaseConfig> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(i, _)| !steer_set.contains(i))
            .map(|(_, c)| c.clone())
            .collect();
        for (slot_pos, &slot) in self.steering.clone().iter().enumerate() {
            let mut cfg = match chosen.get(slot_pos) {
                Some(&u) => steering_config(ch, u, self.bits),
                None => random_config(self.elements, self.bits, rng),
            };
            while seen.contains(&cfg) {
                cfg = random_config(self.elements, self.bits, rng);
            }
            seen.insert(cfg.clone());
            self.entries[slot] = cfg;
        }
    }
}

/// Codebook for one slot: fresh random fill plus steering for `ch`.
pub fn build_codebook<R: Rng + ?Sized>(
    ch: &ChannelSet,
    predicted_los: &[bool],
    size: usize,
    bits: u8,
    rng: &mut R,
) -> Result<ActionCodebook> {
    let n = ch.g_down.nrows();
    let mut book = ActionCodebook::new(n, bits, size, ch.users(), rng)?;
    book.refresh_steering(ch, predicted_los, rng);
    Ok(book)
}

fn random_config<R: Rng + ?Sized>(n: usize, bits: u8, rng: &mut R) -> PhaseConfig {
    let l = 1u16 << bits;
    PhaseConfig { levels: (0..n).map(|_| rng.random_range(0..l)).collect(), bits }
}

/// Flattened Q-network input `[x/W, y/W, z/H]ₖ ‖ los_k ‖ clip(qoe_k)/q_clip`.
pub fn encode_state(
    positions: &[Position3],
    predicted_los: &[bool],
    prev_qoe: &[f64],
    room: (f64, f64),
    q_clip: f64,
) -> Result<Vec<f64>> {
    let k = positions.len();
    if predicted_los.len() != k || prev_qoe.len() != k {
        return Err(CoreError::Contract(format!(
            "state arity mismatch: {k} positions, {} flags, {} QoE values",
            predicted_los.len(),
            prev_qoe.len()
        )));
    }
    let (width, height) = room;
    let mut s = Vec::with_capacity(5 * k);
    for p in positions {
        s.extend([p.x / width, p.y / width, p.z / height]);
    }
    s.extend(predicted_los.iter().map(|&l| if l { 1.0 } else { 0.0 }));
    s.extend(prev_qoe.iter().map(|&q| q.clamp(-q_clip, q_clip) / q_clip));
    Ok(s)
}

/// Sum of per-user QoE.
pub fn compute_reward(qoe: &[f64]) -> f64 {
    qoe.iter().sum()
}

/// Downlink latency cost in both sign conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    /// `max(0, mean − t_th)`: positive only when the constraint is violated.
    pub violation: f64,
    /// `t_th − mean`: positive when the constraint holds.
    pub signed: f64,
}

pub fn compute_cost(latencies: &[f64], t_th: f64) -> CostTerms {
    let mean = if latencies.is_empty() { 0.0 } else { latencies.iter().sum::<f64>() / latencies.len() as f64 };
    CostTerms { violation: (mean - t_th).max(0.0), signed: t_th - mean }
}

/// Tabular blend `(1−α)·q_eval + α·q_target`.
pub fn bellman_blend(q_eval: f64, q_target: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * q_eval + alpha * q_target
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub cost: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Bounded FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buf: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), buf: VecDeque::with_capacity(capacity.max(1)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n).map(|_| &self.buf[rng.random_range(0..self.buf.len())]).collect()
    }

    pub fn mean_cost(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.buf.iter().map(|t| t.cost).sum::<f64>() / self.buf.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    /// Bellman blend rate `α`: the network regresses toward
    /// `(1−α)·Q_eval + α·y`. Also the step of the multiplier ascent.
    pub learning_rate: f64,
    /// Adam step size of the evaluation network.
    pub optimizer_lr: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub minibatch: usize,
    /// Slots of purely random actions before training starts.
    pub warmup: usize,
    pub target_period: usize,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Slots over which ε falls linearly to `epsilon_min`.
    pub epsilon_horizon: usize,
    /// Global gradient-norm clip applied before each Adam step.
    pub grad_clip: f64,
    pub codebook_size: usize,
    /// QoE is clipped to `±q_clip` and scaled into `[−1, 1]` in the state.
    pub q_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden_units: 128,
            hidden_layers: 2,
            learning_rate: 0.05,
            optimizer_lr: 1e-3,
            gamma: 0.9,
            replay_capacity: 10_000,
            minibatch: 64,
            warmup: 500,
            target_period: 50,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            epsilon_horizon: 3_000,
            grad_clip: 1.0,
            codebook_size: 64,
            q_clip: 5.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(CoreError::config(format!("agent.{k}"), why));
        if self.hidden_units == 0 || self.hidden_layers == 0 {
            return bad("hidden_units", "network needs at least one non-empty hidden layer");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate", "must lie in (0, 1]");
        }
        if !(self.optimizer_lr > 0.0) {
            return bad("optimizer_lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if self.replay_capacity == 0 || self.minibatch == 0 {
            return bad("minibatch", "replay capacity and minibatch must be positive");
        }
        if self.target_period == 0 {
            return bad("target_period", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_min) || !(0.0..=1.0).contains(&self.epsilon_start) {
            return bad("epsilon_min", "exploration rates must lie in [0, 1]");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip", "must be positive");
        }
        if self.codebook_size < 2 {
            return bad("codebook_size", "must be at least 2");
        }
        if !(self.q_clip > 0.0) {
            return bad("q_clip", "must be positive");
        }
        Ok(())
    }
}

/// Deep-Q agent with a latency-cost Lagrangian term.
#[derive(Debug, Clone)]
pub struct CdqnAgent {
    config: AgentConfig,
    actions: usize,
    eval: Mlp,
    target: Mlp,
    adam: Adam,
    replay: ReplayMemory,
    lambda: f64,
    steps: usize,
    train_steps: usize,
    syncs: usize,
    /// Overrides the schedule when set.
    epsilon_override: Option<f64>,
}

impl CdqnAgent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, state_dim: usize, actions: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if actions == 0 || state_dim == 0 {
            return Err(CoreError::Contract("agent needs a non-empty state and action set".into()));
        }
        let mut sizes = vec![state_dim];
        sizes.extend(std::iter::repeat_n(config.hidden_units, config.hidden_layers));
        sizes.push(actions);
        let eval = Mlp::new(&sizes, Activation::Relu, rng);
        let target = eval.clone();
        let adam = Adam::new(AdamConfig::with_lr(config.optimizer_lr));
        let replay = ReplayMemory::new(config.replay_capacity);
        Ok(Self {
            config,
            actions,
            eval,
            target,
            adam,
            replay,
            lambda: 0.0,
            steps: 0,
            train_steps: 0,
            syncs: 0,
            epsilon_override: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda.max(0.0);
    }

    pub fn replay(&self) -> &ReplayMemory {
        &self.replay
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn sync_count(&self) -> usize {
        self.syncs
    }

    pub fn eval_net(&self) -> &Mlp {
        &self.eval
    }

    pub fn eval_net_mut(&mut self) -> &mut Mlp {
        &mut self.eval
    }

    pub fn target_net(&self) -> &Mlp {
        &self.target
    }

    /// Fixes ε (for evaluation rollouts or tests); `None` restores the schedule.
    pub fn set_epsilon(&mut self, eps: Option<f64>) {
        self.epsilon_override = eps;
    }

    pub fn epsilon(&self) -> f64 {
        if let Some(e) = self.epsilon_override {
            return e;
        }
        let c = &self.config;
        if c.epsilon_horizon == 0 {
            return c.epsilon_min;
        }
        let frac = (self.steps as f64 / c.epsilon_horizon as f64).min(1.0);
        c.epsilon_start + (c.epsilon_min - c.epsilon_start) * frac
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec())
            .map_err(|e| CoreError::Contract(e.to_string()))?;
        Ok(self.eval.forward(x.view())?.row(0).to_vec())
    }

    pub fn target_q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec())
            .map_err(|e| CoreError::Contract(e.to_string()))?;
        Ok(self.target.forward(x.view())?.row(0).to_vec())
    }

    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// ε-greedy choice; uniform during warm-up.
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<usize> {
        let warming = self.epsilon_override.is_none() && self.steps < self.config.warmup;
        if warming || rng.random::<f64>() < self.epsilon() {
            Ok(rng.random_range(0..self.actions))
        } else {
            self.greedy_action(state)
        }
    }

    /// Stores a transition and advances the exploration schedule.
    pub fn observe(&mut self, t: Transition) -> Result<()> {
        if t.action >= self.actions {
            return Err(CoreError::Contract(format!("action {} outside codebook of {}", t.action, self.actions)));
        }
        self.replay.push(t);
        self.steps += 1;
        Ok(())
    }

    /// One minibatch step from replay, once warm-up is over and enough
    /// transitions are stored. Returns the minibatch loss.
    pub fn train<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.steps < self.config.warmup || self.replay.len() < self.config.minibatch {
            return Ok(None);
        }
        let batch: Vec<Transition> =
            self.replay.sample(self.config.minibatch, rng).into_iter().cloned().collect();
        self.train_on(&batch).map(Some)
    }

    /// Regresses the taken actions' outputs towards
    /// `y = R + γ·max Q_tar(S′) − λ·cost` (or `y = R` when terminal).
    /// Syncs the target every `target_period` calls. Empty batches are a
    /// no-op with zero loss.
    pub fn train_on(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let n = batch.len();
        let dim = batch[0].state.len();
        let stack = |f: &dyn Fn(&Transition) -> &Vec<f64>| -> Result<Array2<f64>> {
            let mut m = Array2::zeros((n, dim));
            for (mut row, t) in m.axis_iter_mut(Axis(0)).zip(batch) {
                let v = f(t);
                if v.len() != dim {
                    return Err(CoreError::Contract("inconsistent state width in minibatch".into()));
                }
                row.assign(&ndarray::ArrayView1::from(v.as_slice()));
            }
            Ok(m)
        };
        let states = stack(&|t| &t.state)?;
        let next = stack(&|t| &t.next_state)?;
        let q_next = self.target.forward(next.view())?;
        let targets: Vec<f64> = batch
            .iter()
            .zip(q_next.axis_iter(Axis(0)))
            .map(|(t, qn)| {
                if t.terminal {
                    t.reward
                } else {
                    let best = qn.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    t.reward + self.config.gamma * best - self.lambda * t.cost
                }
            })
            .collect();
        let (q, cache) = self.eval.forward_train(states.view())?;
        let mut dy = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (i, (t, y)) in batch.iter().zip(&targets).enumerate() {
            if t.action >= self.actions {
                return Err(CoreError::Contract(format!("action {} outside codebook", t.action)));
            }
            let qa = q[[i, t.action]];
            let diff = qa - bellman_blend(qa, *y, self.config.learning_rate);
            loss += diff * diff;
            dy[[i, t.action]] = 2.0 * diff / n as f64;
        }
        loss /= n as f64;
        self.eval.params_mut().zero_grad();
        self.eval.backward(&cache, dy.view())?;
        thzvr_nn::clip_grad_norm(self.eval.params_mut(), self.config.grad_clip);
        self.adam.step(self.eval.params_mut());
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.config.target_period) {
            self.sync_target()?;
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.params_mut().copy_values_from(self.eval.params())?;
        self.syncs += 1;
        Ok(())
    }

    /// Projected ascent `λ ← max(0, λ + α·mean replay cost)`.
    pub fn update_multiplier(&mut self) -> f64 {
        if !self.replay.is_empty() {
            self.lambda = (self.lambda + self.config.learning_rate * self.replay.mean_cost()).max(0.0);
        }
        self.lambda
    }
}

/// Best entry of `candidates` under `reward`; ties keep the earliest.
/// Returns `(index, reward)`; `None` for an empty candidate list.
pub fn exhaustive_select<'a, I, F>(candidates: I, mut reward: F) -> Result<Option<(usize, f64)>>
where
    I: IntoIterator<Item = &'a PhaseConfig>,
    F: FnMut(&PhaseConfig) -> Result<f64>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, cfg) in candidates.into_iter().enumerate() {
        let r = reward(cfg)?;
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    Ok(best)
}

/// Enumerates the full `L̂^N` space. Refuses spaces above [`FULL_SPACE_LIMIT`].
pub fn exhaustive_full<F>(elements: usize, bits: u8, mut reward: F) -> Result<(PhaseConfig, f64)>
where
    F: FnMut(&PhaseConfig) -> Result<f64>,
{
    let total = full_space_size(elements, bits)
        .filter(|&t| t <= FULL_SPACE_LIMIT)
        .ok_or_else(|| {
            CoreError::Contract(format!(
                "full enumeration of {}^{elements} configurations exceeds the limit of {FULL_SPACE_LIMIT}",
                1u64 << bits
            ))
        })?;
    let mut best = (PhaseConfig::zeros(elements, bits), f64::NEG_INFINITY);
    for i in 0..total {
        let cfg = PhaseConfig::from_index(i, elements, bits);
        let r = reward(&cfg)?;
        if r > best.1 {
            best = (cfg, r);
        }
    }
    Ok(best)
}

/// Uniform draw of an entry index; `None` for an empty list.
pub fn random_select<R: Rng + ?Sized>(entries: &[PhaseConfig], rng: &mut R) -> Option<usize> {
    (!entries.is_empty()).then(|| rng.random_range(0..entries.len()))
}
