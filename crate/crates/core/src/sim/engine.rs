//! The slot pipeline: mobility, uplink, predictions, rendering, RIS action,
//! downlink and QoE accounting.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ControlMode, PredictorSource, SimConfig};
use super::metrics::{SlotMetrics, UserSlot};
use crate::channel::{build_channel_set, ArrayPlacement, ChannelParams, ChannelSet};
use crate::control::{
    compute_cost, compute_reward, encode_state, exhaustive_select, random_select, ActionCodebook, CdqnAgent,
    Transition,
};
use crate::error::{CoreError, Result};
use crate::geometry::{los_status, spawn_user, vrmm_step, MobilityArea, MobilityState, Position3, SceneLayout};
use crate::phy::{reflection_diag, uplink_rates, Downlink, PhaseConfig};
use crate::predictors::{
    generate_los_dataset, load_trace_csv, synthetic_traces, DirectionPredictor, LosClassifier, ViewpointMode,
    ViewpointPredictor, ViewpointSample,
};
use crate::qoe::{qoe, transmit_latency, viewpoint_hit, QoERecord};

/// Trains the LoS classifier on generated scenes. Returns the classifier and
/// its per-epoch training loss.
pub fn pretrain_cnn<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<(LosClassifier, Vec<f64>)> {
    let layout = cfg.layout();
    let c = &cfg.predictors.cnn;
    let data = generate_los_dataset(
        &layout,
        &cfg.area()?,
        cfg.scene.users,
        c.scenes,
        (cfg.scene.user_height[0], cfg.scene.user_height[1]),
        rng,
    )?;
    let mut clf = LosClassifier::new(c.net(&layout), c.lr, rng);
    let mut losses = Vec::with_capacity(c.epochs);
    for epoch in 0..c.epochs {
        let l = clf.train_epoch(&data, c.batch, rng)?;
        log::debug!("cnn epoch {epoch}: loss {l:.5}");
        losses.push(l);
    }
    Ok((clf, losses))
}

/// Per-episode state of the environment.
#[derive(Debug, Clone)]
pub struct World {
    pub episode: usize,
    pub slot: usize,
    pub users: Vec<MobilityState>,
    pub traces: Vec<Vec<ViewpointSample>>,
    /// Configuration applied in the previous slot; the uplink reuses it.
    pub prev_theta: PhaseConfig,
    pub prev_rates: Option<Vec<f64>>,
    pub prev_qoe: Vec<f64>,
    pending: Option<(Vec<f64>, usize, f64, f64)>,
    /// Mobility, traces and fading.
    rng: ChaCha8Rng,
    /// Codebook fill and random actions, kept apart so trajectories do not
    /// depend on the control mode or the RIS size.
    policy_rng: ChaCha8Rng,
}

/// Channels and predictions of one slot, shared by every candidate action.
pub struct SlotContext<'a> {
    pub ch: &'a ChannelSet,
    pub serve_los: &'a [bool],
    pub hits: &'a [bool],
    pub prev_rates: Option<&'a [f64]>,
}

/// Long-lived simulator: the learners persist across episodes.
pub struct Simulator {
    cfg: SimConfig,
    layout: SceneLayout,
    area: MobilityArea,
    params: ChannelParams,
    placement: ArrayPlacement,
    noise_w: f64,
    render_time: f64,
    codebook: Option<ActionCodebook>,
    agent: Option<CdqnAgent>,
    viewpoint: ViewpointPredictor,
    direction: DirectionPredictor,
    cnn: Option<Arc<LosClassifier>>,
    rng: ChaCha8Rng,
}

impl Simulator {
    /// `cnn` is used in learned mode; when `None` the classifier is loaded
    /// from the configured checkpoint or trained from scratch.
    pub fn new(cfg: SimConfig, cnn: Option<Arc<LosClassifier>>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        rng.set_stream(u64::MAX);
        let layout = cfg.layout();
        let area = cfg.area()?;
        let params = cfg.channel_params()?;
        let k = cfg.scene.users;
        let cnn = match (cfg.predictors.source, cnn) {
            (PredictorSource::Genie, _) => None,
            (PredictorSource::Learned, Some(c)) => Some(c),
            (PredictorSource::Learned, None) => Some(Arc::new(match &cfg.predictors.cnn.checkpoint {
                Some(path) => LosClassifier::load(path, cfg.predictors.cnn.net(&layout), cfg.predictors.cnn.lr)?,
                None => pretrain_cnn(&cfg, &mut rng)?.0,
            })),
        };
        let viewpoint = ViewpointPredictor::new(cfg.predictors.viewpoint, cfg.predictors.viewpoint_mode, k, &mut rng);
        let direction = DirectionPredictor::new(cfg.predictors.direction, k, cfg.scene.width, cfg.scene.speed, &mut rng);
        let agent = match cfg.run.mode {
            ControlMode::Cdrl => {
                let actions = codebook_len(&cfg);
                Some(CdqnAgent::new(cfg.agent.clone(), 5 * k, actions, &mut rng)?)
            }
            _ => None,
        };
        Ok(Self {
            noise_w: cfg.channel.noise_w(),
            render_time: cfg.video.render_time()?,
            placement: cfg.placement(),
            layout,
            area,
            params,
            codebook: None,
            agent,
            viewpoint,
            direction,
            cnn,
            rng,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn agent(&self) -> Option<&CdqnAgent> {
        self.agent.as_ref()
    }

    pub fn agent_mut(&mut self) -> Option<&mut CdqnAgent> {
        self.agent.as_mut()
    }

    pub fn codebook(&self) -> Option<&ActionCodebook> {
        self.codebook.as_ref()
    }

    pub fn cnn(&self) -> Option<&Arc<LosClassifier>> {
        self.cnn.as_ref()
    }

    /// Fresh world for `episode`: reseeded users, traces and codebook.
    pub fn start_episode(&mut self, episode: usize) -> Result<World> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        rng.set_stream(episode as u64);
        let k = cfg.scene.users;
        let [h_lo, h_hi] = cfg.scene.user_height;
        let users: Vec<MobilityState> = (0..k)
            .map(|_| {
                let h = if h_hi > h_lo { rng.random_range(h_lo..=h_hi) } else { h_lo };
                spawn_user(&self.area, h, cfg.scene.speed, &mut rng)
            })
            .collect();
        let traces = match &cfg.predictors.trace_file {
            Some(path) => {
                let t = load_trace_csv(path)?;
                if t.len() < k || t.iter().any(|u| u.len() < cfg.run.slots) {
                    return Err(CoreError::config(
                        "predictors.trace_file",
                        format!("needs {k} users with at least {} slots each", cfg.run.slots),
                    ));
                }
                t.into_iter().take(k).collect()
            }
            None => synthetic_traces(&cfg.predictors.traces, k, cfg.run.slots, &mut rng),
        };
        let mut policy_rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        policy_rng.set_stream(episode as u64 | (1 << 32));
        self.codebook = Some(ActionCodebook::new(
            cfg.channel.ris_elements,
            cfg.channel.phase_bits,
            cfg.agent.codebook_size,
            k,
            &mut policy_rng,
        )?);
        self.viewpoint.reset_histories();
        self.direction.reset_tracks(k);
        if cfg.predictors.source == PredictorSource::Learned {
            let start: Vec<Position3> = users.iter().map(|u| u.position).collect();
            self.direction.observe(&start, &mut self.rng)?;
        }
        Ok(World {
            episode,
            slot: 0,
            users,
            traces,
            prev_theta: PhaseConfig::zeros(cfg.channel.ris_elements, cfg.channel.phase_bits),
            prev_rates: None,
            prev_qoe: vec![0.0; k],
            pending: None,
            rng,
            policy_rng,
        })
    }

    /// Downlink rates and QoE of every user if `theta` is applied.
    pub fn evaluate_action(&self, ctx: &SlotContext, theta: &PhaseConfig) -> (Vec<f64>, Vec<QoERecord>) {
        let dl = Downlink::new(ctx.ch, &reflection_diag(theta), ctx.serve_los);
        let rates = dl.rates(ctx.ch, self.cfg.channel.tx_power_w, self.noise_w);
        let quality = self.cfg.video.quality();
        let records = rates
            .iter()
            .enumerate()
            .map(|(k, &r)| qoe(ctx.hits[k], r, ctx.prev_rates.map(|p| p[k]), &quality))
            .collect();
        (rates, records)
    }

    /// Total QoE of the slot under `theta`.
    pub fn action_reward(&self, ctx: &SlotContext, theta: &PhaseConfig) -> f64 {
        let (_, recs) = self.evaluate_action(ctx, theta);
        compute_reward(&recs.iter().map(|r| r.qoe).collect::<Vec<_>>())
    }

    fn cap(&self, t: f64) -> f64 {
        t.min(self.cfg.video.latency_cap)
    }

    /// Runs one slot and advances `world`.
    pub fn run_slot(&mut self, world: &mut World) -> Result<SlotMetrics> {
        let cfg = self.cfg.clone();
        let k = cfg.scene.users;
        let t = world.slot;
        let genie = cfg.predictors.source == PredictorSource::Genie;
        let (p_tx, bw) = (cfg.channel.tx_power_w, cfg.channel.bandwidth_hz);

        // Mobility and true channels.
        for u in &mut world.users {
            *u = vrmm_step(u, &self.area, &mut world.rng)?;
        }
        let truth: Vec<Position3> = world.users.iter().map(|u| u.position).collect();
        let states = los_status(&self.layout, &truth);
        let los_true: Vec<bool> = states.iter().map(|s| s.is_los()).collect();
        let mut ch = build_channel_set(&self.params, &self.placement, &truth, &states)?;
        ch.apply_fading(cfg.channel.fading_sigma, &mut world.rng);

        // Uplink through the previous slot's configuration.
        let rates_up = uplink_rates(&ch, &reflection_diag(&world.prev_theta), p_tx, self.noise_w);
        let up_bits = match cfg.predictors.viewpoint_mode {
            ViewpointMode::Centralized => cfg.video.viewpoint_packet_bits,
            ViewpointMode::Fedavg => self.viewpoint.model_bits(),
        };
        let t_up: Vec<f64> = rates_up.iter().map(|&r| self.cap(transmit_latency(up_bits, r, bw))).collect();

        // Viewpoints.
        let axis = cfg.predictors.viewpoint.axis;
        let actual: Vec<f64> = world.traces.iter().map(|tr| axis.of(&tr[t])).collect();
        let (vp_pred, vp_mse) = if genie {
            (actual.clone(), None)
        } else {
            let pred = self.viewpoint.predict_all()?;
            let mse = self.viewpoint.observe(&actual)?;
            (pred, mse)
        };
        let hits: Vec<bool> =
            vp_pred.iter().zip(&actual).map(|(&p, &a)| viewpoint_hit(p, a, cfg.video.viewpoint_tol_deg)).collect();

        // Positions and LoS flags as the MEC sees them.
        let (pred_pos, dir_loss, los_pred) = if genie {
            (truth.clone(), None, los_true.clone())
        } else {
            let pos = self.direction.predict_positions()?;
            let loss = self.direction.observe(&truth, &mut self.rng)?;
            let cnn = self.cnn.as_ref().ok_or_else(|| CoreError::Contract("learned mode without a classifier".into()))?;
            let h = (cfg.scene.user_height[0], cfg.scene.user_height[1]);
            let flags: Vec<bool> = cnn.classify_scene(&self.layout, &pos, h)?.iter().map(|s| s.is_los()).collect();
            (pos, loss, flags)
        };

        // RIS action.
        let state = encode_state(&pred_pos, &los_pred, &world.prev_qoe, (cfg.scene.width, cfg.scene.height), cfg.agent.q_clip)?;
        let mut book = self.codebook.take().ok_or_else(|| CoreError::Contract("episode not started".into()))?;
        book.refresh_steering(&ch, &los_pred, &mut world.policy_rng);
        let ctx = SlotContext { ch: &ch, serve_los: &los_pred, hits: &hits, prev_rates: world.prev_rates.as_deref() };
        let action = match cfg.run.mode {
            ControlMode::Exhaustive => {
                exhaustive_select(book.entries(), |c| Ok(self.action_reward(&ctx, c)))?.map_or(0, |(i, _)| i)
            }
            ControlMode::Random => random_select(book.entries(), &mut world.policy_rng).unwrap_or(0),
            ControlMode::Cdrl => {
                let agent = self.agent.as_ref().ok_or_else(|| CoreError::Contract("C-DRL mode without an agent".into()))?;
                agent.select_action(&state, &mut self.rng)?
            }
        };
        let theta = book.get(action).clone();
        self.codebook = Some(book);

        // Downlink, latency and QoE.
        let ctx = SlotContext { ch: &ch, serve_los: &los_pred, hits: &hits, prev_rates: world.prev_rates.as_deref() };
        let (rates_down, recs) = self.evaluate_action(&ctx, &theta);
        let fov_bits = cfg.video.fov_bits();
        let t_down: Vec<f64> = rates_down.iter().map(|&r| self.cap(transmit_latency(fov_bits, r, bw))).collect();
        let qoes: Vec<f64> = recs.iter().map(|r| r.qoe).collect();
        let reward = compute_reward(&qoes);
        let cost = compute_cost(&t_down, cfg.video.t_th_downlink);

        // Learning.
        let last = t + 1 == cfg.run.slots;
        let mut dqn_loss = None;
        let (lambda, epsilon) = match self.agent.as_mut() {
            Some(agent) => {
                if let Some((s, a, r, c)) = world.pending.take() {
                    agent.observe(Transition { state: s, action: a, reward: r, cost: c, next_state: state.clone(), terminal: false })?;
                }
                if last {
                    agent.observe(Transition {
                        state: state.clone(),
                        action,
                        reward,
                        cost: cost.violation,
                        next_state: state.clone(),
                        terminal: true,
                    })?;
                } else {
                    world.pending = Some((state, action, reward, cost.violation));
                }
                dqn_loss = agent.train(&mut self.rng)?;
                agent.update_multiplier();
                (agent.lambda(), agent.epsilon())
            }
            None => (0.0, 0.0),
        };

        let users = (0..k)
            .map(|i| UserSlot {
                user: i,
                x: truth[i].x,
                y: truth[i].y,
                z: truth[i].z,
                los_true: los_true[i],
                los_pred: los_pred[i],
                viewpoint_actual: actual[i],
                viewpoint_pred: vp_pred[i],
                hit: hits[i],
                rate_up: rates_up[i],
                rate_down: rates_down[i],
                t_uplink: t_up[i],
                t_render: self.render_time,
                t_downlink: t_down[i],
                t_vr: t_up[i] + self.render_time + t_down[i],
                q_now: recs[i].q_now,
                qoe: recs[i].qoe,
            })
            .collect();
        world.prev_theta = theta;
        world.prev_rates = Some(rates_down);
        world.prev_qoe = qoes;
        world.slot += 1;
        Ok(SlotMetrics {
            episode: world.episode,
            slot: t,
            action,
            reward,
            cost: cost.violation,
            cost_signed: cost.signed,
            lambda,
            epsilon,
            dqn_loss,
            viewpoint_mse: vp_mse,
            direction_loss: dir_loss,
            users,
        })
    }

    pub fn run_episode(&mut self, episode: usize) -> Result<Vec<SlotMetrics>> {
        let mut world = self.start_episode(episode)?;
        (0..self.cfg.run.slots).map(|_| self.run_slot(&mut world)).collect()
    }

    /// Every configured episode in order.
    pub fn run(&mut self) -> Result<Vec<SlotMetrics>> {
        let mut out = Vec::with_capacity(self.cfg.run.episodes * self.cfg.run.slots);
        for e in 0..self.cfg.run.episodes {
            let rs = self.run_episode(e)?;
            if let Some(last) = rs.last() {
                log::info!(
                    "episode {e}: mean reward {:.3}, λ {:.4}, ε {:.3}",
                    rs.iter().map(|r| r.reward).sum::<f64>() / rs.len() as f64,
                    last.lambda,
                    last.epsilon
                );
            }
            out.extend(rs);
        }
        Ok(out)
    }
}

/// Action count the codebook will have under `cfg`.
pub fn codebook_len(cfg: &SimConfig) -> usize {
    match crate::control::full_space_size(cfg.channel.ris_elements, cfg.channel.phase_bits) {
        Some(total) if total <= cfg.agent.codebook_size as u64 => total as usize,
        _ => cfg.agent.codebook_size,
    }
}

/// A fresh simulator running one episode with `seed`.
pub fn run_episode(cfg: &SimConfig, seed: u64, cnn: Option<Arc<LosClassifier>>) -> Result<Vec<SlotMetrics>> {
    let mut c = cfg.clone();
    c.run.seed = seed;
    Simulator::new(c, cnn)?.run_episode(0)
}
