//! Deep Q-learning over the localization MDP.
//!
//! One pass over the dataset treats each trajectory as an episode. The
//! estimate starts in a uniformly random cell; at every step the agent sees
//! `(estimate, rss_t)`, stacks the previous transition into replay, picks an
//! action epsilon-greedily among those that keep the estimate on the grid,
//! and moves. Once replay holds `replay_start` tuples, every step also runs
//! one minibatch SGD update against targets from the frozen target network,
//! which is re-synced every `target_sync` updates.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{compute_reward, featurize, EnvConfig, ExperienceTuple, StateVector, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{Action, ActionSet, CellIndex, Gateway, GridMap};
use crate::neural::{Mlp, SgdConfig};
use crate::radio::RssVector;
use crate::seed;

/// Bounded FIFO store of experience tuples.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    start_size: usize,
    buf: VecDeque<ExperienceTuple>,
}

impl ReplayMemory {
    pub fn new(capacity: usize, start_size: usize) -> Result<Self> {
        if capacity == 0 || start_size > capacity {
            return Err(Error::InvalidParameter(format!(
                "replay needs 0 < start size <= capacity (start {start_size}, capacity {capacity})"
            )));
        }
        Ok(Self { capacity, start_size, buf: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Appends, evicting the oldest tuple when full.
    pub fn push(&mut self, e: ExperienceTuple) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(e);
    }

    pub fn is_warm(&self) -> bool {
        self.buf.len() >= self.start_size
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExperienceTuple> {
        self.buf.iter()
    }

    /// `n` tuples drawn uniformly with replacement. Only the start size
    /// gates sampling; `n` may exceed the number stored.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&ExperienceTuple>> {
        let needed = self.start_size.max(1);
        if self.buf.len() < needed {
            return Err(Error::ReplayNotWarm { len: self.buf.len(), needed });
        }
        Ok((0..n).map(|_| &self.buf[rng.random_range(0..self.buf.len())]).collect())
    }
}

/// Linear decay from `initial` to `final_value` over `horizon` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub final_value: f64,
    pub horizon: u64,
}

impl EpsilonSchedule {
    pub fn new(initial: f64, final_value: f64, horizon: u64) -> Result<Self> {
        if !(0.0 <= final_value && final_value <= initial && initial <= 1.0) || horizon == 0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon schedule needs 0 <= final <= initial <= 1 and horizon >= 1 \
                 (initial {initial}, final {final_value}, horizon {horizon})"
            )));
        }
        Ok(Self { initial, final_value, horizon })
    }

    pub fn at(&self, t: u64) -> f64 {
        if t >= self.horizon {
            return self.final_value;
        }
        let frac = t as f64 / self.horizon as f64;
        self.initial - (self.initial - self.final_value) * frac
    }
}

pub fn epsilon_at(s: &EpsilonSchedule, t: u64) -> f64 {
    s.at(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub replay_capacity: usize,
    pub replay_start: usize,
    pub minibatch: usize,
    /// SGD updates between target-network syncs.
    pub target_sync: u64,
    pub gamma: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    /// Fraction of total steps over which epsilon decays.
    pub epsilon_decay_fraction: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    /// Stop after this many environment steps; `None` runs the whole dataset.
    pub max_steps: Option<u64>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            replay_capacity: 10_000,
            replay_start: 2_500,
            minibatch: 200,
            target_sync: 100,
            gamma: 0.9,
            epsilon_initial: 1.0,
            epsilon_final: 0.05,
            epsilon_decay_fraction: 0.5,
            learning_rate: 0.001,
            hidden: vec![200, 200],
            max_steps: None,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.replay_start > self.replay_capacity {
            return bad(format!("replay_start {} > replay_capacity {}", self.replay_start, self.replay_capacity));
        }
        if self.minibatch < 2 || self.minibatch > self.replay_start {
            return bad(format!("minibatch {} must be in [2, replay_start {}]", self.minibatch, self.replay_start));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.target_sync == 0 {
            return bad("target_sync must be >= 1".into());
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return bad(format!("epsilon_decay_fraction {} outside (0, 1]", self.epsilon_decay_fraction));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        SgdConfig::new(self.learning_rate)?;
        EpsilonSchedule::new(self.epsilon_initial, self.epsilon_final, 1)?;
        Ok(())
    }

    pub fn network_dims(&self, gateway_count: usize) -> Vec<usize> {
        let mut dims = vec![2 + gateway_count];
        dims.extend(&self.hidden);
        dims.push(Action::COUNT);
        dims
    }

    pub fn schedule(&self, total_steps: u64) -> Result<EpsilonSchedule> {
        let horizon = ((total_steps as f64 * self.epsilon_decay_fraction).round() as u64).max(1);
        EpsilonSchedule::new(self.epsilon_initial, self.epsilon_final, horizon)
    }
}

/// The online network and its periodically synced target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkPair {
    pub q_net: Mlp,
    pub target_net: Mlp,
    pub steps_since_sync: u64,
}

impl QNetworkPair {
    pub fn new(q_net: Mlp) -> Self {
        let target_net = q_net.clone_parameters();
        Self { q_net, target_net, steps_since_sync: 0 }
    }

    pub fn sync_target(&mut self) {
        self.target_net = self.q_net.clone_parameters();
        self.steps_since_sync = 0;
    }

    /// Counts one SGD update; every `target_sync`-th update syncs the target.
    /// Returns whether it did.
    pub fn record_update(&mut self, target_sync: u64) -> bool {
        self.steps_since_sync += 1;
        if self.steps_since_sync >= target_sync {
            self.sync_target();
            return true;
        }
        false
    }
}

/// Highest-valued member of `available`; ties go to the lower action index.
pub fn masked_argmax(q_row: &[f64], available: ActionSet) -> Result<Action> {
    available
        .iter()
        .fold(None, |best: Option<(Action, f64)>, a| match best {
            Some((_, v)) if v >= q_row[a.index()] => best,
            _ => Some((a, q_row[a.index()])),
        })
        .map(|(a, _)| a)
        .ok_or(Error::EmptyActionSet)
}

fn single_row(phi: &StateVector) -> Array2<f64> {
    Array2::from_shape_vec((1, phi.len()), phi.0.clone()).expect("row shape")
}

/// Epsilon-greedy over `available`. One uniform draw decides exploration;
/// an exploring step spends a second draw on the action.
pub fn select_action<R: Rng + ?Sized>(
    q_net: &Mlp,
    phi: &StateVector,
    available: ActionSet,
    eps: f64,
    rng: &mut R,
) -> Result<Action> {
    if available.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    if rng.random::<f64>() < eps {
        return Ok(available.nth(rng.random_range(0..available.len())).expect("non-empty"));
    }
    let q = q_net.infer(single_row(phi).view())?;
    masked_argmax(q.row(0).as_slice().expect("contiguous"), available)
}

fn stack(rows: impl ExactSizeIterator<Item = Vec<f64>>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * width);
    for r in rows {
        flat.extend(r);
    }
    Array2::from_shape_vec((n, width), flat).expect("uniform row width")
}

/// `y_j = r_j + gamma * max_{a in A(s_j')} Q_target(phi_j', a)`. No terminal
/// masking: episodes end by length, never by absorption.
pub fn compute_targets(batch: &[&ExperienceTuple], target_net: &Mlp, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("minibatch"));
    }
    let width = batch[0].phi_next.len();
    let next = stack(batch.iter().map(|e| e.phi_next.0.clone()), width);
    let q_next = target_net.infer(next.view())?;
    batch
        .iter()
        .zip(q_next.rows())
        .map(|(e, q)| {
            let best = masked_argmax(q.as_slice().expect("contiguous"), e.next_available)?;
            Ok(e.reward + gamma * q[best.index()])
        })
        .collect()
}

/// One SGD step on a sampled minibatch. Returns the loss before the update.
pub fn train_step(pair: &mut QNetworkPair, batch: &[&ExperienceTuple], gamma: f64, sgd: &SgdConfig) -> Result<f64> {
    let targets = compute_targets(batch, &pair.target_net, gamma)?;
    let width = batch[0].phi_prev.len();
    let x = stack(batch.iter().map(|e| e.phi_prev.0.clone()), width);
    let actions: Vec<usize> = batch.iter().map(|e| e.action.index()).collect();
    let (loss, grads) = pair.q_net.loss_and_grad(x.view(), &actions, &targets)?;
    if loss.is_finite() {
        pair.q_net.sgd_update(&grads, sgd)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Environment step index (0-based, global across episodes).
    pub step: u64,
    pub loss: f64,
    pub reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    /// One record per SGD update.
    pub updates: Vec<StepRecord>,
    /// Discounted return of each episode, `sum_k gamma^k r_k`.
    pub episode_returns: Vec<f64>,
    pub env_steps: u64,
}

impl TrainingLog {
    /// Mean loss over the first and last `fraction` of updates.
    pub fn loss_window_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.updates.len();
        let w = ((n as f64 * fraction).round() as usize).max(1);
        if n < 2 * w {
            return None;
        }
        let mean = |s: &[StepRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
        Some((mean(&self.updates[..w]), mean(&self.updates[n - w..])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingSeeds {
    pub init: u64,
    pub exploration: u64,
}

pub fn init_pair(cfg: &DqnConfig, gateway_count: usize, init_seed: u64) -> Result<QNetworkPair> {
    let net = Mlp::init(&cfg.network_dims(gateway_count), &mut seed::rng(init_seed))?;
    Ok(QNetworkPair::new(net))
}

pub fn train(
    dataset: &[Trajectory],
    map: &GridMap,
    gateways: &[Gateway],
    env: &EnvConfig,
    cfg: &DqnConfig,
    seeds: TrainingSeeds,
) -> Result<(QNetworkPair, TrainingLog)> {
    let pair = init_pair(cfg, gateways.len(), seeds.init)?;
    train_from(pair, dataset, map, gateways, env, cfg, seeds.exploration)
}

/// Training loop starting from an existing network pair.
pub fn train_from(
    mut pair: QNetworkPair,
    dataset: &[Trajectory],
    map: &GridMap,
    gateways: &[Gateway],
    env: &EnvConfig,
    cfg: &DqnConfig,
    exploration_seed: u64,
) -> Result<(QNetworkPair, TrainingLog)> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    cfg.validate()?;
    let sgd = SgdConfig::new(cfg.learning_rate)?;
    let dataset_steps: u64 = dataset.iter().map(|t| t.len() as u64).sum();
    let total_steps = cfg.max_steps.map_or(dataset_steps, |m| m.min(dataset_steps));
    let schedule = cfg.schedule(total_steps)?;
    let mut memory = ReplayMemory::new(cfg.replay_capacity, cfg.replay_start)?;
    let mut rng = seed::rng(exploration_seed);
    let mut log = TrainingLog::default();
    let mut t: u64 = 0;

    'episodes: for traj in dataset {
        let mut estimate = map.cell_from_flat(rng.random_range(0..map.cell_count()))?;
        let mut prev: Option<(StateVector, Action)> = None;
        let mut ret = 0.0;
        let mut discount = 1.0;
        for rss in &traj.rss_seq {
            if t >= total_steps {
                log.episode_returns.push(ret);
                break 'episodes;
            }
            let phi = featurize(map, estimate, rss, &env.features)?;
            let available = map.available_actions(estimate);
            let mut reward = 0.0;
            if let Some((phi_prev, action)) = prev.take() {
                reward = compute_reward(estimate, rss, gateways, map, &env.reward);
                ret += discount * reward;
                discount *= cfg.gamma;
                memory.push(ExperienceTuple { phi_prev, action, reward, phi_next: phi.clone(), next_available: available });
            }
            let eps = schedule.at(t);
            let action = select_action(&pair.q_net, &phi, available, eps, &mut rng)?;
            estimate = map.apply_action(estimate, action)?;
            prev = Some((phi, action));

            if memory.is_warm() {
                let batch = memory.sample_minibatch(cfg.minibatch, &mut rng)?;
                let loss = train_step(&mut pair, &batch, cfg.gamma, &sgd)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { step: t, loss });
                }
                pair.record_update(cfg.target_sync);
                log.updates.push(StepRecord { step: t, loss, reward, epsilon: eps });
            }
            t += 1;
        }
        log.episode_returns.push(ret);
    }
    log.env_steps = t;
    Ok((pair, log))
}

/// Greedy rollout: each reading moves the previous estimate by the best
/// available action. Returns one estimate per reading.
pub fn localize_trajectory(
    q_net: &Mlp,
    rss_seq: &[RssVector],
    map: &GridMap,
    env: &EnvConfig,
    initial: CellIndex,
) -> Result<Vec<CellIndex>> {
    let mut estimate = initial;
    let mut out = Vec::with_capacity(rss_seq.len());
    for rss in rss_seq {
        let phi = featurize(map, estimate, rss, &env.features)?;
        let q = q_net.infer(single_row(&phi).view())?;
        let action = masked_argmax(q.row(0).as_slice().expect("contiguous"), map.available_actions(estimate))?;
        estimate = map.apply_action(estimate, action)?;
        out.push(estimate);
    }
    Ok(out)
}
