//! The localization MDP: landmark reward, state features and trajectories.
//!
//! A state is the agent's estimated cell plus the current RSS reading. The
//! estimate moves deterministically by the chosen action; the true agent
//! position is never observed. Reward comes only from gateways whose RSS
//! crosses the near-field threshold: the estimate earns `1/d` if it is within
//! `beta_d` of that gateway and `-d` otherwise.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Action, ActionSet, CellIndex, Gateway, GridMap};
use crate::radio::{detect_near_field, differential_rss, RssSource, RssVector};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Near-field RSS threshold, dBm.
    pub beta_r: f64,
    /// Acceptance distance, m.
    pub beta_d: f64,
    /// Lower clamp on the estimate-to-gateway distance, m.
    pub d_min: f64,
}

impl RewardConfig {
    pub fn new(beta_r: f64, beta_d: f64, d_min: f64) -> Result<Self> {
        if !(beta_r.is_finite() && d_min > 0.0 && beta_d > d_min && beta_d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reward needs beta_d > d_min > 0 (beta_r {beta_r}, beta_d {beta_d}, d_min {d_min})"
            )));
        }
        Ok(Self { beta_r, beta_d, d_min })
    }
}

impl Default for RewardConfig {
    /// -64 dBm is roughly 5 m (one cell) under n = 2, b = -50.
    fn default() -> Self {
        Self { beta_r: -64.0, beta_d: 10.0, d_min: 1.0 }
    }
}

pub fn compute_reward(
    estimate: CellIndex,
    rss: &RssVector,
    gateways: &[Gateway],
    map: &GridMap,
    cfg: &RewardConfig,
) -> f64 {
    let Some(i) = detect_near_field(rss, cfg.beta_r) else {
        return 0.0;
    };
    let d = map.cell_center(estimate).distance(&gateways[i].position).max(cfg.d_min);
    if d <= cfg.beta_d {
        1.0 / d
    } else {
        -d
    }
}

/// RSS normalization range for state features, dBm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormBounds {
    pub rss_min: f64,
    pub rss_max: f64,
}

impl NormBounds {
    pub fn new(rss_min: f64, rss_max: f64) -> Result<Self> {
        if !(rss_max > rss_min) || !rss_min.is_finite() || !rss_max.is_finite() {
            return Err(Error::DegenerateNormalization { min: rss_min, max: rss_max });
        }
        Ok(Self { rss_min, rss_max })
    }

    /// Linear map onto `[0, 1]`, clipped. Missing readings map to 0.
    pub fn normalize(&self, rss: Option<f64>) -> f64 {
        match rss {
            Some(x) => ((x - self.rss_min) / (self.rss_max - self.rss_min)).clamp(0.0, 1.0),
            None => 0.0,
        }
    }
}

impl Default for NormBounds {
    fn default() -> Self {
        Self { rss_min: -100.0, rss_max: -30.0 }
    }
}

/// How RSS readings become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub norm: NormBounds,
    /// Gateway index whose reading is subtracted from all others; `None`
    /// feeds raw RSS.
    pub differential_datum: Option<usize>,
}

/// Everything the environment needs besides geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub reward: RewardConfig,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub estimate: CellIndex,
    pub rss: RssVector,
}

/// `[row_norm, col_norm, rss_norm_1, ..., rss_norm_G]`, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn state_reformulation(state: &AgentState, map: &GridMap, norm: &NormBounds) -> StateVector {
    let scale = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut v = Vec::with_capacity(2 + state.rss.len());
    v.push(scale(state.estimate.row(), map.rows()));
    v.push(scale(state.estimate.col(), map.cols()));
    v.extend(state.rss.values().iter().map(|x| norm.normalize(*x)));
    StateVector(v)
}

/// Network input for an estimate and a raw reading, applying the
/// differential transform first when configured.
pub fn featurize(map: &GridMap, estimate: CellIndex, rss: &RssVector, features: &FeatureConfig) -> Result<StateVector> {
    let rss = match features.differential_datum {
        Some(datum) => differential_rss(rss, datum)?,
        None => rss.clone(),
    };
    Ok(state_reformulation(&AgentState { estimate, rss }, map, &features.norm))
}

/// Moves the estimate and scores the new estimate against `next_rss`.
pub fn step(
    state: &AgentState,
    action: Action,
    next_rss: RssVector,
    map: &GridMap,
    gateways: &[Gateway],
    cfg: &RewardConfig,
) -> Result<(AgentState, f64)> {
    let estimate = map.apply_action(state.estimate, action)?;
    let reward = compute_reward(estimate, &next_rss, gateways, map, cfg);
    Ok((AgentState { estimate, rss: next_rss }, reward))
}

/// `(phi(s_{t-1}), a_{t-1}, r_t, phi(s_t))`, plus the actions available from
/// the estimate in `s_t` so the bootstrap max can respect the grid edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceTuple {
    pub phi_prev: StateVector,
    pub action: Action,
    pub reward: f64,
    pub phi_next: StateVector,
    pub next_available: ActionSet,
}

/// A random walk of the true agent and the RSS it observed at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub true_cells: Vec<CellIndex>,
    pub rss_seq: Vec<RssVector>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.true_cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_cells.is_empty()
    }
}

/// Uniform start cell, then uniformly chosen available actions; one reading
/// from `source` per visited cell.
pub fn generate_trajectory<S: RssSource>(map: &GridMap, source: &S, length: usize, seed: u64) -> Result<Trajectory> {
    if length == 0 {
        return Err(Error::InvalidParameter("trajectory length must be >= 1".into()));
    }
    let mut rng = seed::rng(seed);
    let mut cell = map.cell_from_flat(rng.random_range(0..map.cell_count()))?;
    let mut true_cells = Vec::with_capacity(length);
    let mut rss_seq = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            let available = map.available_actions(cell);
            let action = available.nth(rng.random_range(0..available.len())).expect("stay is always available");
            cell = map.apply_action(cell, action)?;
        }
        true_cells.push(cell);
        rss_seq.push(source.draw(map, cell, &mut rng)?);
    }
    Ok(Trajectory { true_cells, rss_seq, seed })
}

/// `count` trajectories; trajectory `i` uses `seed::item_seed(base_seed, i)`,
/// so the result does not depend on thread scheduling.
pub fn generate_trajectories<S: RssSource>(
    map: &GridMap,
    source: &S,
    count: usize,
    length: usize,
    base_seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_trajectory(map, source, length, seed::item_seed(base_seed, i as u64)))
        .collect()
}
