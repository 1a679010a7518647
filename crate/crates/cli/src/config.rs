//! TOML experiment configuration.

use std::path::Path;

use rssloc_core::baselines::{FingerprintConfig, MlatConfig};
use rssloc_core::dqn::DqnConfig;
use rssloc_core::env::{EnvConfig, FeatureConfig, NormBounds, RewardConfig};
use rssloc_core::grid::gateway_grid_layout;
use rssloc_core::radio::{ChannelModel, NoiseModel};
use rssloc_core::seed::SimRng;
use rssloc_core::{CellIndex, Gateway, GridMap, PathLossParams, Position};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    /// Master seed; every random stage derives from it.
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub gateways: GatewaySection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub mlat: MlatConfig,
    #[serde(default)]
    pub fingerprint: FingerprintConfig,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { rows: 8, cols: 8, cell_size: 5.0, origin_x: 0.0, origin_y: 0.0 }
    }
}

/// A regular `rows x cols` gateway lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub rows: usize,
    pub cols: usize,
    pub spacing_x: f64,
    pub spacing_y: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self { rows: 2, cols: 2, spacing_x: 20.0, spacing_y: 20.0, origin_x: 10.0, origin_y: 10.0 }
    }
}

/// True propagation. With a range set, each gateway draws its own value
/// uniformly from it instead of using the nominal one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub n: f64,
    pub b: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_range: Option<[f64; 2]>,
    pub sigma: f64,
    pub floor_dbm: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self { n: 2.0, b: -50.0, n_range: None, b_range: None, sigma: 4.0, floor_dbm: -100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectorySource {
    /// Resample the per-cell pools.
    Pools,
    /// Fresh draws from the channel model.
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub samples_per_pool: usize,
    pub train_trajectories: usize,
    pub train_steps: usize,
    pub test_trajectories: usize,
    pub test_steps: usize,
    pub source: TrajectorySource,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            samples_per_pool: 100,
            train_trajectories: 500,
            train_steps: 100,
            test_trajectories: 50,
            test_steps: 100,
            source: TrajectorySource::Pools,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Starting estimate of every greedy rollout.
    pub initial_row: usize,
    pub initial_col: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn map(&self) -> Result<GridMap, CliError> {
        let g = &self.grid;
        GridMap::new(g.rows, g.cols, g.cell_size, Position::new(g.origin_x, g.origin_y)).map_err(field("grid"))
    }

    pub fn gateway_layout(&self) -> Vec<Gateway> {
        let g = &self.gateways;
        gateway_grid_layout(g.rows, g.cols, g.spacing_x, g.spacing_y, Position::new(g.origin_x, g.origin_y))
    }

    pub fn channel(&self, rng: &mut SimRng) -> Result<ChannelModel, CliError> {
        let r = &self.radio;
        let count = self.gateways.rows * self.gateways.cols;
        let n_range = r.n_range.map_or((r.n, r.n), |[lo, hi]| (lo, hi));
        let b_range = r.b_range.map_or((r.b, r.b), |[lo, hi]| (lo, hi));
        let noise = NoiseModel::new(r.sigma).map_err(field("radio.sigma"))?;
        Ok(ChannelModel::perturbed(count, n_range, b_range, noise, rng).map_err(field("radio"))?.with_floor(r.floor_dbm))
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig { reward: self.reward, features: self.features }
    }

    pub fn initial_estimate(&self, map: &GridMap) -> Result<CellIndex, CliError> {
        map.cell(self.eval.initial_row, self.eval.initial_col).map_err(field("eval"))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "format_version: expected {CONFIG_FORMAT_VERSION}, found {}",
                self.format_version
            )));
        }
        let map = self.map()?;
        let gw = &self.gateways;
        if gw.rows == 0 || gw.cols == 0 {
            return Err(CliError::Config("gateways: rows and cols must be >= 1".into()));
        }
        let r = &self.radio;
        PathLossParams::new(r.n, r.b).map_err(field("radio"))?;
        for (name, range) in [("radio.n_range", r.n_range), ("radio.b_range", r.b_range)] {
            if let Some([lo, hi]) = range {
                if !(lo <= hi) {
                    return Err(CliError::Config(format!("{name}: lower bound {lo} exceeds upper bound {hi}")));
                }
            }
        }
        if let Some([lo, _]) = r.n_range {
            if !(lo > 0.0) {
                return Err(CliError::Config(format!("radio.n_range: exponent {lo} must be > 0")));
            }
        }
        NoiseModel::new(r.sigma).map_err(field("radio.sigma"))?;
        if !r.floor_dbm.is_finite() {
            return Err(CliError::Config("radio.floor_dbm must be finite".into()));
        }
        RewardConfig::new(self.reward.beta_r, self.reward.beta_d, self.reward.d_min).map_err(field("reward"))?;
        let norm = self.features.norm;
        NormBounds::new(norm.rss_min, norm.rss_max).map_err(field("features.norm"))?;
        if let Some(d) = self.features.differential_datum {
            if d >= gw.rows * gw.cols {
                return Err(CliError::Config(format!(
                    "features.differential_datum: gateway {d} out of range for {} gateways",
                    gw.rows * gw.cols
                )));
            }
        }
        let ds = &self.dataset;
        for (name, v) in [
            ("dataset.samples_per_pool", ds.samples_per_pool),
            ("dataset.train_trajectories", ds.train_trajectories),
            ("dataset.train_steps", ds.train_steps),
            ("dataset.test_trajectories", ds.test_trajectories),
            ("dataset.test_steps", ds.test_steps),
        ] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be >= 1")));
            }
        }
        self.dqn.validate().map_err(field("dqn"))?;
        self.mlat.validate().map_err(field("mlat"))?;
        let fp = &self.fingerprint;
        if fp.minibatch < 2 || fp.epochs == 0 || fp.hidden.contains(&0) {
            return Err(CliError::Config("fingerprint: minibatch >= 2, epochs >= 1 and positive widths required".into()));
        }
        if !(0.0..1.0).contains(&fp.holdout_fraction) {
            return Err(CliError::Config(format!("fingerprint.holdout_fraction {} outside [0, 1)", fp.holdout_fraction)));
        }
        NormBounds::new(fp.norm.rss_min, fp.norm.rss_max).map_err(field("fingerprint.norm"))?;
        self.initial_estimate(&map)?;
        Ok(())
    }
}

fn field(name: &'static str) -> impl Fn(rssloc_core::Error) -> CliError {
    move |e| CliError::Config(format!("{name}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "format_version = 1\nseed = 7\n";

    #[test]
    fn defaults_fill_omitted_sections() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.dqn, DqnConfig::default());
        assert_eq!(cfg.dqn.minibatch, 200);
        assert_eq!(cfg.dqn.target_sync, 100);
        assert_eq!(cfg.reward, RewardConfig::default());
        assert_eq!(cfg.gateway_layout().len(), 4);
    }

    #[test]
    fn round_trip_is_identity() {
        let text = "format_version = 1\nseed = 3\n[radio]\nn_range = [1.8, 2.6]\n[dqn]\nhidden = [16, 8]\nmax_steps = 40\n[features]\ndifferential_datum = 2\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn field_level_errors() {
        let err = |text: &str| ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err("seed = 1\n").contains("format_version"));
        assert!(err("format_version = 1\n").contains("seed"));
        assert!(err("format_version = 2\nseed = 1\n").contains("format_version"));
        assert!(err("format_version = 1\nseed = 1\n[dqn]\nminibtch = 3\n").contains("minibtch"));
        assert!(err("format_version = 1\nseed = 1\n[dqn]\ngamma = 1.5\n").contains("dqn"));
        assert!(err("format_version = 1\nseed = 1\n[grid]\nrows = 0\n").contains("grid"));
        assert!(err("format_version = 1\nseed = 1\n[radio]\nb_range = [-40.0, -60.0]\n").contains("radio.b_range"));
        assert!(err("format_version = 1\nseed = 1\n[features]\ndifferential_datum = 4\n").contains("differential_datum"));
        assert!(err("format_version = 1\nseed = 1\n[eval]\ninitial_row = 8\n").contains("eval"));
        let e = ExperimentConfig::from_toml("format_version = 1\nseed = 1\n[reward]\nbeta_d = -1.0\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    proptest! {
        #[test]
        fn round_trip_holds_for_any_valid_config(
            seed in any::<u64>(),
            rows in 1usize..40,
            cols in 1usize..40,
            cell in 0.5f64..20.0,
            sigma in 0.0f64..10.0,
            lr in 1e-5f64..0.5,
            hidden in proptest::collection::vec(1usize..300, 1..4),
        ) {
            let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
            cfg.seed = seed;
            cfg.grid.rows = rows;
            cfg.grid.cols = cols;
            cfg.grid.cell_size = cell;
            cfg.radio.sigma = sigma;
            cfg.dqn.learning_rate = lr;
            cfg.dqn.hidden = hidden;
            let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            prop_assert_eq!(again.hash(), cfg.hash());
            prop_assert_eq!(again, cfg);
        }
    }
}
