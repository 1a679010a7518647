//! Log-distance path loss, synthetic RSS and per-cell sample pools.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellIndex, Gateway, GridMap, Position};

/// Receiver sensitivity floor used when none is configured.
pub const DEFAULT_FLOOR_DBM: f64 = -100.0;

/// Shadowing standard deviation used when none is configured.
pub const DEFAULT_SIGMA_DB: f64 = 4.0;

/// Log-distance model `rss = b - 10 n log10(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossParams {
    /// Path-loss exponent.
    pub n: f64,
    /// RSS at the 1 m reference distance, dBm.
    pub b: f64,
}

impl PathLossParams {
    pub fn new(n: f64, b: f64) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidParameter(format!("path-loss exponent {n} must be > 0")));
        }
        if !b.is_finite() {
            return Err(Error::InvalidParameter(format!("reference RSS {b} must be finite")));
        }
        Ok(Self { n, b })
    }
}

impl Default for PathLossParams {
    /// n = 2, b = -50 dBm.
    fn default() -> Self {
        Self { n: 2.0, b: -50.0 }
    }
}

/// Ranging: distance in meters implied by `rss` under `p`.
pub fn rss_to_distance(rss: f64, p: &PathLossParams) -> f64 {
    10f64.powf((rss - p.b) / (-10.0 * p.n))
}

pub fn distance_to_rss(d: f64, p: &PathLossParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDistance(d));
    }
    Ok(p.b - 10.0 * p.n * d.log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Zero-mean Gaussian shadowing, dB.
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise sigma {sigma} must be >= 0")));
        }
        Ok(Self { sigma })
    }
}

/// Per-gateway propagation truth used to synthesize measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub params: Vec<PathLossParams>,
    pub noise: NoiseModel,
    /// Readings below this become missing.
    pub floor_dbm: f64,
}

impl ChannelModel {
    pub fn uniform(p: PathLossParams, gateway_count: usize, noise: NoiseModel) -> Self {
        Self { params: vec![p; gateway_count], noise, floor_dbm: DEFAULT_FLOOR_DBM }
    }

    /// Independent uniform draws of `n` and `b` per gateway.
    pub fn perturbed<R: Rng + ?Sized>(
        gateway_count: usize,
        n_range: (f64, f64),
        b_range: (f64, f64),
        noise: NoiseModel,
        rng: &mut R,
    ) -> Result<Self> {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let params = (0..gateway_count)
            .map(|_| {
                let n = draw(rng, n_range);
                let b = draw(rng, b_range);
                PathLossParams::new(n, b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, noise, floor_dbm: DEFAULT_FLOOR_DBM })
    }

    pub fn with_floor(mut self, floor_dbm: f64) -> Self {
        self.floor_dbm = floor_dbm;
        self
    }
}

/// One reading per gateway, aligned with the gateway list by index; `None`
/// marks a gateway that was not heard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssVector(Vec<Option<f64>>);

impl RssVector {
    pub fn new(values: Vec<Option<f64>>) -> Self {
        Self(values)
    }

    pub fn from_dbm(values: &[f64]) -> Self {
        Self(values.iter().map(|v| Some(*v)).collect())
    }

    /// NaN maps to missing.
    pub fn from_raw(values: &[f64]) -> Self {
        Self(values.iter().map(|v| if v.is_nan() { None } else { Some(*v) }).collect())
    }

    /// Missing entries become NaN.
    pub fn to_raw(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.unwrap_or(f64::NAN)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.0.get(index).copied().flatten()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.0
    }

    pub fn map_present(&self, f: impl Fn(f64) -> f64) -> RssVector {
        RssVector(self.0.iter().map(|v| v.map(&f)).collect())
    }
}

/// Noisy reading of every gateway from `pos`. Distances clamp at 1 m.
pub fn simulate_rss<R: Rng + ?Sized>(
    pos: Position,
    gateways: &[Gateway],
    channel: &ChannelModel,
    rng: &mut R,
) -> Result<RssVector> {
    if channel.params.len() != gateways.len() {
        return Err(Error::ShapeMismatch(format!(
            "channel has {} gateway models for {} gateways",
            channel.params.len(),
            gateways.len()
        )));
    }
    let noise = if channel.noise.sigma > 0.0 {
        Some(Normal::new(0.0, channel.noise.sigma).expect("sigma validated"))
    } else {
        None
    };
    let values = gateways
        .iter()
        .zip(&channel.params)
        .map(|(gw, p)| {
            let d = pos.distance(&gw.position).max(1.0);
            let mut rss = distance_to_rss(d, p)?;
            if let Some(noise) = &noise {
                rss += noise.sample(rng);
            }
            Ok((rss >= channel.floor_dbm).then_some(rss))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RssVector(values))
}

/// Anything that can produce an RSS reading for an agent in a given cell.
pub trait RssSource: Sync {
    fn gateway_count(&self) -> usize;

    fn draw<R: Rng + ?Sized>(&self, map: &GridMap, cell: CellIndex, rng: &mut R) -> Result<RssVector>;
}

/// Live synthesis at cell centers.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    pub gateways: &'a [Gateway],
    pub channel: &'a ChannelModel,
}

impl RssSource for Simulator<'_> {
    fn gateway_count(&self) -> usize {
        self.gateways.len()
    }

    fn draw<R: Rng + ?Sized>(&self, map: &GridMap, cell: CellIndex, rng: &mut R) -> Result<RssVector> {
        simulate_rss(map.cell_center(cell), self.gateways, self.channel, rng)
    }
}

/// Recorded (or simulated) RSS samples per cell and gateway. Missing
/// readings are stored as NaN.
#[derive(Debug, Clone)]
pub struct RssDatabase {
    map: GridMap,
    gateway_count: usize,
    /// Indexed by `flat_cell * gateway_count + gateway`.
    pools: Vec<Vec<f64>>,
}

impl RssDatabase {
    pub fn from_pools(map: GridMap, gateway_count: usize, pools: Vec<Vec<f64>>) -> Result<Self> {
        if pools.len() != map.cell_count() * gateway_count {
            return Err(Error::ShapeMismatch(format!(
                "{} pools for {} cells x {} gateways",
                pools.len(),
                map.cell_count(),
                gateway_count
            )));
        }
        Ok(Self { map, gateway_count, pools })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn pool(&self, cell: CellIndex, gateway: usize) -> &[f64] {
        &self.pools[self.map.flat_index(cell) * self.gateway_count + gateway]
    }

    /// Pools in `(cell row-major, gateway)` order.
    pub fn pools(&self) -> &[Vec<f64>] {
        &self.pools
    }

    /// Every `(cell, reading)` pair obtained by zipping the gateway pools of
    /// each cell sample-wise. Pools of unequal length truncate to the shortest.
    pub fn labeled_samples(&self) -> Vec<(RssVector, CellIndex)> {
        let mut out = Vec::new();
        for cell in self.map.cells() {
            let base = self.map.flat_index(cell) * self.gateway_count;
            let pools = &self.pools[base..base + self.gateway_count];
            let n = pools.iter().map(Vec::len).min().unwrap_or(0);
            for s in 0..n {
                let raw: Vec<f64> = pools.iter().map(|p| p[s]).collect();
                out.push((RssVector::from_raw(&raw), cell));
            }
        }
        out
    }
}

/// Bitwise on samples, so missing readings compare equal.
impl PartialEq for RssDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.map == other.map
            && self.gateway_count == other.gateway_count
            && self.pools.len() == other.pools.len()
            && self.pools.iter().zip(&other.pools).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl RssSource for RssDatabase {
    fn gateway_count(&self) -> usize {
        self.gateway_count
    }

    fn draw<R: Rng + ?Sized>(&self, map: &GridMap, cell: CellIndex, rng: &mut R) -> Result<RssVector> {
        debug_assert_eq!(map, &self.map);
        sample_rss_from_db(self, cell, rng)
    }
}

pub fn build_rss_database<R: Rng + ?Sized>(
    map: &GridMap,
    gateways: &[Gateway],
    channel: &ChannelModel,
    samples_per_pool: usize,
    rng: &mut R,
) -> Result<RssDatabase> {
    if samples_per_pool == 0 {
        return Err(Error::InvalidParameter("samples_per_pool must be >= 1".into()));
    }
    let g = gateways.len();
    let mut pools = vec![Vec::with_capacity(samples_per_pool); map.cell_count() * g];
    for cell in map.cells() {
        let center = map.cell_center(cell);
        let base = map.flat_index(cell) * g;
        for _ in 0..samples_per_pool {
            let v = simulate_rss(center, gateways, channel, rng)?;
            for (i, x) in v.to_raw().into_iter().enumerate() {
                pools[base + i].push(x);
            }
        }
    }
    RssDatabase::from_pools(map.clone(), g, pools)
}

/// One independent uniform draw from each gateway's pool at `cell`.
pub fn sample_rss_from_db<R: Rng + ?Sized>(db: &RssDatabase, cell: CellIndex, rng: &mut R) -> Result<RssVector> {
    let values = (0..db.gateway_count)
        .map(|gw| {
            let pool = db.pool(cell, gw);
            if pool.is_empty() {
                return Err(Error::NoSamplesForCell { row: cell.row(), col: cell.col(), gateway: gw });
            }
            let x = pool[rng.random_range(0..pool.len())];
            Ok((!x.is_nan()).then_some(x))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RssVector(values))
}

/// Every entry minus the datum gateway's entry.
pub fn differential_rss(v: &RssVector, datum: usize) -> Result<RssVector> {
    let reference = v.get(datum).ok_or(Error::DatumUnavailable(datum))?;
    Ok(v.map_present(|x| x - reference))
}

/// Index of the strongest reading above `beta_r`; exact ties go to the lowest
/// index (gateway lists are ordered by id).
pub fn detect_near_field(v: &RssVector, beta_r: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.values().iter().enumerate() {
        if let Some(x) = *x {
            if x > beta_r && best.is_none_or(|(_, b)| x > b) {
                best = Some((i, x));
            }
        }
    }
    best.map(|(i, _)| i)
}
