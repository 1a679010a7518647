//! Comparison methods: path-loss multilateration (unsupervised) and a
//! fingerprint classifier trained on labeled RSS (supervised).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::NormBounds;
use crate::error::{Error, Result};
use crate::grid::{CellIndex, Gateway, GridMap, Position};
use crate::neural::{softmax, Mlp, SgdConfig};
use crate::radio::{rss_to_distance, PathLossParams, RssVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlatConfig {
    /// Ranging model assumed for every gateway.
    pub params: PathLossParams,
    pub min_gateways: usize,
    pub rss_floor: f64,
    pub max_iterations: usize,
    /// Step-length convergence threshold, m.
    pub tol: f64,
    /// Initial Levenberg factor.
    pub damping: f64,
}

impl Default for MlatConfig {
    fn default() -> Self {
        Self {
            params: PathLossParams::default(),
            min_gateways: 3,
            rss_floor: -100.0,
            max_iterations: 50,
            tol: 1e-6,
            damping: 1e-3,
        }
    }
}

impl MlatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_gateways < 3 {
            return Err(Error::InvalidParameter(format!("min_gateways {} < 3", self.min_gateways)));
        }
        if !(self.tol > 0.0) || !(self.damping > 0.0) {
            return Err(Error::InvalidParameter("tol and damping must be positive".into()));
        }
        PathLossParams::new(self.params.n, self.params.b)?;
        Ok(())
    }
}

/// Solver output with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlatFix {
    pub position: Position,
    pub initial_guess: Position,
    pub iterations: usize,
    /// Sum of squared range residuals at the solution.
    pub cost: f64,
    pub initial_cost: f64,
    /// Norm of `J^T r` at the solution.
    pub gradient_norm: f64,
}

const DAMPING_LIMIT: f64 = 1e12;

struct Ranges {
    anchors: Vec<Position>,
    distances: Vec<f64>,
}

impl Ranges {
    fn cost(&self, p: Position) -> f64 {
        self.anchors.iter().zip(&self.distances).map(|(a, d)| (p.distance(a) - d).powi(2)).sum()
    }

    /// Anchors on one line leave the side of the line unresolved.
    fn collinear(&self) -> bool {
        let n = self.anchors.len() as f64;
        let mx = self.anchors.iter().map(|a| a.x).sum::<f64>() / n;
        let my = self.anchors.iter().map(|a| a.y).sum::<f64>() / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for a in &self.anchors {
            sxx += (a.x - mx).powi(2);
            sxy += (a.x - mx) * (a.y - my);
            syy += (a.y - my).powi(2);
        }
        let det = sxx * syy - sxy * sxy;
        det <= 1e-12 * (sxx + syy).powi(2)
    }

    /// `(J^T J, J^T r)` as `([a11, a12, a22], [g1, g2])`.
    fn normal_equations(&self, p: Position) -> ([f64; 3], [f64; 2]) {
        let mut a = [0.0; 3];
        let mut g = [0.0; 2];
        for (anchor, d) in self.anchors.iter().zip(&self.distances) {
            let dist = p.distance(anchor);
            let r = dist - d;
            let (ux, uy) = if dist > 1e-12 { ((p.x - anchor.x) / dist, (p.y - anchor.y) / dist) } else { (0.0, 0.0) };
            a[0] += ux * ux;
            a[1] += ux * uy;
            a[2] += uy * uy;
            g[0] += ux * r;
            g[1] += uy * r;
        }
        (a, g)
    }
}

/// Range-based fix: RSS to distance under the assumed model, then damped
/// Gauss-Newton on `sum (|p - p_i| - d_i)^2` from the power-weighted centroid.
pub fn solve_multilateration(v: &RssVector, gateways: &[Gateway], cfg: &MlatConfig) -> Result<MlatFix> {
    cfg.validate()?;
    if v.len() != gateways.len() {
        return Err(Error::ShapeMismatch(format!("{} readings for {} gateways", v.len(), gateways.len())));
    }
    let mut ranges = Ranges { anchors: Vec::new(), distances: Vec::new() };
    let (mut wx, mut wy, mut wsum) = (0.0, 0.0, 0.0);
    for (gw, rss) in gateways.iter().zip(v.values()) {
        let Some(rss) = *rss else { continue };
        if !(rss >= cfg.rss_floor) {
            continue;
        }
        ranges.anchors.push(gw.position);
        ranges.distances.push(rss_to_distance(rss, &cfg.params));
        let w = 10f64.powf(rss / 10.0);
        wx += w * gw.position.x;
        wy += w * gw.position.y;
        wsum += w;
    }
    if ranges.anchors.len() < cfg.min_gateways {
        return Err(Error::InsufficientGateways { usable: ranges.anchors.len(), needed: cfg.min_gateways });
    }
    if ranges.collinear() {
        return Err(Error::DegenerateGeometry);
    }

    let initial_guess = Position::new(wx / wsum, wy / wsum);
    let initial_cost = ranges.cost(initial_guess);
    let mut p = initial_guess;
    let mut cost = initial_cost;
    let mut lambda = cfg.damping;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let (a, g) = ranges.normal_equations(p);
        let step = loop {
            let (m11, m12, m22) = (a[0] + lambda, a[1], a[2] + lambda);
            let det = m11 * m22 - m12 * m12;
            let dx = -(m22 * g[0] - m12 * g[1]) / det;
            let dy = -(m11 * g[1] - m12 * g[0]) / det;
            if det > 0.0 && dx.is_finite() && dy.is_finite() {
                let candidate = Position::new(p.x + dx, p.y + dy);
                let c = ranges.cost(candidate);
                if c < cost {
                    lambda = (lambda / 10.0).max(1e-12);
                    break Some((candidate, c, dx.hypot(dy)));
                }
            }
            lambda *= 10.0;
            if lambda > DAMPING_LIMIT {
                break None;
            }
        };
        match step {
            Some((candidate, c, len)) => {
                p = candidate;
                cost = c;
                if len < cfg.tol {
                    break;
                }
            }
            None => {
                // No descent direction left: fine at a stationary point,
                // otherwise the geometry cannot pin the position down.
                let (_, g) = ranges.normal_equations(p);
                if g[0].hypot(g[1]) > 1e-6 * (1.0 + cost.sqrt()) {
                    return Err(Error::DegenerateGeometry);
                }
                break;
            }
        }
    }
    let (_, g) = ranges.normal_equations(p);
    Ok(MlatFix { position: p, initial_guess, iterations, cost, initial_cost, gradient_norm: g[0].hypot(g[1]) })
}

pub fn multilaterate(v: &RssVector, gateways: &[Gateway], cfg: &MlatConfig) -> Result<Position> {
    solve_multilateration(v, gateways, cfg).map(|f| f.position)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintConfig {
    pub learning_rate: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    /// Fraction of labeled samples held out for the accuracy report.
    pub holdout_fraction: f64,
    pub norm: NormBounds,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            minibatch: 200,
            epochs: 50,
            hidden: vec![200, 200],
            holdout_fraction: 0.1,
            norm: NormBounds::default(),
        }
    }
}

/// Classifier from normalized RSS to a grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintModel {
    pub net: Mlp,
    pub rows: usize,
    pub cols: usize,
    pub norm: NormBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerprintReport {
    pub train_accuracy: f64,
    /// `None` when nothing was held out.
    pub holdout_accuracy: Option<f64>,
    pub final_loss: f64,
    pub updates: usize,
}

impl FingerprintModel {
    pub fn gateway_count(&self) -> usize {
        self.net.input_dim()
    }

    fn features(&self, v: &RssVector) -> Vec<f64> {
        v.values().iter().map(|x| self.norm.normalize(*x)).collect()
    }

    fn feature_matrix<'a>(&self, vs: impl ExactSizeIterator<Item = &'a RssVector>) -> Result<Array2<f64>> {
        let n = vs.len();
        let g = self.gateway_count();
        let mut flat = Vec::with_capacity(n * g);
        for v in vs {
            if v.len() != g {
                return Err(Error::ShapeMismatch(format!("{} readings for a {g}-gateway model", v.len())));
            }
            flat.extend(self.features(v));
        }
        Ok(Array2::from_shape_vec((n, g), flat).expect("checked widths"))
    }

    /// Class probabilities per cell, row-major.
    pub fn probabilities(&self, v: &RssVector) -> Result<Vec<f64>> {
        let x = self.feature_matrix(std::iter::once(v))?;
        Ok(softmax(&self.net.infer(x.view())?).row(0).to_vec())
    }

    pub fn predict_batch(&self, vs: &[RssVector]) -> Result<Vec<CellIndex>> {
        let map = GridMap::new(self.rows, self.cols, 1.0, Position::new(0.0, 0.0))?;
        let scores = self.net.infer(self.feature_matrix(vs.iter())?.view())?;
        scores.rows().into_iter().map(|row| map.cell_from_flat(argmax(row.as_slice().expect("contiguous")))).collect()
    }
}

/// First index of the maximum.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict_fingerprint(model: &FingerprintModel, v: &RssVector) -> Result<CellIndex> {
    Ok(model.predict_batch(std::slice::from_ref(v))?[0])
}

/// Minibatch SGD on softmax cross-entropy over cell ids.
pub fn train_fingerprint<R: Rng + ?Sized>(
    labeled: &[(RssVector, CellIndex)],
    map: &GridMap,
    cfg: &FingerprintConfig,
    rng: &mut R,
) -> Result<(FingerprintModel, FingerprintReport)> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled fingerprint data"));
    }
    if cfg.minibatch < 2 {
        return Err(Error::InvalidParameter("fingerprint minibatch must be >= 2".into()));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::InvalidParameter(format!("holdout fraction {} outside [0, 1)", cfg.holdout_fraction)));
    }
    let sgd = SgdConfig::new(cfg.learning_rate)?;
    let g = labeled[0].0.len();
    for (v, c) in labeled {
        if !map.contains(*c) {
            return Err(Error::CellOutOfBounds { row: c.row(), col: c.col(), rows: map.rows(), cols: map.cols() });
        }
        if v.len() != g {
            return Err(Error::ShapeMismatch("labeled readings differ in length".into()));
        }
    }

    let mut dims = vec![g];
    dims.extend(&cfg.hidden);
    dims.push(map.cell_count());
    let net = Mlp::init(&dims, rng)?;
    let mut model = FingerprintModel { net, rows: map.rows(), cols: map.cols(), norm: cfg.norm };

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(rng);
    let holdout_len = (labeled.len() as f64 * cfg.holdout_fraction).floor() as usize;
    let (holdout, train) = order.split_at(holdout_len);
    let mut train = train.to_vec();
    if train.len() < 2 {
        return Err(Error::Empty("fingerprint training split"));
    }

    let x_all = model.feature_matrix(labeled.iter().map(|(v, _)| v))?;
    let labels: Vec<usize> = labeled.iter().map(|(_, c)| map.flat_index(*c)).collect();
    let mut final_loss = f64::NAN;
    let mut updates = 0;
    for _ in 0..cfg.epochs {
        train.shuffle(rng);
        for chunk in train.chunks(cfg.minibatch) {
            if chunk.len() < 2 {
                continue;
            }
            let x = x_all.select(ndarray::Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|i| labels[*i]).collect();
            let (loss, grads) = model.net.classification_loss_and_grad(x.view(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step: updates as u64, loss });
            }
            model.net.sgd_update(&grads, &sgd)?;
            final_loss = loss;
            updates += 1;
        }
    }

    let accuracy = |idx: &[usize]| -> Result<f64> {
        let x = x_all.select(ndarray::Axis(0), idx);
        let scores = model.net.infer(x.view())?;
        let hits = scores
            .rows()
            .into_iter()
            .zip(idx)
            .filter(|(row, i)| argmax(row.as_slice().expect("contiguous")) == labels[**i])
            .count();
        Ok(hits as f64 / idx.len() as f64)
    };
    let report = FingerprintReport {
        train_accuracy: accuracy(&train)?,
        holdout_accuracy: if holdout.is_empty() { None } else { Some(accuracy(holdout)?) },
        final_loss,
        updates,
    };
    Ok((model, report))
}
