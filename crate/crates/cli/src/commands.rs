//! The five pipeline verbs. Each writes its artifacts plus a run manifest
//! into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rssloc_core::baselines::{multilaterate, train_fingerprint as fit_fingerprint, FingerprintModel};
use rssloc_core::dqn::{localize_trajectory, train, TrainingSeeds};
use rssloc_core::env::generate_trajectories;
use rssloc_core::format::{self, Dataset, NetworkKind, WeightsFile, FORMAT_VERSION};
use rssloc_core::metrics::{cdf, compare, error_series, stats, ErrorSeries, ErrorStats};
use rssloc_core::radio::{build_rss_database, Simulator};
use rssloc_core::seed::{stage_rng, stage_seed, Stage};
use rssloc_core::{CellIndex, Error, GridMap};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TrajectorySource};
use crate::error::CliError;

pub const DATASET_FILE: &str = "dataset.bin";
pub const TRAINING_LOG_FILE: &str = "dqn_log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dqn,
    Mlat,
    Fingerprint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dqn => "dqn",
            Method::Mlat => "mlat",
            Method::Fingerprint => "fingerprint",
        }
    }

    pub fn weights_file(self) -> String {
        format!("{}.weights", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub kind: String,
    /// Binary format version, for the files that have one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
}

/// Written next to the artifacts of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    pub duration_s: f64,
    pub metrics: serde_json::Value,
}

/// Per-method evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub config_hash: String,
    #[serde(flatten)]
    pub stats: ErrorStats,
    /// Steps where the method produced no fix and the previous estimate was kept.
    pub fallbacks: usize,
    pub cdf: Vec<(f64, f64)>,
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_manifest(out: &Path, m: &RunManifest) -> Result<PathBuf, CliError> {
    let path = out.join(format!("{}.manifest.json", m.command));
    write(&path, serde_json::to_string_pretty(m).expect("manifest serializes"))?;
    Ok(path)
}

fn manifest(command: &str, cfg: &ExperimentConfig, artifacts: Vec<Artifact>, started: Instant, metrics: serde_json::Value) -> RunManifest {
    RunManifest {
        command: command.into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        artifacts,
        duration_s: started.elapsed().as_secs_f64(),
        metrics,
    }
}

fn artifact(path: &Path, kind: &str, versioned: bool) -> Artifact {
    Artifact { path: path.to_path_buf(), kind: kind.into(), format_version: versioned.then_some(FORMAT_VERSION) }
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    create_out(out)?;
    let map = cfg.map()?;
    let gateways = cfg.gateway_layout();
    let channel = cfg.channel(&mut stage_rng(cfg.seed, Stage::Channel))?;
    let ds = &cfg.dataset;
    let database =
        build_rss_database(&map, &gateways, &channel, ds.samples_per_pool, &mut stage_rng(cfg.seed, Stage::Database))?;
    let train_seed = stage_seed(cfg.seed, Stage::TrainTrajectories);
    let test_seed = stage_seed(cfg.seed, Stage::TestTrajectories);
    let (train, test) = match ds.source {
        TrajectorySource::Pools => (
            generate_trajectories(&map, &database, ds.train_trajectories, ds.train_steps, train_seed)?,
            generate_trajectories(&map, &database, ds.test_trajectories, ds.test_steps, test_seed)?,
        ),
        TrajectorySource::Live => {
            let sim = Simulator { gateways: &gateways, channel: &channel };
            (
                generate_trajectories(&map, &sim, ds.train_trajectories, ds.train_steps, train_seed)?,
                generate_trajectories(&map, &sim, ds.test_trajectories, ds.test_steps, test_seed)?,
            )
        }
    };
    let dataset = Dataset {
        map,
        gateways,
        channel,
        seed: cfg.seed,
        samples_per_pool: ds.samples_per_pool as u32,
        database,
        train,
        test,
    };
    let path = out.join(DATASET_FILE);
    write(&path, format::encode_dataset(&dataset))?;
    let metrics = serde_json::json!({
        "train_steps": dataset.train.iter().map(|t| t.len()).sum::<usize>(),
        "test_steps": dataset.test.iter().map(|t| t.len()).sum::<usize>(),
        "true_params": dataset.channel.params,
    });
    let m = manifest("gen-data", cfg, vec![artifact(&path, "dataset", true)], started, metrics);
    write_manifest(out, &m)?;
    Ok(m)
}

/// Loads a dataset and checks it against the configured geometry.
pub fn load_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<Dataset, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let d = format::decode_dataset(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let map = cfg.map()?;
    if d.map != map {
        return Err(CliError::Data(format!(
            "dataset grid {}x{} ({} m cells) does not match config grid {}x{} ({} m cells)",
            d.map.rows(),
            d.map.cols(),
            d.map.cell_size(),
            map.rows(),
            map.cols(),
            map.cell_size()
        )));
    }
    let expected = cfg.gateway_layout();
    if d.gateways != expected {
        return Err(CliError::Data(format!(
            "dataset has {} gateways, config describes {}{}",
            d.gateways.len(),
            expected.len(),
            if d.gateways.len() == expected.len() { " at different positions" } else { "" }
        )));
    }
    Ok(d)
}

fn load_weights(path: &Path) -> Result<WeightsFile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    format::decode_weights(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn train_dqn(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let d = load_dataset(cfg, data)?;
    create_out(out)?;
    let seeds = TrainingSeeds {
        init: stage_seed(cfg.seed, Stage::NetworkInit),
        exploration: stage_seed(cfg.seed, Stage::Training),
    };
    let (pair, log) = train(&d.train, &d.map, &d.gateways, &cfg.env(), &cfg.dqn, seeds)?;

    let weights = out.join(Method::Dqn.weights_file());
    write(&weights, format::encode_weights(&WeightsFile { kind: NetworkKind::QNetwork, net: pair.q_net }))?;
    let log_path = out.join(TRAINING_LOG_FILE);
    let mut lines = String::new();
    for r in &log.updates {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    write(&log_path, lines)?;

    let windows = log.loss_window_means(0.05);
    let metrics = serde_json::json!({
        "updates": log.updates.len(),
        "env_steps": log.env_steps,
        "episodes": log.episode_returns.len(),
        "loss_first_5pct": windows.map(|w| w.0),
        "loss_last_5pct": windows.map(|w| w.1),
    });
    let m = manifest(
        "train-dqn",
        cfg,
        vec![artifact(&weights, "weights", true), artifact(&log_path, "training-log", false)],
        started,
        metrics,
    );
    write_manifest(out, &m)?;
    Ok(m)
}

pub fn train_fingerprint(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let d = load_dataset(cfg, data)?;
    create_out(out)?;
    let labeled = d.database.labeled_samples();
    let (model, report) = fit_fingerprint(&labeled, &d.map, &cfg.fingerprint, &mut stage_rng(cfg.seed, Stage::Fingerprint))?;
    let weights = out.join(Method::Fingerprint.weights_file());
    let kind = NetworkKind::Classifier { rows: model.rows, cols: model.cols, norm: model.norm };
    write(&weights, format::encode_weights(&WeightsFile { kind, net: model.net }))?;
    let metrics = serde_json::to_value(report).expect("report serializes");
    let m = manifest("train-fingerprint", cfg, vec![artifact(&weights, "weights", true)], started, metrics);
    write_manifest(out, &m)?;
    Ok(m)
}

/// Per-step estimates for one method over the test set, plus the number of
/// fallback steps.
pub fn estimate_test_set(
    cfg: &ExperimentConfig,
    d: &Dataset,
    method: Method,
    weights: Option<&WeightsFile>,
) -> Result<(Vec<Vec<CellIndex>>, usize), CliError> {
    let initial = cfg.initial_estimate(&d.map)?;
    let need_weights = || weights.ok_or_else(|| CliError::Data(format!("method {} needs weights", method.name())));
    match method {
        Method::Dqn => {
            let w = need_weights()?;
            if w.kind != NetworkKind::QNetwork {
                return Err(CliError::Data("weights file holds a classifier, not a Q-network".into()));
            }
            let expected = cfg.dqn.network_dims(d.gateways.len());
            if w.net.input_dim() != expected[0] || w.net.output_dim() != expected[expected.len() - 1] {
                return Err(CliError::Data(format!(
                    "Q-network shape {:?} does not fit {} gateways (expects input {}, output {})",
                    w.net.dims(),
                    d.gateways.len(),
                    expected[0],
                    expected[expected.len() - 1]
                )));
            }
            let env = cfg.env();
            let est = d
                .test
                .par_iter()
                .map(|t| localize_trajectory(&w.net, &t.rss_seq, &d.map, &env, initial))
                .collect::<Result<Vec<_>, Error>>()?;
            Ok((est, 0))
        }
        Method::Fingerprint => {
            let w = need_weights()?;
            let NetworkKind::Classifier { rows, cols, norm } = w.kind else {
                return Err(CliError::Data("weights file holds a Q-network, not a classifier".into()));
            };
            if (rows, cols) != (d.map.rows(), d.map.cols()) || w.net.input_dim() != d.gateways.len() {
                return Err(CliError::Data(format!(
                    "classifier for a {rows}x{cols} grid with {} gateways does not fit a {}x{} grid with {}",
                    w.net.input_dim(),
                    d.map.rows(),
                    d.map.cols(),
                    d.gateways.len()
                )));
            }
            let model = FingerprintModel { net: w.net.clone(), rows, cols, norm };
            let est = d.test.par_iter().map(|t| model.predict_batch(&t.rss_seq)).collect::<Result<Vec<_>, Error>>()?;
            Ok((est, 0))
        }
        Method::Mlat => {
            let per_traj = d
                .test
                .par_iter()
                .map(|t| mlat_track(cfg, &d.map, d, &t.rss_seq, initial))
                .collect::<Result<Vec<_>, Error>>()?;
            let fallbacks = per_traj.iter().map(|(_, f)| f).sum();
            Ok((per_traj.into_iter().map(|(e, _)| e).collect(), fallbacks))
        }
    }
}

/// Snaps each fix to its cell; steps without a usable fix keep the previous
/// estimate.
fn mlat_track(
    cfg: &ExperimentConfig,
    map: &GridMap,
    d: &Dataset,
    rss_seq: &[rssloc_core::RssVector],
    initial: CellIndex,
) -> Result<(Vec<CellIndex>, usize), Error> {
    let mut estimate = initial;
    let mut fallbacks = 0;
    let mut out = Vec::with_capacity(rss_seq.len());
    for v in rss_seq {
        match multilaterate(v, &d.gateways, &cfg.mlat) {
            Ok(p) => estimate = map.nearest_cell(p),
            Err(Error::InsufficientGateways { .. } | Error::DegenerateGeometry) => fallbacks += 1,
            Err(e) => return Err(e),
        }
        out.push(estimate);
    }
    Ok((out, fallbacks))
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    d: &Dataset,
    method: Method,
    weights: Option<&WeightsFile>,
) -> Result<(ErrorSeries, MethodMetrics), CliError> {
    let (estimates, fallbacks) = estimate_test_set(cfg, d, method, weights)?;
    let mut series = ErrorSeries::default();
    for (e, t) in estimates.iter().zip(&d.test) {
        series.extend(&error_series(e, &t.true_cells, &d.map)?);
    }
    let s = stats(&series)?;
    let curve = cdf(&series)?;
    let metrics =
        MethodMetrics { method: method.name().into(), config_hash: cfg.hash(), stats: s, fallbacks, cdf: curve.0 };
    Ok((series, metrics))
}

fn cdf_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("error_m,cum_fraction\n");
    for (e, f) in points {
        writeln!(s, "{e},{f}").unwrap();
    }
    s
}

/// Two whitespace-separated columns, no header.
fn cdf_dat(points: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (e, f) in points {
        writeln!(s, "{e} {f}").unwrap();
    }
    s
}

pub fn eval(
    cfg: &ExperimentConfig,
    method: Method,
    data: &Path,
    weights: Option<&Path>,
    out: &Path,
) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let d = load_dataset(cfg, data)?;
    let w = match method {
        Method::Mlat => None,
        _ => {
            let default = out.join(method.weights_file());
            Some(load_weights(weights.unwrap_or(&default))?)
        }
    };
    create_out(out)?;
    let (_, metrics) = evaluate(cfg, &d, method, w.as_ref())?;
    let name = method.name();
    let stats_path = out.join(format!("{name}_stats.json"));
    let csv_path = out.join(format!("{name}_cdf.csv"));
    let dat_path = out.join(format!("{name}_cdf.dat"));
    write(&stats_path, serde_json::to_string_pretty(&metrics).expect("metrics serialize"))?;
    write(&csv_path, cdf_csv(&metrics.cdf))?;
    write(&dat_path, cdf_dat(&metrics.cdf))?;
    let summary = serde_json::to_value(metrics.stats).expect("stats serialize");
    let m = manifest(
        &format!("eval-{name}"),
        cfg,
        vec![artifact(&stats_path, "metrics", false), artifact(&csv_path, "cdf", false), artifact(&dat_path, "cdf-plot", false)],
        started,
        summary,
    );
    write_manifest(out, &m)?;
    Ok(m)
}

/// Files written by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub compare: Option<PathBuf>,
    pub cdf_plots: Vec<PathBuf>,
}

pub fn report(metrics: &[PathBuf], out: &Path) -> Result<ReportFiles, CliError> {
    if metrics.is_empty() {
        return Err(CliError::Config("report needs at least one metrics file".into()));
    }
    let runs = metrics
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str::<MethodMetrics>(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    create_out(out)?;

    let mut table = String::from("method,mean,rms,q80,q95,count\n");
    for r in &runs {
        let s = &r.stats;
        writeln!(table, "{},{},{},{},{},{}", r.method, s.mean, s.rms, s.q80, s.q95, s.count).unwrap();
    }
    let table_path = out.join("report_table.csv");
    write(&table_path, table)?;

    let named: Vec<(String, ErrorStats)> = runs.iter().map(|r| (r.method.clone(), r.stats)).collect();
    let compare_path = if named.len() >= 2 {
        let c = compare(&named)?;
        let mut csv = String::from("a,b,rms_reduction_pct,q95_reduction_pct\n");
        for p in &c.pairs {
            writeln!(csv, "{},{},{},{}", p.a, p.b, p.rms_reduction_pct, p.q95_reduction_pct).unwrap();
        }
        let path = out.join("report_compare.csv");
        write(&path, csv)?;
        let summary = serde_json::json!({ "ranking_by_rms": c.ranking, "pairs": c.pairs });
        write(&out.join("report.json"), serde_json::to_string_pretty(&summary).expect("report serializes"))?;
        Some(path)
    } else {
        None
    };

    let mut cdf_plots = Vec::new();
    for r in &runs {
        let path = out.join(format!("report_{}_cdf.dat", r.method));
        write(&path, cdf_dat(&r.cdf))?;
        cdf_plots.push(path);
    }
    Ok(ReportFiles { table: table_path, compare: compare_path, cdf_plots })
}
