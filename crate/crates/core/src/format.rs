//! Little-endian binary files for datasets and trained networks. The byte
//! layouts are described in `docs/formats.md`.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::env::{NormBounds, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{CellIndex, Gateway, GridMap, Position};
use crate::neural::{BatchNormLayer, DenseLayer, HiddenBlock, Mlp};
use crate::radio::{ChannelModel, NoiseModel, PathLossParams, RssDatabase, RssVector};

pub const DATASET_MAGIC: [u8; 8] = *b"RSLDATA\0";
pub const WEIGHTS_MAGIC: [u8; 8] = *b"RSLWGHT\0";
pub const FORMAT_VERSION: u32 = 1;

const ACTIVATION_RELU: u8 = 0;

/// Everything `gen-data` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub map: GridMap,
    pub gateways: Vec<Gateway>,
    pub channel: ChannelModel,
    pub seed: u64,
    pub samples_per_pool: u32,
    pub database: RssDatabase,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("count fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Guards allocations against corrupt counts.
    fn count(&mut self, bytes_each: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(bytes_each) > self.buf.len() - self.pos {
            return Err(Error::Format(format!("count {n} exceeds remaining input")));
        }
        Ok(n)
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::Format("bad magic".into()));
        }
        let version = self.u32()? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_trajectories(w: &mut Writer, set: &[Trajectory]) {
    w.u32(set.len());
    for t in set {
        w.u64(t.seed);
        w.u32(t.len());
        for c in &t.true_cells {
            w.u32(c.row());
            w.u32(c.col());
        }
        for v in &t.rss_seq {
            w.f64s(&v.to_raw());
        }
    }
}

fn read_trajectories(r: &mut Reader, map: &GridMap, gateways: usize) -> Result<Vec<Trajectory>> {
    let count = r.count(12)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let seed = r.u64()?;
        let len = r.count(8 + 8 * gateways)?;
        let true_cells = (0..len)
            .map(|_| {
                let (row, col) = (r.u32()?, r.u32()?);
                map.cell(row, col)
            })
            .collect::<Result<Vec<CellIndex>>>()?;
        let rss_seq = (0..len).map(|_| Ok(RssVector::from_raw(&r.f64_vec(gateways)?))).collect::<Result<_>>()?;
        out.push(Trajectory { true_cells, rss_seq, seed });
    }
    Ok(out)
}

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(&DATASET_MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u32(d.map.rows());
    w.u32(d.map.cols());
    w.f64(d.map.cell_size());
    w.f64(d.map.origin().x);
    w.f64(d.map.origin().y);
    w.u32(d.gateways.len());
    for g in &d.gateways {
        w.u32(g.id as usize);
        w.f64(g.position.x);
        w.f64(g.position.y);
    }
    for p in &d.channel.params {
        w.f64(p.n);
        w.f64(p.b);
    }
    w.f64(d.channel.noise.sigma);
    w.f64(d.channel.floor_dbm);
    w.u64(d.seed);
    w.u32(d.samples_per_pool as usize);
    for pool in d.database.pools() {
        w.u32(pool.len());
        w.f64s(pool);
    }
    write_trajectories(&mut w, &d.train);
    write_trajectories(&mut w, &d.test);
    w.0
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(&DATASET_MAGIC)?;
    let (rows, cols) = (r.u32()?, r.u32()?);
    let cell_size = r.f64()?;
    let origin = Position::new(r.f64()?, r.f64()?);
    let map = GridMap::new(rows, cols, cell_size, origin)?;
    let g = r.count(20)?;
    let gateways = (0..g)
        .map(|_| Ok(Gateway { id: r.u32()? as u32, position: Position::new(r.f64()?, r.f64()?) }))
        .collect::<Result<Vec<_>>>()?;
    let params = (0..g).map(|_| PathLossParams::new(r.f64()?, r.f64()?)).collect::<Result<Vec<_>>>()?;
    let noise = NoiseModel::new(r.f64()?)?;
    let channel = ChannelModel { params, noise, floor_dbm: r.f64()? };
    let seed = r.u64()?;
    let samples_per_pool = r.u32()? as u32;
    let mut pools = Vec::with_capacity(map.cell_count() * g);
    for _ in 0..map.cell_count() * g {
        let n = r.count(8)?;
        pools.push(r.f64_vec(n)?);
    }
    let database = RssDatabase::from_pools(map.clone(), g, pools)?;
    let train = read_trajectories(&mut r, &map, g)?;
    let test = read_trajectories(&mut r, &map, g)?;
    r.finish()?;
    Ok(Dataset { map, gateways, channel, seed, samples_per_pool, database, train, test })
}

pub fn save_dataset(path: &Path, d: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// What a stored network computes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetworkKind {
    /// Action values in [`crate::grid::Action::ALL`] order.
    QNetwork,
    /// Cell scores in row-major order, with the feature normalization used
    /// in training.
    Classifier { rows: usize, cols: usize, norm: NormBounds },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub kind: NetworkKind,
    pub net: Mlp,
}

pub fn encode_weights(f: &WeightsFile) -> Vec<u8> {
    let net = &f.net;
    let mut w = Writer::default();
    w.0.extend_from_slice(&WEIGHTS_MAGIC);
    w.u32(FORMAT_VERSION as usize);
    w.u8(match f.kind {
        NetworkKind::QNetwork => 0,
        NetworkKind::Classifier { .. } => 1,
    });
    w.u8(ACTIVATION_RELU);
    let dims = net.dims();
    w.u32(dims.len());
    for d in &dims {
        w.u32(*d);
    }
    let (momentum, epsilon) = net
        .hidden
        .first()
        .map(|b| (b.norm.momentum, b.norm.epsilon))
        .unwrap_or((crate::neural::DEFAULT_BN_MOMENTUM, crate::neural::DEFAULT_BN_EPSILON));
    w.f64(momentum);
    w.f64(epsilon);
    if let NetworkKind::Classifier { rows, cols, norm } = f.kind {
        w.u32(rows);
        w.u32(cols);
        w.f64(norm.rss_min);
        w.f64(norm.rss_max);
    }
    for b in &net.hidden {
        w.f64s(&b.dense.weights);
        w.f64s(&b.dense.biases);
        w.f64s(&b.norm.gamma);
        w.f64s(&b.norm.beta);
        w.f64s(&b.norm.running_mean);
        w.f64s(&b.norm.running_var);
    }
    w.f64s(&net.output.weights);
    w.f64s(&net.output.biases);
    w.0
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightsFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(&WEIGHTS_MAGIC)?;
    let kind_tag = r.u8()?;
    if r.u8()? != ACTIVATION_RELU {
        return Err(Error::Format("unknown activation".into()));
    }
    let n_dims = r.count(4)?;
    let dims = (0..n_dims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Format(format!("invalid layer dims {dims:?}")));
    }
    let momentum = r.f64()?;
    let epsilon = r.f64()?;
    let kind = match kind_tag {
        0 => NetworkKind::QNetwork,
        1 => {
            let (rows, cols) = (r.u32()?, r.u32()?);
            let norm = NormBounds::new(r.f64()?, r.f64()?)?;
            if rows * cols != dims[dims.len() - 1] {
                return Err(Error::Format("classifier grid does not match output width".into()));
            }
            NetworkKind::Classifier { rows, cols, norm }
        }
        t => return Err(Error::Format(format!("unknown network kind {t}"))),
    };
    let matrix = |r: &mut Reader, out: usize, inp: usize| -> Result<Array2<f64>> {
        if out.saturating_mul(inp).saturating_mul(8) > r.buf.len() - r.pos {
            return Err(Error::Format("layer exceeds remaining input".into()));
        }
        Ok(Array2::from_shape_vec((out, inp), r.f64_vec(out * inp)?).expect("sized"))
    };
    let vector = |r: &mut Reader, n: usize| -> Result<Array1<f64>> { Ok(Array1::from(r.f64_vec(n)?)) };
    let mut hidden = Vec::new();
    for pair in dims[..dims.len() - 1].windows(2) {
        let (inp, out) = (pair[0], pair[1]);
        let dense = DenseLayer { weights: matrix(&mut r, out, inp)?, biases: vector(&mut r, out)? };
        let norm = BatchNormLayer {
            gamma: vector(&mut r, out)?,
            beta: vector(&mut r, out)?,
            running_mean: vector(&mut r, out)?,
            running_var: vector(&mut r, out)?,
            momentum,
            epsilon,
        };
        hidden.push(HiddenBlock { dense, norm });
    }
    let (inp, out) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let output = DenseLayer { weights: matrix(&mut r, out, inp)?, biases: vector(&mut r, out)? };
    r.finish()?;
    Ok(WeightsFile { kind, net: Mlp { hidden, output } })
}

pub fn save_weights(path: &Path, f: &WeightsFile) -> Result<()> {
    std::fs::write(path, encode_weights(f))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<WeightsFile> {
    decode_weights(&std::fs::read(path)?)
}
