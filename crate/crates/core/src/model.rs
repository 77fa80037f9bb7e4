//! Full set of trainable networks and their binary checkpoint format.
//!
//! A checkpoint is the magic `ISACNET1` followed by one record per network
//! until end of file: `u32` name length, UTF-8 name, `u32` layer count, and
//! per layer `u32 rows`, `u32 cols`, the row-major `f64` weight, then the
//! `rows` bias entries. Integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::comm_rx::DecoderParams;
use crate::config::SystemConfig;
use crate::nn::Dense;
use crate::radar_rx::{DetectorParams, EstimatorKind, EstimatorParams};
use crate::rng::{stream, Purpose};
use crate::transmitter::{TransmitterKind, TransmitterParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ISACNET1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a checkpoint ({msg})")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: layer {layer} is {got:?} in the file but the configuration needs {expected:?}")]
    ShapeMismatch {
        path: PathBuf,
        layer: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{path}: network `{name}` {what}")]
    Network { path: PathBuf, name: String, what: &'static str },
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub store: ParamStore,
    pub transmitter: TransmitterParams,
    pub decoders: Vec<DecoderParams>,
    pub detector: DetectorParams,
    pub estimator: EstimatorParams,
}

impl ModelParams {
    /// Fresh Glorot-initialized networks, drawn in a fixed order from the
    /// init stream of `seed`.
    pub fn new(cfg: &SystemConfig, tx: TransmitterKind, est: EstimatorKind, seed: u64) -> Self {
        let mut rng = stream(seed, Purpose::Init, 0);
        let mut store = ParamStore::new();
        let transmitter = TransmitterParams::new(tx, &mut store, cfg, &mut rng);
        let decoders = DecoderParams::for_users(&mut store, cfg, &mut rng);
        let detector = DetectorParams::new(&mut store, cfg, &mut rng);
        let estimator = EstimatorParams::new(est, &mut store, cfg, &mut rng);
        Self {
            store,
            transmitter,
            decoders,
            detector,
            estimator,
        }
    }

    /// Networks in checkpoint order with their layers.
    pub fn networks(&self) -> Vec<(String, Vec<Dense>)> {
        let mut out = Vec::new();
        match &self.transmitter {
            TransmitterParams::Slp(p) => out.push(("slp".to_string(), p.net.layers.clone())),
            TransmitterParams::Blp(p) => {
                out.push(("blp_encoder".to_string(), p.encoder.layers.clone()));
                out.push(("blp_beamformer".to_string(), p.beamformer.layers.clone()));
            }
        }
        for (k, d) in self.decoders.iter().enumerate() {
            out.push((format!("decoder_{k}"), d.net.layers.clone()));
        }
        out.push(("detector".to_string(), self.detector.net.layers.clone()));
        match &self.estimator {
            EstimatorParams::Lstm { net, .. } => {
                let mut layers = net.gates().to_vec();
                layers.push(net.head);
                out.push(("estimator_lstm".to_string(), layers));
            }
            EstimatorParams::Mlp { net, .. } => out.push(("estimator_mlp".to_string(), net.layers.clone())),
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = CHECKPOINT_MAGIC.to_vec();
        for (name, layers) in self.networks() {
            buf.extend((name.len() as u32).to_le_bytes());
            buf.extend(name.as_bytes());
            buf.extend((layers.len() as u32).to_le_bytes());
            for l in layers {
                let w = &self.store.get(l.weight).value;
                let b = &self.store.get(l.bias).value;
                buf.extend((w.nrows() as u32).to_le_bytes());
                buf.extend((w.ncols() as u32).to_le_bytes());
                for v in w.iter().chain(b.iter()) {
                    buf.extend(v.to_le_bytes());
                }
            }
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&self.to_bytes()).map_err(io_err)
    }

    /// Load a checkpoint for `cfg`. The transmitter and estimator families
    /// are taken from the network names in the file; every layer shape must
    /// match what `cfg` implies.
    pub fn load(path: &Path, cfg: &SystemConfig) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&bytes, cfg, path)
    }

    pub fn from_bytes(bytes: &[u8], cfg: &SystemConfig, path: &Path) -> Result<Self, CheckpointError> {
        let format = |msg: String| CheckpointError::Format {
            path: path.to_path_buf(),
            msg,
        };
        let records = parse_records(bytes).map_err(format)?;
        let tx = if records.contains_key("slp") {
            TransmitterKind::Slp
        } else {
            TransmitterKind::Blp
        };
        let est = if records.contains_key("estimator_mlp") {
            EstimatorKind::Mlp
        } else {
            EstimatorKind::Lstm
        };
        let mut model = Self::new(cfg, tx, est, 0);
        let expected = model.networks();
        for name in records.keys() {
            if !expected.iter().any(|(n, _)| n == name) {
                return Err(CheckpointError::Network {
                    path: path.to_path_buf(),
                    name: name.clone(),
                    what: "is not part of this configuration",
                });
            }
        }
        for (name, layers) in expected {
            let rec = records.get(&name).ok_or_else(|| CheckpointError::Network {
                path: path.to_path_buf(),
                name: name.clone(),
                what: "is missing",
            })?;
            if rec.len() != layers.len() {
                return Err(format(format!(
                    "network `{name}` has {} layers, expected {}",
                    rec.len(),
                    layers.len()
                )));
            }
            for (i, (layer, (w, b))) in layers.iter().zip(rec).enumerate() {
                let want = model.store.get(layer.weight).value.dim();
                if w.dim() != want {
                    return Err(CheckpointError::ShapeMismatch {
                        path: path.to_path_buf(),
                        layer: format!("{name}.{i}"),
                        expected: want,
                        got: w.dim(),
                    });
                }
                model.store.get_mut(layer.weight).value.assign(w);
                model.store.get_mut(layer.bias).value.assign(b);
            }
        }
        Ok(model)
    }
}

type Layers = Vec<(Array2<f64>, Array2<f64>)>;

fn parse_records(bytes: &[u8]) -> Result<BTreeMap<String, Layers>, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let mut out = BTreeMap::new();
    while cur.pos < bytes.len() {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| "network name is not UTF-8".to_string())?;
        let count = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let w = cur.f64s(rows * cols)?;
            let b = cur.f64s(rows)?;
            layers.push((
                Array2::from_shape_vec((rows, cols), w).expect("sized"),
                Array2::from_shape_vec((rows, 1), b).expect("sized"),
            ));
        }
        if out.insert(name.clone(), layers).is_some() {
            return Err(format!("network `{name}` appears twice"));
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("layer too large")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
