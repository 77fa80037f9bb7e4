//! Scenario sets and their binary file format.
//!
//! Layout: magic `ISACDS1`, `u64` config hash, `u64` count, then per record
//! `t: u8`, `theta: f64`, `d_r: f64`, `K x (angle: f64, d_c: f64)` and
//! `N x K` message bytes, all little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::channel::{sample_scenario, Scenario};
use crate::config::SystemConfig;
use crate::rng::{stream, Purpose};

pub const DATASET_MAGIC: &[u8; 7] = b"ISACDS1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("dataset needs at least one scenario")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config_hash: u64,
    pub scenarios: Vec<Scenario>,
}

/// `count` scenarios; scenario `i` comes from its own stream of
/// `(seed, purpose, i)` and the presence label alternates so the set is
/// exactly balanced.
pub fn generate_dataset(
    cfg: &SystemConfig,
    count: usize,
    purpose: Purpose,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if count == 0 {
        return Err(DatasetError::Empty);
    }
    let scenarios = (0..count)
        .map(|i| {
            let mut sc = sample_scenario(cfg, &mut stream(seed, purpose, i as u64));
            sc.target_present = i % 2 == 0;
            sc
        })
        .collect();
    Ok(Dataset {
        config_hash: cfg.hash(),
        scenarios,
    })
}

fn record_len(cfg: &SystemConfig) -> usize {
    1 + 16 + 16 * cfg.k + cfg.n * cfg.k
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = DATASET_MAGIC.to_vec();
        buf.extend(self.config_hash.to_le_bytes());
        buf.extend((self.scenarios.len() as u64).to_le_bytes());
        for sc in &self.scenarios {
            buf.push(u8::from(sc.target_present));
            buf.extend(sc.theta_deg.to_le_bytes());
            buf.extend(sc.d_r.to_le_bytes());
            for (a, d) in sc.user_angles_deg.iter().zip(&sc.d_c) {
                buf.extend(a.to_le_bytes());
                buf.extend(d.to_le_bytes());
            }
            buf.extend(&sc.messages);
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let io_err = |source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        };
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(io_err)
    }

    pub fn load(path: &Path, cfg: &SystemConfig) -> Result<Self, DatasetError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&bytes, cfg).map_err(|msg| DatasetError::Format {
            path: path.to_path_buf(),
            msg,
        })
    }

    /// Parse records laid out for `cfg`'s `K` and `N`.
    pub fn from_bytes(bytes: &[u8], cfg: &SystemConfig) -> Result<Self, String> {
        let head = DATASET_MAGIC.len() + 16;
        if bytes.len() < head || &bytes[..DATASET_MAGIC.len()] != DATASET_MAGIC {
            return Err("not a dataset file".into());
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let config_hash = u64_at(DATASET_MAGIC.len());
        let count = u64_at(DATASET_MAGIC.len() + 8) as usize;
        let rec = record_len(cfg);
        if Some(bytes.len()) != count.checked_mul(rec).and_then(|b| b.checked_add(head)) {
            return Err(format!(
                "{} bytes do not hold {count} records of {rec} bytes (K={}, N={})",
                bytes.len(),
                cfg.k,
                cfg.n
            ));
        }
        if config_hash != cfg.hash() {
            log::warn!("dataset was generated under a different configuration");
        }
        let f64_at = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let scenarios = (0..count)
            .map(|i| {
                let mut at = head + i * rec;
                let target_present = match bytes[at] {
                    0 => false,
                    1 => true,
                    t => return Err(format!("record {i}: presence byte {t}")),
                };
                at += 1;
                let theta_deg = f64_at(at);
                let d_r = f64_at(at + 8);
                at += 16;
                let mut user_angles_deg = Vec::with_capacity(cfg.k);
                let mut d_c = Vec::with_capacity(cfg.k);
                for _ in 0..cfg.k {
                    user_angles_deg.push(f64_at(at));
                    d_c.push(f64_at(at + 8));
                    at += 16;
                }
                let messages = bytes[at..at + cfg.n * cfg.k].to_vec();
                if let Some(m) = messages.iter().find(|&&m| m as usize >= cfg.m_size) {
                    return Err(format!("record {i}: message {m} outside alphabet of size {}", cfg.m_size));
                }
                Ok(Scenario {
                    target_present,
                    theta_deg,
                    d_r,
                    user_angles_deg,
                    d_c,
                    messages,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { config_hash, scenarios })
    }
}
