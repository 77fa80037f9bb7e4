//! Losses and the joint training loop over all networks.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Graph, NodeId, TensorError, PROB_CLAMP};
use crate::channel::Scenario;
use crate::config::{db_to_lin, SystemConfig, TrainPower};
use crate::model::ModelParams;
use crate::pipeline::{forward_batch, BatchLabels, BatchOutputs, PowerScaling};
use crate::radar_rx::EstimatorKind;
use crate::rng::{stream, Purpose};
use crate::transmitter::TransmitterKind;
use crate::ModelError;

pub const PATIENCE: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {parts}")]
    NonFinite { epoch: usize, batch: usize, parts: LossParts },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("optimizer: {0}")]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Input(String),
}

/// Detection, estimation and communication losses plus their combination.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub bce: f64,
    pub mse: f64,
    pub cce: f64,
}

impl fmt::Display for LossParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total {:.6} (bce {:.6}, mse {:.6}, cce {:.6})",
            self.total, self.bce, self.mse, self.cce
        )
    }
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        [self.total, self.bce, self.mse, self.cce].iter().all(|v| v.is_finite())
    }
}

/// `omega2 [(1 - omega1) l1 + omega1 l2] + (1 - omega2) l3`.
pub fn isac_loss(l1: f64, l2: f64, l3: f64, omega1: f64, omega2: f64) -> f64 {
    omega2 * ((1.0 - omega1) * l1 + omega1 * l2) + (1.0 - omega2) * l3
}

pub fn bce_loss(q: &[f64], t: &[f64]) -> f64 {
    let n = q.len().max(1) as f64;
    q.iter()
        .zip(t)
        .map(|(&q, &t)| {
            let q = q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
        })
        .sum::<f64>()
        / n
}

pub fn masked_mse_loss(theta_hat: &[f64], theta: &[f64], present: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((a, b), &m) in theta_hat.iter().zip(theta).zip(present) {
        if m {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Sum over users of the mean cross-entropy; `probs[k][b]` is the
/// distribution user `k` assigns to sample `b`.
pub fn cce_loss(probs: &[Vec<Vec<f64>>], messages: &[Vec<usize>]) -> f64 {
    probs
        .iter()
        .zip(messages)
        .map(|(p, m)| {
            let n = p.len().max(1) as f64;
            p.iter().zip(m).map(|(row, &l)| -row[l].max(PROB_CLAMP).ln()).sum::<f64>() / n
        })
        .sum()
}

/// Loss nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub bce: NodeId,
    pub mse: NodeId,
    pub cce: NodeId,
}

impl LossNodes {
    pub fn values(&self, g: &Graph) -> LossParts {
        LossParts {
            total: g.scalar(self.total),
            bce: g.scalar(self.bce),
            mse: g.scalar(self.mse),
            cce: g.scalar(self.cce),
        }
    }
}

pub fn batch_loss(
    g: &mut Graph,
    out: &BatchOutputs,
    labels: &BatchLabels,
    omega1: f64,
    omega2: f64,
) -> Result<LossNodes, TensorError> {
    let bce = g.bce(out.q, &labels.target)?;
    let mse = g.masked_mse(out.theta_hat, &labels.theta, &labels.present)?;
    let mut cce = None;
    for (z, m) in out.logits.iter().zip(&labels.messages) {
        let l = g.cross_entropy_logits(*z, m)?;
        cce = Some(match cce {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let cce = match cce {
        Some(c) => c,
        None => g.leaf(ndarray::Array2::zeros((1, 1))),
    };
    let a = g.scale(bce, omega2 * (1.0 - omega1));
    let b = g.scale(mse, omega2 * omega1);
    let c = g.scale(cce, 1.0 - omega2);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossNodes { total, bce, mse, cce })
}

/// Loss of a scenario set without updating anything.
pub fn evaluate_loss<R: Rng + ?Sized>(
    model: &ModelParams,
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    p_lin: f64,
    rng: &mut R,
) -> Result<LossParts, TrainError> {
    let mut acc = LossParts::default();
    for chunk in scenarios.chunks(cfg.batch.max(1)) {
        let mut g = Graph::new();
        let out = forward_batch(&mut g, model, cfg, chunk, PowerScaling::Batch(p_lin), rng)?;
        let labels = BatchLabels::new(chunk, cfg);
        let parts = batch_loss(&mut g, &out, &labels, cfg.omega1, cfg.omega2)?.values(&g);
        let w = chunk.len() as f64 / scenarios.len() as f64;
        acc.total += w * parts.total;
        acc.bce += w * parts.bce;
        acc.mse += w * parts.mse;
        acc.cce += w * parts.cce;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's training batches.
    pub train: LossParts,
    /// On the fixed validation set and noise seed.
    pub val: LossParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_val: LossParts,
    pub epochs: Vec<EpochLog>,
    /// Validation loss failed to improve for [`PATIENCE`] epochs at some point.
    pub stalled: bool,
}

impl TrainReport {
    pub fn final_val(&self) -> LossParts {
        self.epochs.last().map(|e| e.val).unwrap_or(self.initial_val)
    }

    /// Loss trace CSV; row 0 is the untrained validation loss, row `e` the
    /// validation loss after epoch `e`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "epoch,loss_total,loss_bce,loss_mse,loss_cce")?;
        let rows = std::iter::once((0, self.initial_val)).chain(self.epochs.iter().map(|e| (e.epoch, e.val)));
        for (e, l) in rows {
            writeln!(w, "{e},{:?},{:?},{:?},{:?}", l.total, l.bce, l.mse, l.cce)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), (PathBuf, io::Error)> {
        std::fs::File::create(path)
            .and_then(|f| self.write_csv(io::BufWriter::new(f)))
            .map_err(|e| (path.to_path_buf(), e))
    }
}

fn batch_power<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> f64 {
    match cfg.train_power {
        TrainPower::Fixed => cfg.p_lin(),
        TrainPower::Uniform { lo_dbm, hi_dbm } => db_to_lin(rng.random_range(lo_dbm..=hi_dbm)),
    }
}

/// Train every network jointly from a fresh initialization drawn from
/// `cfg.seed`.
pub fn train(
    cfg: &SystemConfig,
    tx: TransmitterKind,
    est: EstimatorKind,
    train_set: &[Scenario],
    val_set: &[Scenario],
) -> Result<(ModelParams, TrainReport), TrainError> {
    let model = ModelParams::new(cfg, tx, est, cfg.seed);
    train_from(model, cfg, train_set, val_set)
}

pub fn train_from(
    mut model: ModelParams,
    cfg: &SystemConfig,
    train_set: &[Scenario],
    val_set: &[Scenario],
) -> Result<(ModelParams, TrainReport), TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Input("training and validation sets must be non-empty".into()));
    }
    let seed = cfg.seed;
    let val_loss = |m: &ModelParams| evaluate_loss(m, cfg, val_set, cfg.p_lin(), &mut stream(seed, Purpose::ValNoise, 0));
    let initial_val = val_loss(&model)?;
    log::info!("epoch 0: val {initial_val}");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best = initial_val.total;
    let mut since_best = 0;
    let mut stalled = false;
    let batch_size = cfg.batch.max(1);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch as u64));
        let mut noise = stream(seed, Purpose::TrainNoise, epoch as u64);
        let mut power = stream(seed, Purpose::TrainPower, epoch as u64);
        let mut mean = LossParts::default();
        let batches = order.len().div_ceil(batch_size);
        let mut scs = Vec::with_capacity(batch_size);
        for (bi, idx) in order.chunks(batch_size).enumerate() {
            scs.clear();
            scs.extend(idx.iter().map(|&i| train_set[i].clone()));
            let p = batch_power(cfg, &mut power);
            let mut g = Graph::new();
            let out = forward_batch(&mut g, &model, cfg, &scs, PowerScaling::Batch(p), &mut noise)?;
            let labels = BatchLabels::new(&scs, cfg);
            let nodes = batch_loss(&mut g, &out, &labels, cfg.omega1, cfg.omega2)?;
            let parts = nodes.values(&g);
            if !parts.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    parts,
                });
            }
            g.backward(nodes.total)?;
            model.store.zero_grad();
            g.accumulate_param_grads(&mut model.store);
            model.store.adam_step(cfg.lr)?;
            let w = 1.0 / batches as f64;
            mean.total += w * parts.total;
            mean.bce += w * parts.bce;
            mean.mse += w * parts.mse;
            mean.cce += w * parts.cce;
        }
        let val = val_loss(&model)?;
        log::info!("epoch {epoch}: train {mean}; val {val}");
        if val.total < best {
            best = val.total;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= PATIENCE && !stalled {
                stalled = true;
                log::warn!("validation loss has not improved for {PATIENCE} epochs (epoch {epoch})");
            }
        }
        epochs.push(EpochLog { epoch, train: mean, val });
    }
    Ok((
        model,
        TrainReport {
            initial_val,
            epochs,
            stalled,
        },
    ))
}
