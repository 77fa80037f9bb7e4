//! Batched end-to-end forward pass: transmitter, power constraint, both
//! channels with fresh noise, and every receiver, all inside one graph.
//!
//! Received signals enter the networks divided by their noise standard
//! deviation, so noise is drawn with unit variance and the channel matrices
//! carry the `1/sigma` factor.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId};
use crate::channel::{comm_row, radar_matrix, CTensor, Scenario};
use crate::config::SystemConfig;
use crate::model::ModelParams;
use crate::radar_rx::detector_features;
use crate::transmitter::PrioriInfo;
use crate::ModelError;

/// How raw transmit signals are brought to the power budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerScaling {
    /// Normalize so the batch mean per-slot power equals this (linear mW).
    Batch(f64),
    /// Multiply by a scale fixed in advance.
    Fixed(f64),
}

/// Node handles of one batch forward pass.
#[derive(Debug, Clone)]
pub struct BatchOutputs {
    /// `2 Nt x (B N)` transmitted signals.
    pub x: NodeId,
    /// `2 Nr x (B N)` noise-normalized echo.
    pub echo: NodeId,
    /// `1 x B` presence probabilities.
    pub q: NodeId,
    /// `1 x B` angle estimates in degrees.
    pub theta_hat: NodeId,
    /// Per user, `M x (B N)` message logits.
    pub logits: Vec<NodeId>,
}

/// Targets matching [`BatchOutputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLabels {
    pub target: Vec<f64>,
    pub theta: Vec<f64>,
    pub present: Vec<bool>,
    /// Per user, the message of every `(sample, slot)` column.
    pub messages: Vec<Vec<usize>>,
}

impl BatchLabels {
    pub fn new(scenarios: &[Scenario], cfg: &SystemConfig) -> Self {
        let messages = (0..cfg.k)
            .map(|k| {
                scenarios
                    .iter()
                    .flat_map(|sc| (0..cfg.n).map(move |n| sc.message(n, k)))
                    .collect()
            })
            .collect();
        Self {
            target: scenarios.iter().map(|s| f64::from(u8::from(s.target_present))).collect(),
            theta: scenarios.iter().map(|s| s.theta_deg).collect(),
            present: scenarios.iter().map(|s| s.target_present).collect(),
            messages,
        }
    }
}

fn unit_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let s = 0.5f64.sqrt();
    Array2::from_shape_fn((rows, cols), |_| s * rng.sample::<f64, _>(StandardNormal))
}

/// Raw (un-normalized) transmit signals of a batch, `2 Nt x (B N)`.
pub fn transmit_raw(
    g: &mut Graph,
    model: &ModelParams,
    cfg: &SystemConfig,
    scenarios: &[Scenario],
) -> Result<NodeId, ModelError> {
    let slots: Vec<&[u8]> = scenarios
        .iter()
        .flat_map(|sc| (0..cfg.n).map(move |n| sc.slot_messages(n)))
        .collect();
    let priori = PrioriInfo::from_config(cfg);
    model.transmitter.forward(g, &model.store, &priori, &slots, cfg.nt)
}

pub fn forward_batch<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &ModelParams,
    cfg: &SystemConfig,
    scenarios: &[Scenario],
    power: PowerScaling,
    rng: &mut R,
) -> Result<BatchOutputs, ModelError> {
    let (n, k) = (cfg.n, cfg.k);
    let batch = scenarios.len();
    let cols = batch * n;
    let raw = transmit_raw(g, model, cfg, scenarios)?;
    let x = match power {
        PowerScaling::Batch(p) => g.power_normalize(raw, p)?,
        PowerScaling::Fixed(s) => g.scale(raw, s),
    };
    let group: Arc<Vec<usize>> = Arc::new((0..cols).map(|c| c / n).collect());

    let inv_r = 1.0 / cfg.sigma_r2_lin().sqrt();
    let radar_mats = scenarios
        .iter()
        .map(|sc| Ok(radar_matrix(sc, cfg)?.real_rep() * inv_r))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let hx = g.column_map(x, Arc::new(radar_mats), group.clone())?;
    let zr = g.leaf(unit_noise(2 * cfg.nr, cols, rng));
    let echo = g.add(hx, zr)?;

    let inv_c = 1.0 / cfg.sigma_c2_lin().sqrt();
    let comm_mats = scenarios
        .iter()
        .map(|sc| {
            let mut rows = CTensor::zeros(k, cfg.nt);
            for u in 0..k {
                let h = comm_row(sc, u, cfg)?;
                rows.re.row_mut(u).assign(&h.re.row(0));
                rows.im.row_mut(u).assign(&h.im.row(0));
            }
            Ok(rows.real_rep() * inv_c)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let hc = g.column_map(x, Arc::new(comm_mats), group)?;
    let zc = g.leaf(unit_noise(2 * k, cols, rng));
    let yc = g.add(hc, zc)?;

    let det_in = detector_features(g, echo, cfg.nr, n, cfg.theta_bounds)?;
    let q = model.detector.forward(g, &model.store, det_in)?;
    let theta_hat = model.estimator.forward(g, &model.store, echo, cfg.nr, n)?;

    let mut logits = Vec::with_capacity(k);
    for (u, dec) in model.decoders.iter().enumerate() {
        let re = g.slice_rows(yc, u, 1)?;
        let im = g.slice_rows(yc, k + u, 1)?;
        let y = g.concat_rows(&[re, im])?;
        logits.push(dec.logits(g, &model.store, y)?);
    }
    Ok(BatchOutputs {
        x,
        echo,
        q,
        theta_hat,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_scenario;
    use crate::radar_rx::EstimatorKind;
    use crate::rng::{stream, Purpose};
    use crate::transmitter::TransmitterKind;

    fn setup() -> (SystemConfig, ModelParams, Vec<Scenario>) {
        let mut cfg = SystemConfig::desk();
        cfg.hidden = 8;
        cfg.sigma_r2_dbm = 0.0;
        cfg.sigma_c2_dbm = 0.0;
        let model = ModelParams::new(&cfg, TransmitterKind::Slp, EstimatorKind::Lstm, 1);
        let mut rng = stream(1, Purpose::TrainData, 0);
        let mut scs: Vec<Scenario> = (0..3).map(|_| sample_scenario(&cfg, &mut rng)).collect();
        scs[0].target_present = true;
        scs[1].target_present = false;
        (cfg, model, scs)
    }

    #[test]
    fn batch_power_and_shapes() {
        let (cfg, model, scs) = setup();
        let mut g = Graph::new();
        let out = forward_batch(&mut g, &model, &cfg, &scs, PowerScaling::Batch(cfg.p_lin()), &mut stream(0, Purpose::TrainNoise, 0)).unwrap();
        let x = g.value(out.x);
        assert_eq!(x.dim(), (2 * cfg.nt, 3 * cfg.n));
        let mean_pow = x.iter().map(|v| v * v).sum::<f64>() / x.ncols() as f64;
        assert!((mean_pow - cfg.p_lin()).abs() < 1e-9 * cfg.p_lin());
        assert_eq!(g.shape(out.q), (1, 3));
        assert_eq!(g.shape(out.theta_hat), (1, 3));
        assert_eq!(out.logits.len(), cfg.k);
        assert_eq!(g.shape(out.logits[0]), (cfg.m_size, 3 * cfg.n));
    }

    #[test]
    fn echo_matches_channel_module() {
        let (cfg, model, scs) = setup();
        let noise_rng = stream(5, Purpose::TrainNoise, 0);
        let mut g = Graph::new();
        let out = forward_batch(&mut g, &model, &cfg, &scs, PowerScaling::Fixed(1.0), &mut noise_rng.clone()).unwrap();
        let noise = unit_noise(2 * cfg.nr, 3 * cfg.n, &mut noise_rng.clone());
        let x = CTensor::from_stacked(g.value(out.x)).unwrap();
        let echo = CTensor::from_stacked(&(g.value(out.echo) - &noise)).unwrap();
        for (b, sc) in scs.iter().enumerate() {
            let cols = ndarray::s![.., b * cfg.n..(b + 1) * cfg.n];
            let block = CTensor::new(x.re.slice(cols).to_owned(), x.im.slice(cols).to_owned()).unwrap();
            let y = radar_matrix(sc, &cfg).unwrap().matmul(&block).unwrap();
            for r in 0..cfg.nr {
                for s in 0..cfg.n {
                    let got = echo.get(r, b * cfg.n + s);
                    assert!((got - y.get(r, s)).norm() < 1e-9 * (1.0 + y.get(r, s).norm()));
                }
            }
            if !sc.target_present {
                assert_eq!(y.norm_sqr(), 0.0);
            } else {
                assert!(y.norm_sqr() > 0.0);
            }
        }
    }

    #[test]
    fn labels_follow_column_order() {
        let (cfg, _, scs) = setup();
        let l = BatchLabels::new(&scs, &cfg);
        assert_eq!(l.target[..2], [1.0, 0.0]);
        assert_eq!(l.messages[1][cfg.n + 2], scs[1].message(2, 1));
        assert_eq!(l.messages[0].len(), 3 * cfg.n);
    }
}
