//! Learned transmitters: the symbol-level precoder (messages and angular
//! priors straight to a transmit vector) and the block-level baseline
//! (per-user symbol encoder followed by a beamforming matrix).
//!
//! Transmit vectors live in the graph as stacked `[re; im]` columns of
//! height `2 Nt`, one column per slot.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Activation, Graph, NodeId, ParamStore};
use crate::channel::CTensor;
use crate::config::{AngleInterval, SystemConfig};
use crate::nn::Mlp;
use crate::ModelError;

/// Known angular intervals of the target and of every user.
#[derive(Debug, Clone, PartialEq)]
pub struct PrioriInfo {
    pub theta: AngleInterval,
    pub users: Vec<AngleInterval>,
}

impl PrioriInfo {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            theta: cfg.theta_bounds,
            users: cfg.user_bounds.clone(),
        }
    }

    /// `[theta_min, theta_max, v1_min, v1_max, ...]` in degrees.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = vec![self.theta.min, self.theta.max];
        for u in &self.users {
            v.push(u.min);
            v.push(u.max);
        }
        v
    }

    /// Flattened bounds scaled into `[-1, 1]`.
    pub fn features(&self) -> Vec<f64> {
        self.flatten().into_iter().map(|a| a / 90.0).collect()
    }
}

/// Message index mapped evenly onto `[-1, 1]`.
pub fn message_feature(m: usize, m_size: usize) -> f64 {
    if m_size <= 1 {
        0.0
    } else {
        (2.0 * m as f64 - (m_size - 1) as f64) / (m_size - 1) as f64
    }
}

pub fn one_hot(m: usize, m_size: usize) -> Result<Vec<f64>, ModelError> {
    if m >= m_size {
        return Err(ModelError::Domain(format!(
            "message {m} outside alphabet of size {m_size}"
        )));
    }
    let mut v = vec![0.0; m_size];
    v[m] = 1.0;
    Ok(v)
}

fn check_messages(slots: &[&[u8]], k: usize, m_size: usize) -> Result<(), ModelError> {
    for s in slots {
        if s.len() != k {
            return Err(ModelError::Domain(format!("{} messages for {k} users", s.len())));
        }
        if let Some(&m) = s.iter().find(|&&m| m as usize >= m_size) {
            return Err(ModelError::Domain(format!(
                "message {m} outside alphabet of size {m_size}"
            )));
        }
    }
    Ok(())
}

/// Symbol-level precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SlpParams {
    pub net: Mlp,
    pub m_size: usize,
}

impl SlpParams {
    pub fn widths(cfg: &SystemConfig) -> Vec<usize> {
        let nt = cfg.nt;
        vec![2 + 3 * cfg.k, 2 * nt, 4 * nt, 8 * nt, 4 * nt, 2 * nt]
    }

    pub const ACTIVATIONS: [Activation; 5] = [
        Activation::Relu,
        Activation::Relu,
        Activation::Relu,
        Activation::Relu,
        Activation::Linear,
    ];

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &SystemConfig, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(store, "slp", &Self::widths(cfg), &Self::ACTIVATIONS, rng),
            m_size: cfg.m_size,
        }
    }
}

/// Block-level baseline: shared symbol encoder plus priori-driven beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct BlpParams {
    pub encoder: Mlp,
    pub beamformer: Mlp,
}

impl BlpParams {
    pub fn encoder_widths(cfg: &SystemConfig) -> Vec<usize> {
        let nt = cfg.nt;
        vec![cfg.m_size, nt, nt, 2 * nt, 2]
    }

    pub fn beamformer_widths(cfg: &SystemConfig) -> Vec<usize> {
        let nt = cfg.nt;
        vec![2 + 2 * cfg.k, nt, 4 * nt, 8 * nt, 2 * nt * cfg.k]
    }

    pub const ACTIVATIONS: [Activation; 4] = [
        Activation::Relu,
        Activation::Relu,
        Activation::Relu,
        Activation::Linear,
    ];

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &SystemConfig, rng: &mut R) -> Self {
        Self {
            encoder: Mlp::new(store, "blp_encoder", &Self::encoder_widths(cfg), &Self::ACTIVATIONS, rng),
            beamformer: Mlp::new(
                store,
                "blp_beamformer",
                &Self::beamformer_widths(cfg),
                &Self::ACTIVATIONS,
                rng,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransmitterParams {
    Slp(SlpParams),
    Blp(BlpParams),
}

/// Transmitter family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransmitterKind {
    Slp,
    Blp,
}

impl TransmitterKind {
    pub fn tag(self) -> &'static str {
        match self {
            TransmitterKind::Slp => "slp",
            TransmitterKind::Blp => "blp",
        }
    }
}

impl std::str::FromStr for TransmitterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slp" => Ok(Self::Slp),
            "blp" => Ok(Self::Blp),
            _ => Err(format!("unknown transmitter `{s}` (expected slp or blp)")),
        }
    }
}

impl TransmitterParams {
    pub fn new<R: Rng + ?Sized>(
        kind: TransmitterKind,
        store: &mut ParamStore,
        cfg: &SystemConfig,
        rng: &mut R,
    ) -> Self {
        match kind {
            TransmitterKind::Slp => Self::Slp(SlpParams::new(store, cfg, rng)),
            TransmitterKind::Blp => Self::Blp(BlpParams::new(store, cfg, rng)),
        }
    }

    pub fn kind(&self) -> TransmitterKind {
        match self {
            Self::Slp(_) => TransmitterKind::Slp,
            Self::Blp(_) => TransmitterKind::Blp,
        }
    }

    /// Un-normalized transmit signals for a batch of slots, `2 Nt x slots.len()`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        priori: &PrioriInfo,
        slots: &[&[u8]],
        nt: usize,
    ) -> Result<NodeId, ModelError> {
        let k = priori.users.len();
        match self {
            Self::Slp(p) => {
                check_messages(slots, k, p.m_size)?;
                let pri = priori.features();
                let rows = pri.len() + k;
                let mut input = Array2::zeros((rows, slots.len()));
                for (c, msgs) in slots.iter().enumerate() {
                    for (r, &v) in pri.iter().enumerate() {
                        input[[r, c]] = v;
                    }
                    for (u, &m) in msgs.iter().enumerate() {
                        input[[pri.len() + u, c]] = message_feature(m as usize, p.m_size);
                    }
                }
                let x = g.leaf(input);
                Ok(p.net.forward(g, store, x)?)
            }
            Self::Blp(p) => {
                let m_size = p.encoder.widths(store)[0];
                check_messages(slots, k, m_size)?;
                let cols = slots.len();
                let mut onehot = Array2::zeros((m_size, cols * k));
                for (c, msgs) in slots.iter().enumerate() {
                    for (u, &m) in msgs.iter().enumerate() {
                        onehot[[m as usize, c * k + u]] = 1.0;
                    }
                }
                let oh = g.leaf(onehot);
                let symbols = p.encoder.forward(g, store, oh)?;
                let pri = g.leaf(Array2::from_shape_vec((2 + 2 * k, 1), priori.features()).expect("2+2K"));
                let w = p.beamformer.forward(g, store, pri)?;
                blp_combine(g, w, symbols, nt, k)
            }
        }
    }
}

/// `x = W s` for every slot. `w_flat` is the `2 Nt K x 1` beamformer output
/// (row-major real block, then row-major imaginary block); `symbols` is the
/// `2 x (slots K)` encoder output with column `c K + k` holding user `k` of
/// slot `c` as `(re, im)`.
pub fn blp_combine(
    g: &mut Graph,
    w_flat: NodeId,
    symbols: NodeId,
    nt: usize,
    k: usize,
) -> Result<NodeId, ModelError> {
    let (two, ck) = g.shape(symbols);
    if two != 2 || ck % k != 0 {
        return Err(ModelError::Shape(format!(
            "encoder output {two}x{ck} does not hold 2-real symbols for {k} users"
        )));
    }
    if g.shape(w_flat) != (2 * nt * k, 1) {
        return Err(ModelError::Shape(format!(
            "beamformer output {:?}, expected ({}, 1)",
            g.shape(w_flat),
            2 * nt * k
        )));
    }
    let cols = ck / k;
    // Real form [[Wre, -Wim], [Wim, Wre]] of the Nt x K precoder.
    let mut wsrc = vec![None; 2 * nt * 2 * k];
    let off = nt * k;
    for i in 0..nt {
        for u in 0..k {
            let re = i * k + u;
            let im = off + i * k + u;
            wsrc[i * 2 * k + u] = Some((re, 1.0));
            wsrc[i * 2 * k + k + u] = Some((im, -1.0));
            wsrc[(nt + i) * 2 * k + u] = Some((im, 1.0));
            wsrc[(nt + i) * 2 * k + k + u] = Some((re, 1.0));
        }
    }
    let wreal = g.gather(w_flat, 2 * nt, 2 * k, Arc::new(wsrc))?;
    // Stacked symbols [s_re (K rows); s_im (K rows)] per slot column.
    let mut ssrc = vec![None; 2 * k * cols];
    for c in 0..cols {
        for u in 0..k {
            ssrc[u * cols + c] = Some((c * k + u, 1.0));
            ssrc[(k + u) * cols + c] = Some((ck + c * k + u, 1.0));
        }
    }
    let s = g.gather(symbols, 2 * k, cols, Arc::new(ssrc))?;
    Ok(g.matmul(wreal, s)?)
}

/// Scale `x` (columns are slots) so the mean per-slot power equals `p_lin`.
pub fn power_normalize(x: &CTensor, p_lin: f64) -> Result<CTensor, ModelError> {
    let e = x.norm_sqr();
    if !(e > 0.0) || !e.is_finite() {
        return Err(crate::autodiff::TensorError::ZeroPower.into());
    }
    Ok(x.scale((p_lin * x.dim().1 as f64 / e).sqrt()))
}

fn single_slot(
    tx: &TransmitterParams,
    store: &ParamStore,
    priori: &PrioriInfo,
    messages: &[u8],
    nt: usize,
) -> Result<CTensor, ModelError> {
    let mut g = Graph::new();
    let x = tx.forward(&mut g, store, priori, &[messages], nt)?;
    Ok(CTensor::from_stacked(g.value(x))?)
}

/// Un-normalized symbol-level precoded vector (`Nt x 1`) for one slot.
pub fn slp_forward(
    priori: &PrioriInfo,
    messages: &[u8],
    store: &ParamStore,
    params: &SlpParams,
) -> Result<CTensor, ModelError> {
    let nt = params.net.widths(store).last().copied().unwrap_or(0) / 2;
    single_slot(&TransmitterParams::Slp(params.clone()), store, priori, messages, nt)
}

/// Un-normalized block-level precoded vector (`Nt x 1`) for one slot.
pub fn blp_forward(
    priori: &PrioriInfo,
    messages: &[u8],
    store: &ParamStore,
    params: &BlpParams,
) -> Result<CTensor, ModelError> {
    let k = priori.users.len().max(1);
    let nt = params.beamformer.widths(store).last().copied().unwrap_or(0) / (2 * k);
    single_slot(&TransmitterParams::Blp(params.clone()), store, priori, messages, nt)
}
