//! Radar receivers: presence detector and angle estimators over the echo of
//! one processing interval.
//!
//! Inside a batch graph the echo is a `2 Nr x (B N)` node: rows are the real
//! parts of every antenna then the imaginary parts, column `b N + n` is slot
//! `n` of sample `b`.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Activation, GatherSrc, Graph, NodeId, ParamStore};
use crate::channel::CTensor;
use crate::config::{AngleInterval, SystemConfig};
use crate::nn::{Lstm, Mlp};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub net: Mlp,
}

impl DetectorParams {
    pub fn widths(cfg: &SystemConfig) -> Vec<usize> {
        let (n, nr) = (cfg.n, cfg.nr);
        vec![2 * n * nr + 2, n * nr, n, nr, 1]
    }

    pub const ACTIVATIONS: [Activation; 4] = [
        Activation::Relu,
        Activation::Relu,
        Activation::Relu,
        Activation::Sigmoid,
    ];

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &SystemConfig, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(store, "detector", &Self::widths(cfg), &Self::ACTIVATIONS, rng),
        }
    }

    /// Presence probabilities `1 x B`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, ModelError> {
        Ok(self.net.forward(g, store, x)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Lstm,
    Mlp,
}

impl EstimatorKind {
    pub fn tag(self) -> &'static str {
        match self {
            EstimatorKind::Lstm => "lstm",
            EstimatorKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(Self::Lstm),
            "mlp" => Ok(Self::Mlp),
            _ => Err(format!("unknown estimator `{s}` (expected lstm or mlp)")),
        }
    }
}

/// Angle regressor; the output is `scale * tanh(.)` degrees.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorParams {
    Lstm { net: Lstm, scale: f64 },
    Mlp { net: Mlp, scale: f64 },
}

pub fn mlp_estimator_widths(cfg: &SystemConfig) -> Vec<usize> {
    let (n, nr) = (cfg.n, cfg.nr);
    vec![2 * n * nr, n * nr, n, nr, 1]
}

pub const MLP_ESTIMATOR_ACTIVATIONS: [Activation; 4] = [
    Activation::Relu,
    Activation::Relu,
    Activation::Relu,
    Activation::Tanh,
];

impl EstimatorParams {
    pub fn new<R: Rng + ?Sized>(
        kind: EstimatorKind,
        store: &mut ParamStore,
        cfg: &SystemConfig,
        rng: &mut R,
    ) -> Self {
        let scale = cfg.theta_scale();
        match kind {
            EstimatorKind::Lstm => Self::Lstm {
                net: Lstm::new(store, "estimator_lstm", cfg.n, cfg.hidden, rng),
                scale,
            },
            EstimatorKind::Mlp => Self::Mlp {
                net: Mlp::new(
                    store,
                    "estimator_mlp",
                    &mlp_estimator_widths(cfg),
                    &MLP_ESTIMATOR_ACTIVATIONS,
                    rng,
                ),
                scale,
            },
        }
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            Self::Lstm { .. } => EstimatorKind::Lstm,
            Self::Mlp { .. } => EstimatorKind::Mlp,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            Self::Lstm { scale, .. } | Self::Mlp { scale, .. } => *scale,
        }
    }

    /// Angle estimates `1 x B` from a batch echo node.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        echo: NodeId,
        nr: usize,
        n: usize,
    ) -> Result<NodeId, ModelError> {
        match self {
            Self::Lstm { net, scale } => {
                let steps = lstm_steps(g, echo, nr, n)?;
                let h = net.run(g, store, &steps)?;
                let z = net.head.forward(g, store, h)?;
                let t = g.activation(Activation::Tanh, z)?;
                Ok(g.scale(t, *scale))
            }
            Self::Mlp { net, scale } => {
                let x = flatten_echo(g, echo, nr, n)?;
                let t = net.forward(g, store, x)?;
                Ok(g.scale(t, *scale))
            }
        }
    }
}

fn batch_of(g: &Graph, echo: NodeId, nr: usize, n: usize) -> Result<usize, ModelError> {
    let (rows, cols) = g.shape(echo);
    if rows != 2 * nr || n == 0 || cols % n != 0 {
        return Err(ModelError::Shape(format!(
            "echo node {rows}x{cols} does not match Nr={nr}, N={n}"
        )));
    }
    Ok(cols / n)
}

/// `2 N Nr x B`: real parts of the `Nr x N` echo flattened row-major, then
/// the imaginary parts.
pub fn flatten_echo(g: &mut Graph, echo: NodeId, nr: usize, n: usize) -> Result<NodeId, ModelError> {
    let batch = batch_of(g, echo, nr, n)?;
    let cols = batch * n;
    let mut src: Vec<GatherSrc> = vec![None; 2 * nr * n * batch];
    for part in 0..2 {
        for r in 0..nr {
            for s in 0..n {
                let row = part * nr * n + r * n + s;
                for b in 0..batch {
                    src[row * batch + b] = Some(((part * nr + r) * cols + b * n + s, 1.0));
                }
            }
        }
    }
    Ok(g.gather(echo, 2 * nr * n, batch, Arc::new(src))?)
}

/// `2 Nr` sequence steps of `N x B`: step `s < Nr` is the real part seen by
/// antenna `s`, later steps the imaginary parts.
pub fn lstm_steps(g: &mut Graph, echo: NodeId, nr: usize, n: usize) -> Result<Vec<NodeId>, ModelError> {
    let batch = batch_of(g, echo, nr, n)?;
    let cols = batch * n;
    (0..2 * nr)
        .map(|step| {
            let mut src: Vec<GatherSrc> = vec![None; n * batch];
            for s in 0..n {
                for b in 0..batch {
                    src[s * batch + b] = Some((step * cols + b * n + s, 1.0));
                }
            }
            Ok(g.gather(echo, n, batch, Arc::new(src))?)
        })
        .collect()
}

/// Detector input `(2 N Nr + 2) x B`: the flattened echo plus the normalized
/// target interval.
pub fn detector_features(
    g: &mut Graph,
    echo: NodeId,
    nr: usize,
    n: usize,
    theta: AngleInterval,
) -> Result<NodeId, ModelError> {
    let flat = flatten_echo(g, echo, nr, n)?;
    let batch = g.shape(flat).1;
    let mut bounds = Array2::zeros((2, batch));
    bounds.row_mut(0).fill(theta.min / 90.0);
    bounds.row_mut(1).fill(theta.max / 90.0);
    let bounds = g.leaf(bounds);
    Ok(g.concat_rows(&[flat, bounds])?)
}

fn scaled(y: &CTensor, noise_std: f64) -> CTensor {
    y.scale(1.0 / noise_std)
}

/// Detector input of one echo `y` (`Nr x N`), divided by the noise std.
pub fn detector_input(y: &CTensor, theta: AngleInterval, noise_std: f64) -> Vec<f64> {
    let y = scaled(y, noise_std);
    let mut v: Vec<f64> = y.re.iter().copied().collect();
    v.extend(y.im.iter());
    v.push(theta.min / 90.0);
    v.push(theta.max / 90.0);
    v
}

/// Estimator sequence of one echo: row `s` of the `2 Nr x N` result is step `s`.
pub fn estimator_input(y: &CTensor, noise_std: f64) -> Array2<f64> {
    scaled(y, noise_std).to_stacked()
}

pub fn detect(q: f64, q_bar: f64) -> bool {
    q >= q_bar
}

fn echo_leaf(g: &mut Graph, y: &CTensor, noise_std: f64) -> NodeId {
    g.leaf(estimator_input(y, noise_std))
}

/// Presence probability of one echo.
pub fn detector_probability(
    store: &ParamStore,
    det: &DetectorParams,
    y: &CTensor,
    theta: AngleInterval,
    noise_std: f64,
) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let e = echo_leaf(&mut g, y, noise_std);
    let (nr, n) = y.dim();
    let x = detector_features(&mut g, e, nr, n, theta)?;
    let q = det.forward(&mut g, store, x)?;
    Ok(g.value(q)[[0, 0]])
}

/// Angle estimate in degrees of one echo.
pub fn estimate_angle(
    store: &ParamStore,
    est: &EstimatorParams,
    y: &CTensor,
    noise_std: f64,
) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let e = echo_leaf(&mut g, y, noise_std);
    let (nr, n) = y.dim();
    let t = est.forward(&mut g, store, e, nr, n)?;
    Ok(g.value(t)[[0, 0]])
}

/// One LSTM update on plain vectors.
pub fn lstm_cell(
    store: &ParamStore,
    net: &Lstm,
    x_t: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let hid = net.hidden(store);
    if h.len() != hid || c.len() != hid || x_t.len() != net.features(store) {
        return Err(ModelError::Shape(format!(
            "lstm cell got x {} / h {} / c {}, expected {} / {hid} / {hid}",
            x_t.len(),
            h.len(),
            c.len(),
            net.features(store)
        )));
    }
    let col = |v: &[f64]| Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column");
    let mut g = Graph::new();
    let bound = net.bind(&mut g, store)?;
    let (xn, hn, cn) = (g.leaf(col(x_t)), g.leaf(col(h)), g.leaf(col(c)));
    let (h1, c1) = Lstm::cell(&bound, &mut g, xn, hn, cn)?;
    Ok((g.value(h1).iter().copied().collect(), g.value(c1).iter().copied().collect()))
}
