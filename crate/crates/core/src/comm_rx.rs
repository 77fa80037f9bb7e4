//! Per-user message decoders.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::{Activation, Graph, NodeId, ParamStore};
use crate::config::SystemConfig;
use crate::nn::Mlp;
use crate::ModelError;

/// Decoder of one user: received sample in, message logits out.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub net: Mlp,
}

impl DecoderParams {
    pub fn widths(cfg: &SystemConfig) -> Vec<usize> {
        let nt = cfg.nt;
        vec![2, nt, 2 * nt, 2 * nt, 2 * nt, cfg.m_size]
    }

    pub const ACTIVATIONS: [Activation; 5] = [
        Activation::Relu,
        Activation::Relu,
        Activation::Relu,
        Activation::Relu,
        Activation::Linear,
    ];

    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &SystemConfig, user: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(store, &format!("decoder_{user}"), &Self::widths(cfg), &Self::ACTIVATIONS, rng),
        }
    }

    /// One decoder per user, independently initialized.
    pub fn for_users<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &SystemConfig, rng: &mut R) -> Vec<Self> {
        (0..cfg.k).map(|k| Self::new(store, cfg, k, rng)).collect()
    }

    pub fn m_size(&self, store: &ParamStore) -> usize {
        self.net.widths(store).last().copied().unwrap_or(0)
    }

    /// Logits `M x B` for stacked inputs `2 x B`.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, ModelError> {
        Ok(self.net.forward(g, store, x)?)
    }
}

/// Received sample as the decoder input `[re, im] / noise_std`.
pub fn preprocess_rx(y: Complex64, noise_std: f64) -> [f64; 2] {
    [y.re / noise_std, y.im / noise_std]
}

/// Message posteriors, one column per input column of `x` (`2 x B`).
pub fn decode(store: &ParamStore, dec: &DecoderParams, x: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
    if x.nrows() != 2 {
        return Err(ModelError::Shape(format!("decoder input has {} rows, expected 2", x.nrows())));
    }
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let z = dec.logits(&mut g, store, xn)?;
    let p = g.activation(Activation::SoftmaxCols, z)?;
    Ok(g.value(p).clone())
}

/// Most likely message; ties go to the lowest index.
pub fn decide(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Column-wise [`decide`].
pub fn decide_cols(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .columns()
        .into_iter()
        .map(|c| decide(&c.to_vec()))
        .collect()
}
