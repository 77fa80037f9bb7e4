//! Dense layers, MLP stacks and the LSTM cell on top of the graph engine.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Activation, Graph, NodeId, ParamId, ParamStore, TensorError};

/// Glorot-uniform `rows x cols` grid.
pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

/// Fully connected layer `W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), glorot(fan_out, fan_in, rng));
        let bias = store.insert(format!("{name}.bias"), Array2::zeros((fan_out, 1)));
        Self { weight, bias }
    }

    pub fn from_values(store: &mut ParamStore, name: &str, w: Array2<f64>, b: Array2<f64>) -> Self {
        let weight = store.insert(format!("{name}.weight"), w);
        let bias = store.insert(format!("{name}.bias"), b);
        Self { weight, bias }
    }

    /// `(fan_out, fan_in)`.
    pub fn dims(&self, store: &ParamStore) -> (usize, usize) {
        store.get(self.weight).value.dim()
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> (NodeId, NodeId) {
        (g.param(store, self.weight), g.param(store, self.bias))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, TensorError> {
        let (w, b) = self.bind(g, store);
        g.linear(w, b, x)
    }
}

/// Stack of dense layers, each followed by its activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first; `acts` has one entry
    /// per layer.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        acts: &[Activation],
        rng: &mut R,
    ) -> Self {
        assert_eq!(widths.len(), acts.len() + 1, "one activation per layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activations: acts.to_vec(),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, TensorError> {
        let mut h = x;
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(g, store, h)?;
            if act != Activation::Linear {
                h = g.activation(act, h)?;
            }
        }
        Ok(h)
    }

    /// Layer boundary widths, input first.
    pub fn widths(&self, store: &ParamStore) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        if let Some(first) = self.layers.first() {
            w.push(first.dims(store).1);
        }
        w.extend(self.layers.iter().map(|l| l.dims(store).0));
        w
    }
}

/// LSTM cell with four gate layers over `[x_t; h]` plus a scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input_gate: Dense,
    pub forget_gate: Dense,
    pub output_gate: Dense,
    pub candidate: Dense,
    pub head: Dense,
}

/// Gate weights bound into one graph as fused `4H x (F+H)` / `4H x 1` nodes,
/// ordered input, forget, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    w: NodeId,
    b: NodeId,
    hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        features: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut gate = |g: &str, rng: &mut R| Dense::new(store, &format!("{name}.{g}"), features + hidden, hidden, rng);
        let input_gate = gate("input", rng);
        let forget_gate = gate("forget", rng);
        let output_gate = gate("output", rng);
        let candidate = gate("candidate", rng);
        let head = Dense::new(store, &format!("{name}.head"), hidden, 1, rng);
        Self {
            input_gate,
            forget_gate,
            output_gate,
            candidate,
            head,
        }
    }

    pub fn gates(&self) -> [Dense; 4] {
        [self.input_gate, self.forget_gate, self.output_gate, self.candidate]
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        self.input_gate.dims(store).0
    }

    pub fn features(&self, store: &ParamStore) -> usize {
        self.input_gate.dims(store).1 - self.hidden(store)
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> Result<BoundLstm, TensorError> {
        let mut ws = Vec::with_capacity(4);
        let mut bs = Vec::with_capacity(4);
        for d in self.gates() {
            let (w, b) = d.bind(g, store);
            ws.push(w);
            bs.push(b);
        }
        Ok(BoundLstm {
            w: g.concat_rows(&ws)?,
            b: g.concat_rows(&bs)?,
            hidden: self.hidden(store),
        })
    }

    /// One gated update; `x_t` is `F x B`, `h` and `c` are `H x B`.
    pub fn cell(
        bound: &BoundLstm,
        g: &mut Graph,
        x_t: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let hid = bound.hidden;
        let xh = g.concat_rows(&[x_t, h])?;
        let z = g.linear(bound.w, bound.b, xh)?;
        let zi = g.slice_rows(z, 0, hid)?;
        let zf = g.slice_rows(z, hid, hid)?;
        let zo = g.slice_rows(z, 2 * hid, hid)?;
        let zg = g.slice_rows(z, 3 * hid, hid)?;
        let i = g.activation(Activation::Sigmoid, zi)?;
        let f = g.activation(Activation::Sigmoid, zf)?;
        let o = g.activation(Activation::Sigmoid, zo)?;
        let cand = g.activation(Activation::Tanh, zg)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.activation(Activation::Tanh, c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Run the cell over `steps` from a zero state and return the final hidden state.
    pub fn run(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        steps: &[NodeId],
    ) -> Result<NodeId, TensorError> {
        let bound = self.bind(g, store)?;
        let batch = steps.first().map(|&s| g.shape(s).1).unwrap_or(1);
        let mut h = g.leaf(Array2::zeros((bound.hidden, batch)));
        let mut c = g.leaf(Array2::zeros((bound.hidden, batch)));
        for &x in steps {
            (h, c) = Self::cell(&bound, g, x, h, c)?;
        }
        Ok(h)
    }
}
