//! Finite-difference machinery shared by the gradient tests and the
//! acceptance run. Every check returns its worst relative error.

#![allow(dead_code)]

use std::sync::Arc;

use isac_core::autodiff::{Activation, Graph, NodeId, ParamStore};
use isac_core::channel::sample_scenario;
use isac_core::nn::Lstm;
use isac_core::pipeline::{forward_batch, BatchLabels, PowerScaling};
use isac_core::rng::{stream, Purpose};
use isac_core::training::batch_loss;
use isac_core::{EstimatorKind, ModelParams, ParamId, SystemConfig, TransmitterKind};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;
pub const OP_TOL: f64 = 1e-5;
pub const E2E_TOL: f64 = 1e-4;

pub fn rand_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn rel_err(a: &Array2<f64>, f: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.mapv(|v| v * v).sum().sqrt();
    let diff = norm(&(a - f));
    let scale = norm(a).max(norm(f));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Reduce any output to a scalar with fixed random weights so every output
/// entry contributes to the checked gradient.
pub fn reduce(g: &mut Graph, out: NodeId, seed: u64) -> NodeId {
    let (r, c) = g.shape(out);
    if (r, c) == (1, 1) {
        return out;
    }
    let w = g.leaf(rand_mat(r, c, &mut stream(seed, Purpose::Calibration, 99)));
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

/// Worst relative error of d(reduce(f(inputs)))/d(inputs) over all inputs.
pub fn check_op(inputs: Vec<Array2<f64>>, f: impl Fn(&mut Graph, &[NodeId]) -> NodeId) -> f64 {
    let eval = |vals: &[Array2<f64>]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| g.leaf(v.clone())).collect();
        let out = f(&mut g, &ids);
        let l = reduce(&mut g, out, 7);
        (g, ids, l)
    };
    let (mut g, ids, l) = eval(&inputs);
    g.backward(l).unwrap();
    let mut worst = 0.0f64;
    for (i, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).clone();
        let mut numeric = Array2::zeros(inputs[i].dim());
        let cols = inputs[i].ncols();
        for idx in 0..inputs[i].len() {
            let (r, c) = (idx / cols, idx % cols);
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[i][[r, c]] += H;
            minus[i][[r, c]] -= H;
            let (gp, _, lp) = eval(&plus);
            let (gm, _, lm) = eval(&minus);
            numeric[[r, c]] = (gp.scalar(lp) - gm.scalar(lm)) / (2.0 * H);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

fn rng() -> ChaCha8Rng {
    stream(42, Purpose::Init, 0)
}

/// Every differentiable graph operation with its worst relative error.
pub fn op_errors() -> Vec<(&'static str, f64)> {
    let mut r = rng();
    let mut out = Vec::new();
    out.push((
        "linear",
        check_op(vec![rand_mat(3, 4, &mut r), rand_mat(3, 1, &mut r), rand_mat(4, 5, &mut r)], |g, x| {
            g.linear(x[0], x[1], x[2]).unwrap()
        }),
    ));
    out.push((
        "matmul",
        check_op(vec![rand_mat(3, 4, &mut r), rand_mat(4, 2, &mut r)], |g, x| g.matmul(x[0], x[1]).unwrap()),
    ));
    for act in [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::SoftmaxCols, Activation::Linear] {
        let mut x = rand_mat(4, 3, &mut r) * 3.0;
        // keep relu inputs off the kink
        x.mapv_inplace(|v| if v.abs() < 1e-3 { 0.5 } else { v });
        out.push((act.name(), check_op(vec![x], move |g, i| g.activation(act, i[0]).unwrap())));
    }
    let (a, b) = (rand_mat(3, 2, &mut r), rand_mat(3, 2, &mut r));
    out.push(("add", check_op(vec![a.clone(), b.clone()], |g, x| g.add(x[0], x[1]).unwrap())));
    out.push(("sub", check_op(vec![a.clone(), b.clone()], |g, x| g.sub(x[0], x[1]).unwrap())));
    out.push(("mul", check_op(vec![a.clone(), b.clone()], |g, x| g.mul(x[0], x[1]).unwrap())));
    out.push(("scale", check_op(vec![a.clone()], |g, x| g.scale(x[0], -2.5))));
    out.push((
        "concat_rows",
        check_op(vec![a.clone(), rand_mat(1, 2, &mut r)], |g, x| g.concat_rows(&[x[0], x[1]]).unwrap()),
    ));
    out.push(("slice_rows", check_op(vec![rand_mat(5, 2, &mut r)], |g, x| g.slice_rows(x[0], 1, 3).unwrap())));
    let src = Arc::new(vec![Some((0, 1.0)), None, Some((5, -1.0)), Some((0, 2.0)), Some((3, 0.5)), None]);
    out.push(("gather", check_op(vec![a.clone()], move |g, x| g.gather(x[0], 2, 3, src.clone()).unwrap())));
    let mats = Arc::new(vec![rand_mat(4, 3, &mut r), rand_mat(4, 3, &mut r)]);
    let group = Arc::new(vec![1, 0]);
    out.push((
        "column_map",
        check_op(vec![a.clone()], move |g, x| g.column_map(x[0], mats.clone(), group.clone()).unwrap()),
    ));
    out.push((
        "power_normalize",
        check_op(vec![a.clone()], |g, x| g.power_normalize(x[0], 10.0).unwrap()),
    ));
    out.push(("sum", check_op(vec![a.clone()], |g, x| g.sum(x[0]))));
    out.push(("mean", check_op(vec![b], |g, x| g.mean(x[0]))));

    let q = rand_mat(1, 6, &mut r).mapv(|v| 0.5 + 0.4 * v);
    let t = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    out.push(("bce", check_op(vec![q], move |g, x| g.bce(x[0], &t).unwrap())));
    let pred = rand_mat(1, 5, &mut r) * 10.0;
    let target = [1.0, -3.0, 4.0, 0.5, 2.0];
    let mask = [true, false, true, true, false];
    out.push((
        "masked_mse",
        check_op(vec![pred], move |g, x| g.masked_mse(x[0], &target, &mask).unwrap()),
    ));
    let labels = [0usize, 3, 2, 3];
    let logits = rand_mat(4, 4, &mut r) * 2.0;
    out.push((
        "cross_entropy_logits",
        check_op(vec![logits.clone()], move |g, x| g.cross_entropy_logits(x[0], &labels).unwrap()),
    ));
    out.push((
        "cross_entropy",
        check_op(vec![logits], move |g, x| {
            let p = g.activation(Activation::SoftmaxCols, x[0]).unwrap();
            g.cross_entropy(p, &labels).unwrap()
        }),
    ));
    out
}

/// Worst relative error over chosen parameter entries of a store.
pub fn check_params(
    store: &ParamStore,
    picks: &[(ParamId, usize)],
    loss: impl Fn(&ParamStore, &mut Graph) -> NodeId,
) -> f64 {
    let mut s = store.clone();
    let mut g = Graph::new();
    let l = loss(&s, &mut g);
    g.backward(l).unwrap();
    s.zero_grad();
    g.accumulate_param_grads(&mut s);
    let mut worst = 0.0f64;
    for &(id, idx) in picks {
        let p = s.get(id);
        let (r, c) = (idx / p.value.ncols(), idx % p.value.ncols());
        let analytic = p.grad[[r, c]];
        let eval = |delta: f64| {
            let mut t = store.clone();
            t.get_mut(id).value[[r, c]] += delta;
            let mut g = Graph::new();
            let l = loss(&t, &mut g);
            g.scalar(l)
        };
        let numeric = (eval(H) - eval(-H)) / (2.0 * H);
        let scale = analytic.abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

fn all_entries(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .flat_map(|id| (0..store.get(id).value.len()).map(move |i| (id, i)))
        .collect()
}

/// LSTM cell (weights and state inputs) and an unrolled sequence with head.
pub fn lstm_errors() -> Vec<(&'static str, f64)> {
    let mut r = rng();
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "cell", 3, 4, &mut r);
    for id in store.ids().collect::<Vec<_>>() {
        let v = rand_mat(store.get(id).value.nrows(), store.get(id).value.ncols(), &mut r);
        store.get_mut(id).value.assign(&v);
    }
    let x = rand_mat(3, 2, &mut r);
    let h0 = rand_mat(4, 2, &mut r);
    let c0 = rand_mat(4, 2, &mut r);
    let picks = all_entries(&store);
    let cell = check_params(&store, &picks, |s, g| {
        let bound = lstm.bind(g, s).unwrap();
        let (xi, hi, ci) = (g.leaf(x.clone()), g.leaf(h0.clone()), g.leaf(c0.clone()));
        let (h1, c1) = Lstm::cell(&bound, g, xi, hi, ci).unwrap();
        let both = g.concat_rows(&[h1, c1]).unwrap();
        reduce(g, both, 3)
    });
    let (lstm2, s2) = (lstm.clone(), store.clone());
    let state = check_op(vec![x.clone(), h0, c0], move |g, i| {
        let bound = lstm2.bind(g, &s2).unwrap();
        let (h1, c1) = Lstm::cell(&bound, g, i[0], i[1], i[2]).unwrap();
        g.concat_rows(&[h1, c1]).unwrap()
    });
    let steps: Vec<Array2<f64>> = (0..5).map(|_| rand_mat(3, 2, &mut r)).collect();
    let seq = check_params(&store, &picks, |s, g| {
        let ids: Vec<NodeId> = steps.iter().map(|v| g.leaf(v.clone())).collect();
        let h = lstm.run(g, s, &ids).unwrap();
        let z = lstm.head.forward(g, s, h).unwrap();
        reduce(g, z, 5)
    });
    vec![("lstm cell weights", cell), ("lstm cell state", state), ("lstm sequence", seq)]
}

/// Gradient of the full ISAC loss with respect to one weight of every
/// network, on a batch of 4 with frozen noise.
pub fn e2e_error(tx: TransmitterKind, est: EstimatorKind) -> f64 {
    let mut cfg = SystemConfig::desk();
    cfg.nt = 4;
    cfg.nr = 4;
    cfg.n = 3;
    cfg.hidden = 5;
    cfg.omega1 = 0.3;
    cfg.omega2 = 0.5;
    // moderate noise keeps every loss term away from saturation
    cfg.sigma_r2_dbm = -82.0;
    cfg.sigma_c2_dbm = -95.0;
    let mut model = ModelParams::new(&cfg, tx, est, 3);
    // zero biases put whole dead columns exactly on a relu kink
    let mut jitter = stream(3, Purpose::Init, 1);
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.get(id).name.ends_with(".bias") {
            model.store.get_mut(id).value.mapv_inplace(|_| jitter.random_range(-0.1..0.1));
        }
    }
    let mut data_rng = stream(3, Purpose::TrainData, 0);
    let mut scs: Vec<_> = (0..4).map(|_| sample_scenario(&cfg, &mut data_rng)).collect();
    for (i, s) in scs.iter_mut().enumerate() {
        s.target_present = i % 2 == 0;
    }
    let labels = BatchLabels::new(&scs, &cfg);
    let noise = stream(3, Purpose::TrainNoise, 0);
    let loss = |store: &ParamStore, g: &mut Graph| {
        let mut m = model.clone();
        m.store = store.clone();
        let out = forward_batch(g, &m, &cfg, &scs, PowerScaling::Batch(cfg.p_lin()), &mut noise.clone()).unwrap();
        batch_loss(g, &out, &labels, cfg.omega1, cfg.omega2).unwrap().total
    };
    let mut s = model.store.clone();
    let mut g = Graph::new();
    let l = loss(&s, &mut g);
    g.backward(l).unwrap();
    s.zero_grad();
    g.accumulate_param_grads(&mut s);
    let mut pick_rng = stream(3, Purpose::Shuffle, 0);
    let mut picks = Vec::new();
    for (name, layers) in model.networks() {
        let cands: Vec<_> = layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .flat_map(|id| (0..s.get(id).value.len()).map(move |i| (id, i)))
            .filter(|&(id, i)| s.get(id).grad.iter().nth(i).unwrap().abs() > 1e-6)
            .collect();
        assert!(!cands.is_empty(), "{name}: no weight receives gradient");
        picks.push(cands[pick_rng.random_range(0..cands.len())]);
    }
    check_params(&model.store, &picks, loss)
}
