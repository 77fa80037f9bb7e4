//! Metrics, power sweeps, beampatterns and their CSV forms.

use std::io::{self, BufRead, Write};

use rand::seq::IndexedRandom;
use thiserror::Error;

use crate::autodiff::Graph;
use crate::channel::{steering_vector, CTensor, Scenario};
use crate::comm_rx::decide_cols;
use crate::config::{db_to_lin, AngleInterval, SystemConfig};
use crate::model::ModelParams;
use crate::pipeline::{forward_batch, PowerScaling};
use crate::radar_rx::{detect, EstimatorKind};
use crate::rng::{stream, Purpose};
use crate::transmitter::{PrioriInfo, TransmitterKind};
use crate::ModelError;

pub const METRICS_HEADER: &str = "p_dbm,ser_avg,p_d,p_fa,rmse_deg,n_samples,mode,estimator";
pub const BEAMPATTERN_HEADER: &str = "angle_deg,power_db";
pub const DB_FLOOR: f64 = -120.0;
/// Message combinations enumerated exactly for power calibration; larger
/// alphabets are sampled.
pub const CALIBRATION_COMBOS: usize = 4096;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Input(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub p_dbm: f64,
    pub ser_avg: f64,
    pub p_d: f64,
    pub p_fa: f64,
    pub rmse_deg: f64,
    pub n_samples: usize,
    pub mode: TransmitterKind,
    pub estimator: EstimatorKind,
}

/// A metrics row plus the counts and Monte Carlo errors behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub row: MetricsRow,
    /// Samples the RMSE was taken over.
    pub rmse_count: usize,
    /// RMSE over every present-target sample, detected or not.
    pub rmse_all_present: f64,
    pub ser_std: f64,
    pub p_d_std: f64,
    pub rmse_std: f64,
}

/// Mean mismatch rate; `decisions[k][b]` is user `k`'s decision on sample `b`.
pub fn compute_ser(decisions: &[Vec<usize>], truth: &[Vec<usize>]) -> Result<f64, EvalError> {
    if decisions.len() != truth.len() || decisions.iter().zip(truth).any(|(d, t)| d.len() != t.len()) {
        return Err(EvalError::Input("decision and truth shapes differ".into()));
    }
    let total: usize = truth.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(EvalError::Input("no symbols to score".into()));
    }
    let wrong = decisions
        .iter()
        .zip(truth)
        .flat_map(|(d, t)| d.iter().zip(t))
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / total as f64)
}

/// `(P(declared | present), P(declared | absent))`.
pub fn compute_detection(t_hat: &[bool], t: &[bool]) -> Result<(f64, f64), EvalError> {
    if t_hat.len() != t.len() {
        return Err(EvalError::Input("decision and truth lengths differ".into()));
    }
    let (mut h1, mut h0, mut hits, mut alarms) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &tr) in t_hat.iter().zip(t) {
        if tr {
            h1 += 1;
            hits += usize::from(d);
        } else {
            h0 += 1;
            alarms += usize::from(d);
        }
    }
    if h1 == 0 || h0 == 0 {
        return Err(EvalError::Input("detection rates need both hypotheses present".into()));
    }
    Ok((hits as f64 / h1 as f64, alarms as f64 / h0 as f64))
}

/// Root mean squared error in degrees, `NaN` for no samples.
pub fn compute_rmse(theta_hat: &[f64], theta: &[f64]) -> f64 {
    let n = theta_hat.len().min(theta.len());
    if n == 0 {
        return f64::NAN;
    }
    (theta_hat.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64).sqrt()
}

/// Every message combination of one slot, or a sample of them when there
/// are more than [`CALIBRATION_COMBOS`].
pub fn message_combos(cfg: &SystemConfig, seed: u64) -> Vec<Vec<u8>> {
    let decode = |mut idx: usize| {
        let mut v = vec![0u8; cfg.k];
        for m in v.iter_mut() {
            *m = (idx % cfg.m_size) as u8;
            idx /= cfg.m_size;
        }
        v
    };
    match cfg.combos() {
        Some(c) if c <= CALIBRATION_COMBOS => (0..c).map(decode).collect(),
        _ => {
            use rand::Rng;
            let mut rng = stream(seed, Purpose::Calibration, 0);
            (0..CALIBRATION_COMBOS)
                .map(|_| (0..cfg.k).map(|_| rng.random_range(0..cfg.m_size) as u8).collect())
                .collect()
        }
    }
}

/// Raw transmit signals for the given slots as an `Nt x S` complex matrix.
pub fn raw_signals(model: &ModelParams, cfg: &SystemConfig, slots: &[Vec<u8>]) -> Result<CTensor, ModelError> {
    let refs: Vec<&[u8]> = slots.iter().map(Vec::as_slice).collect();
    let mut g = Graph::new();
    let x = model
        .transmitter
        .forward(&mut g, &model.store, &PrioriInfo::from_config(cfg), &refs, cfg.nt)?;
    Ok(CTensor::from_stacked(g.value(x))?)
}

/// Scale that brings the expected per-slot power over uniform messages to
/// `p_lin`.
pub fn calibrate_scale(model: &ModelParams, cfg: &SystemConfig, p_lin: f64) -> Result<f64, ModelError> {
    let combos = message_combos(cfg, cfg.seed);
    let x = raw_signals(model, cfg, &combos)?;
    let raw = x.norm_sqr() / combos.len() as f64;
    if !(raw > 0.0) || !raw.is_finite() {
        return Err(crate::autodiff::TensorError::ZeroPower.into());
    }
    Ok((p_lin / raw).sqrt())
}

/// Test-set metrics at one power; noise comes from the evaluation stream
/// keyed by `p_dbm`, so a point is identical whether computed alone or in a
/// sweep.
pub fn evaluate(
    model: &ModelParams,
    cfg: &SystemConfig,
    test: &[Scenario],
    p_dbm: f64,
    seed: u64,
) -> Result<EvalPoint, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Input("empty test set".into()));
    }
    let scale = calibrate_scale(model, cfg, db_to_lin(p_dbm))?;
    let mut rng = stream(seed, Purpose::EvalNoise, p_dbm.to_bits());
    let mut decisions: Vec<Vec<usize>> = vec![Vec::new(); cfg.k];
    let mut truth: Vec<Vec<usize>> = vec![Vec::new(); cfg.k];
    let mut t_hat = Vec::with_capacity(test.len());
    let mut t = Vec::with_capacity(test.len());
    let (mut est_det, mut true_det, mut est_all, mut true_all) = (vec![], vec![], vec![], vec![]);
    for chunk in test.chunks(cfg.batch.max(1)) {
        let mut g = Graph::new();
        let out = forward_batch(&mut g, model, cfg, chunk, PowerScaling::Fixed(scale), &mut rng)?;
        for (k, z) in out.logits.iter().enumerate() {
            decisions[k].extend(decide_cols(g.value(*z)));
            truth[k].extend(chunk.iter().flat_map(|sc| (0..cfg.n).map(move |n| sc.message(n, k))));
        }
        let q = g.value(out.q);
        let th = g.value(out.theta_hat);
        for (b, sc) in chunk.iter().enumerate() {
            let declared = detect(q[[0, b]], cfg.q_bar);
            t_hat.push(declared);
            t.push(sc.target_present);
            if sc.target_present {
                est_all.push(th[[0, b]]);
                true_all.push(sc.theta_deg);
                if declared {
                    est_det.push(th[[0, b]]);
                    true_det.push(sc.theta_deg);
                }
            }
        }
    }
    let ser = compute_ser(&decisions, &truth)?;
    let (p_d, p_fa) = compute_detection(&t_hat, &t)?;
    let rmse_all_present = compute_rmse(&est_all, &true_all);
    let (rmse, rmse_count) = if est_det.is_empty() {
        (rmse_all_present, est_all.len())
    } else {
        (compute_rmse(&est_det, &true_det), est_det.len())
    };
    let n_sym = (test.len() * cfg.n * cfg.k) as f64;
    let h1 = true_all.len().max(1) as f64;
    Ok(EvalPoint {
        row: MetricsRow {
            p_dbm,
            ser_avg: ser,
            p_d,
            p_fa,
            rmse_deg: rmse,
            n_samples: test.len(),
            mode: model.transmitter.kind(),
            estimator: model.estimator.kind(),
        },
        rmse_count,
        rmse_all_present,
        ser_std: (ser * (1.0 - ser) / n_sym).sqrt(),
        p_d_std: (p_d * (1.0 - p_d) / h1).sqrt(),
        rmse_std: rmse / (2.0 * rmse_count.max(1) as f64).sqrt(),
    })
}

pub fn sweep_power(
    model: &ModelParams,
    cfg: &SystemConfig,
    test: &[Scenario],
    powers_dbm: &[f64],
    seed: u64,
) -> Result<Vec<EvalPoint>, EvalError> {
    powers_dbm.iter().map(|&p| evaluate(model, cfg, test, p, seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Decreasing,
    Increasing,
}

/// Whether `values` follow `trend`, tolerating at most one inversion no
/// larger than the Monte Carlo std of the two points involved.
pub fn follows_trend(values: &[f64], stds: &[f64], trend: Trend) -> bool {
    let mut inversions = 0;
    for i in 1..values.len() {
        let step = match trend {
            Trend::Decreasing => values[i] - values[i - 1],
            Trend::Increasing => values[i - 1] - values[i],
        };
        if !(step <= 0.0) {
            let tol = stds[i].hypot(stds[i - 1]);
            if !(step <= tol) {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

pub fn to_db(power: f64) -> f64 {
    if power > 0.0 {
        (10.0 * power.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Mean `|a_t(phi)^T x|^2` over the columns of `x`, one value per grid angle.
pub fn pattern_of(x: &CTensor, grid_deg: &[f64]) -> Result<Vec<f64>, ModelError> {
    let (nt, cols) = x.dim();
    grid_deg
        .iter()
        .map(|&phi| {
            let y = steering_vector(phi, nt).t().matmul(x)?;
            Ok(y.norm_sqr() / cols.max(1) as f64)
        })
        .collect()
}

/// Transmit beampattern of the trained transmitter at the configured power,
/// averaged over message combinations. Returns linear power per angle.
pub fn beampattern(model: &ModelParams, cfg: &SystemConfig, grid_deg: &[f64]) -> Result<Vec<f64>, EvalError> {
    if grid_deg.is_empty() {
        return Err(EvalError::Input("empty angle grid".into()));
    }
    let scale = calibrate_scale(model, cfg, cfg.p_lin())?;
    let x = raw_signals(model, cfg, &message_combos(cfg, cfg.seed))?.scale(scale);
    Ok(pattern_of(&x, grid_deg)?)
}

/// `-90..=90` in one-degree steps.
pub fn default_grid() -> Vec<f64> {
    (-90..=90).map(f64::from).collect()
}

/// Mean linear power inside the union of `regions` and outside it, in dB.
pub fn region_contrast(grid_deg: &[f64], power: &[f64], regions: &[AngleInterval]) -> (f64, f64) {
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (&a, &p) in grid_deg.iter().zip(power) {
        if regions.iter().any(|r| r.contains(a)) {
            inside += p;
            n_in += 1;
        } else {
            outside += p;
            n_out += 1;
        }
    }
    (to_db(inside / n_in.max(1) as f64), to_db(outside / n_out.max(1) as f64))
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?},{},{},{}",
            r.p_dbm,
            r.ser_avg,
            r.p_d,
            r.p_fa,
            r.rmse_deg,
            r.n_samples,
            r.mode.tag(),
            r.estimator.tag()
        )?;
    }
    Ok(())
}

pub fn read_metrics_csv<R: BufRead>(r: R) -> Result<Vec<MetricsRow>, EvalError> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != METRICS_HEADER {
        return Err(EvalError::Csv {
            line: 1,
            msg: format!("unexpected header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let csv = |msg: String| EvalError::Csv { line: i + 2, msg };
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(csv(format!("{} fields, expected 8", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| csv(format!("`{s}`: {e}")));
        rows.push(MetricsRow {
            p_dbm: num(f[0])?,
            ser_avg: num(f[1])?,
            p_d: num(f[2])?,
            p_fa: num(f[3])?,
            rmse_deg: num(f[4])?,
            n_samples: f[5].parse().map_err(|e| csv(format!("`{}`: {e}", f[5])))?,
            mode: f[6].parse().map_err(csv)?,
            estimator: f[7].parse().map_err(csv)?,
        });
    }
    Ok(rows)
}

pub fn write_beampattern_csv<W: Write>(mut w: W, grid_deg: &[f64], power: &[f64]) -> io::Result<()> {
    writeln!(w, "{BEAMPATTERN_HEADER}")?;
    for (a, p) in grid_deg.iter().zip(power) {
        writeln!(w, "{a:?},{:?}", to_db(*p))?;
    }
    Ok(())
}

/// Random subset of `set` of size `n` (or all of it), drawn from `seed`.
pub fn subsample(set: &[Scenario], n: usize, seed: u64) -> Vec<Scenario> {
    if n >= set.len() {
        return set.to_vec();
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut rng = stream(seed, Purpose::TestData, u64::MAX);
    let mut pick: Vec<usize> = idx.choose_multiple(&mut rng, n).copied().collect();
    pick.sort_unstable();
    pick.into_iter().map(|i| set[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ser_examples() {
        let t = vec![vec![0, 1, 2], vec![3, 3, 0]];
        assert_eq!(compute_ser(&t, &t).unwrap(), 0.0);
        let wrong = vec![vec![1, 2, 3], vec![0, 0, 1]];
        assert_eq!(compute_ser(&wrong, &t).unwrap(), 1.0);
        let half = vec![t[0].clone(), wrong[1].clone()];
        assert_eq!(compute_ser(&half, &t).unwrap(), 0.5);
        assert!(compute_ser(&t[..1], &t).is_err());
    }

    #[test]
    fn detection_examples() {
        let t = [true, false, true, false];
        assert_eq!(compute_detection(&t, &t).unwrap(), (1.0, 0.0));
        assert_eq!(compute_detection(&[true; 4], &t).unwrap(), (1.0, 1.0));
        assert!(compute_detection(&[true], &[true]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(compute_rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((compute_rmse(&[3.0, -1.0], &[1.0, -3.0]) - 2.0).abs() < 1e-15);
        assert!(compute_rmse(&[], &[]).is_nan());
    }

    #[test]
    fn trend_tolerance() {
        let s = [0.01; 5];
        assert!(follows_trend(&[0.3, 0.2, 0.1, 0.05, 0.04], &s, Trend::Decreasing));
        assert!(follows_trend(&[0.3, 0.2, 0.1, 0.105, 0.04], &s, Trend::Decreasing));
        assert!(!follows_trend(&[0.3, 0.2, 0.1, 0.2, 0.04], &s, Trend::Decreasing));
        assert!(!follows_trend(&[0.3, 0.305, 0.1, 0.105, 0.04], &s, Trend::Decreasing));
        assert!(follows_trend(&[0.5, 0.6, 0.6, 0.9], &s, Trend::Increasing));
    }

    #[test]
    fn db_floor() {
        assert_eq!(to_db(0.0), DB_FLOOR);
        assert_eq!(to_db(1e-30), DB_FLOOR);
        assert!((to_db(100.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn matched_steering_peaks_at_target() {
        let x = steering_vector(25.0, 16).conj();
        let grid = default_grid();
        let p = pattern_of(&x, &grid).unwrap();
        let best = grid[p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        assert_eq!(best, 25.0);
        assert!((p[115] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combos_enumerate_all() {
        let cfg = SystemConfig::default();
        let c = message_combos(&cfg, 0);
        assert_eq!(c.len(), 64);
        let mut sorted = c.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 64);
        let mut big = cfg.clone();
        big.m_size = 64;
        assert_eq!(message_combos(&big, 0).len(), CALIBRATION_COMBOS);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let mut rng = stream(0, Purpose::Init, 9);
        let rows: Vec<MetricsRow> = (0..6)
            .map(|i| MetricsRow {
                p_dbm: 6.0 + 2.0 * i as f64,
                ser_avg: rng.random(),
                p_d: rng.random(),
                p_fa: rng.random(),
                rmse_deg: rng.random::<f64>() * 10.0,
                n_samples: 1000 + i,
                mode: if i % 2 == 0 { TransmitterKind::Slp } else { TransmitterKind::Blp },
                estimator: if i % 3 == 0 { EstimatorKind::Mlp } else { EstimatorKind::Lstm },
            })
            .collect();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(METRICS_HEADER.as_bytes()));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
        assert!(read_metrics_csv(&b"p_dbm,ser\n"[..]).is_err());
    }

    #[test]
    fn region_contrast_splits_grid() {
        let grid = [-20.0, 0.0, 20.0, 40.0];
        let p = [1.0, 100.0, 100.0, 1.0];
        let (i, o) = region_contrast(&grid, &p, &[AngleInterval::new(-5.0, 25.0)]);
        assert!((i - 20.0).abs() < 1e-12 && o.abs() < 1e-12);
    }
}
