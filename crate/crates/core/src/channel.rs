//! Complex-baseband array physics: steering vectors, path loss, scenario
//! sampling, the target echo and the user downlink.
//!
//! Angles are degrees at every interface. Powers are milliwatts, noise
//! variances are per complex entry.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::config::{db_to_lin, SystemConfig};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{0}")]
    Domain(String),
    #[error("user index {index} out of range for {users} users")]
    UserIndex { index: usize, users: usize },
}

/// Complex matrix stored as two real grids of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CTensor {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
}

impl CTensor {
    pub fn new(re: Array2<f64>, im: Array2<f64>) -> Result<Self, ChannelError> {
        if re.dim() != im.dim() {
            return Err(ChannelError::Dimension {
                what: "imaginary part",
                expected: re.dim(),
                got: im.dim(),
            });
        }
        Ok(Self { re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Array2::zeros((rows, cols)),
            im: Array2::zeros((rows, cols)),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let z = f(i, j);
                out.re[[i, j]] = z.re;
                out.im[[i, j]] = z.im;
            }
        }
        out
    }

    pub fn dim(&self) -> (usize, usize) {
        self.re.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[[i, j]], self.im[[i, j]])
    }

    pub fn matmul(&self, rhs: &CTensor) -> Result<CTensor, ChannelError> {
        let (a, b) = (self.dim(), rhs.dim());
        if a.1 != b.0 {
            return Err(ChannelError::Dimension {
                what: "matmul rhs",
                expected: (a.1, b.1),
                got: b,
            });
        }
        Ok(CTensor {
            re: self.re.dot(&rhs.re) - self.im.dot(&rhs.im),
            im: self.re.dot(&rhs.im) + self.im.dot(&rhs.re),
        })
    }

    /// Plain (non-conjugating) transpose.
    pub fn t(&self) -> CTensor {
        CTensor {
            re: self.re.t().to_owned(),
            im: self.im.t().to_owned(),
        }
    }

    pub fn conj(&self) -> CTensor {
        CTensor {
            re: self.re.clone(),
            im: -&self.im,
        }
    }

    pub fn scale(&self, a: f64) -> CTensor {
        CTensor {
            re: &self.re * a,
            im: &self.im * a,
        }
    }

    pub fn add(&self, rhs: &CTensor) -> Result<CTensor, ChannelError> {
        if self.dim() != rhs.dim() {
            return Err(ChannelError::Dimension {
                what: "add rhs",
                expected: self.dim(),
                got: rhs.dim(),
            });
        }
        Ok(CTensor {
            re: &self.re + &rhs.re,
            im: &self.im + &rhs.im,
        })
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().chain(self.im.iter()).map(|a| a * a).sum()
    }

    pub fn column(&self, c: usize) -> CTensor {
        CTensor {
            re: self.re.slice(s![.., c..c + 1]).to_owned(),
            im: self.im.slice(s![.., c..c + 1]).to_owned(),
        }
    }

    /// `[re; im]` stacked into a `2r x c` real grid.
    pub fn to_stacked(&self) -> Array2<f64> {
        let (r, c) = self.dim();
        let mut out = Array2::zeros((2 * r, c));
        out.slice_mut(s![..r, ..]).assign(&self.re);
        out.slice_mut(s![r.., ..]).assign(&self.im);
        out
    }

    /// Inverse of [`CTensor::to_stacked`].
    pub fn from_stacked(a: &Array2<f64>) -> Result<CTensor, ChannelError> {
        let r2 = a.nrows();
        if r2 % 2 != 0 {
            return Err(ChannelError::Domain(format!("stacked grid has odd row count {r2}")));
        }
        let r = r2 / 2;
        Ok(CTensor {
            re: a.slice(s![..r, ..]).to_owned(),
            im: a.slice(s![r.., ..]).to_owned(),
        })
    }

    /// Real `2r x 2c` matrix `[[re, -im], [im, re]]` acting on stacked vectors.
    pub fn real_rep(&self) -> Array2<f64> {
        let (r, c) = self.dim();
        let mut out = Array2::zeros((2 * r, 2 * c));
        out.slice_mut(s![..r, ..c]).assign(&self.re);
        out.slice_mut(s![..r, c..]).assign(&(-&self.im));
        out.slice_mut(s![r.., ..c]).assign(&self.im);
        out.slice_mut(s![r.., c..]).assign(&self.re);
        out
    }
}

/// Uniform linear array response with half-wavelength spacing,
/// `(1/sqrt(n)) exp(-j pi i sin(theta))`, as an `n x 1` column.
pub fn steering_vector(theta_deg: f64, n: usize) -> CTensor {
    let amp = 1.0 / (n as f64).sqrt();
    let sin = theta_deg.to_radians().sin();
    CTensor::from_fn(n, 1, |i, _| Complex64::from_polar(amp, -PI * i as f64 * sin))
}

/// Linear distance-dependent path loss `10^(ref_db/10) (d/d0)^(-gamma)`.
pub fn path_loss(ref_db: f64, d: f64, d0: f64, gamma: f64) -> Result<f64, ChannelError> {
    if !(d > 0.0 && d0 > 0.0) {
        return Err(ChannelError::Domain(format!(
            "path loss needs positive distances, got d = {d}, d0 = {d0}"
        )));
    }
    Ok(db_to_lin(ref_db) * (d / d0).powf(-gamma))
}

/// One sampled world: target hypothesis and geometry, user geometry, and
/// the messages of every slot in the processing interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub target_present: bool,
    pub theta_deg: f64,
    pub d_r: f64,
    pub user_angles_deg: Vec<f64>,
    pub d_c: Vec<f64>,
    /// Slot-major `N x K` message indices.
    pub messages: Vec<u8>,
}

impl Scenario {
    pub fn users(&self) -> usize {
        self.user_angles_deg.len()
    }

    pub fn message(&self, slot: usize, user: usize) -> usize {
        self.messages[slot * self.users() + user] as usize
    }

    /// The `K` messages sent in one slot.
    pub fn slot_messages(&self, slot: usize) -> &[u8] {
        let k = self.users();
        &self.messages[slot * k..(slot + 1) * k]
    }
}

fn positive_gaussian<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return mean;
    }
    let dist = Normal::new(mean, std).expect("finite spread");
    loop {
        let d = dist.sample(rng);
        if d > 0.0 {
            return d;
        }
    }
}

fn uniform_in<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

pub fn sample_scenario<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Scenario {
    let target_present = rng.random_bool(0.5);
    let theta_deg = uniform_in(cfg.theta_bounds.min, cfg.theta_bounds.max, rng);
    let d_r = positive_gaussian(cfg.d_r_mean, cfg.d_r_std, rng);
    let user_angles_deg = cfg
        .user_bounds
        .iter()
        .map(|b| uniform_in(b.min, b.max, rng))
        .collect();
    let d_c = (0..cfg.k)
        .map(|_| positive_gaussian(cfg.d_c_mean, cfg.d_c_std, rng))
        .collect();
    let messages = (0..cfg.n * cfg.k)
        .map(|_| rng.random_range(0..cfg.m_size) as u8)
        .collect();
    Scenario {
        target_present,
        theta_deg,
        d_r,
        user_angles_deg,
        d_c,
        messages,
    }
}

/// I.i.d. circular complex Gaussian entries with per-entry variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, var: f64, rng: &mut R) -> CTensor {
    let sd = (var / 2.0).sqrt();
    let mut draw = || {
        let v: f64 = StandardNormal.sample(rng);
        sd * v
    };
    let mut out = CTensor::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out.re[[i, j]] = draw();
            out.im[[i, j]] = draw();
        }
    }
    out
}

/// Array gain of the two-way radar link, `sqrt(Nt Nr)`.
pub fn radar_gain(cfg: &SystemConfig) -> f64 {
    ((cfg.nt * cfg.nr) as f64).sqrt()
}

/// Array gain of the downlink, `sqrt(Nt)`.
pub fn comm_gain(cfg: &SystemConfig) -> f64 {
    (cfg.nt as f64).sqrt()
}

/// `Nr x Nt` target response `G_r alpha_t alpha_d a_r(theta) a_t(theta)^T`,
/// or zero when the target is absent.
pub fn radar_matrix(sc: &Scenario, cfg: &SystemConfig) -> Result<CTensor, ChannelError> {
    if !sc.target_present {
        return Ok(CTensor::zeros(cfg.nr, cfg.nt));
    }
    let alpha_d = path_loss(cfg.alpha0_db, sc.d_r, cfg.d0, cfg.gamma)?;
    let a_t = steering_vector(sc.theta_deg, cfg.nt);
    let a_r = steering_vector(sc.theta_deg, cfg.nr);
    Ok(a_r
        .matmul(&a_t.t())?
        .scale(radar_gain(cfg) * cfg.alpha_t * alpha_d))
}

/// `1 x Nt` downlink row `G_c sqrt(beta_d) a_t(vartheta_k)^T` of user `k`
/// (0-based).
pub fn comm_row(sc: &Scenario, k: usize, cfg: &SystemConfig) -> Result<CTensor, ChannelError> {
    if k >= cfg.k || k >= sc.users() {
        return Err(ChannelError::UserIndex {
            index: k,
            users: cfg.k,
        });
    }
    let beta_d = path_loss(cfg.beta0_db, sc.d_c[k], cfg.d0, cfg.gamma)?;
    Ok(steering_vector(sc.user_angles_deg[k], cfg.nt)
        .t()
        .scale(comm_gain(cfg) * beta_d.sqrt()))
}

/// Echo over one processing interval: `Nr x N` under either hypothesis.
pub fn radar_echo<R: Rng + ?Sized>(
    x_block: &CTensor,
    sc: &Scenario,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<CTensor, ChannelError> {
    if x_block.dim() != (cfg.nt, cfg.n) {
        return Err(ChannelError::Dimension {
            what: "transmit block",
            expected: (cfg.nt, cfg.n),
            got: x_block.dim(),
        });
    }
    let h = radar_matrix(sc, cfg)?;
    let noise = complex_gaussian(cfg.nr, cfg.n, cfg.sigma_r2_lin(), rng);
    h.matmul(x_block)?.add(&noise)
}

/// Received sample of user `k` (0-based) for one transmit slot.
pub fn comm_receive<R: Rng + ?Sized>(
    x_slot: &CTensor,
    sc: &Scenario,
    k: usize,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<Complex64, ChannelError> {
    if x_slot.dim() != (cfg.nt, 1) {
        return Err(ChannelError::Dimension {
            what: "transmit slot",
            expected: (cfg.nt, 1),
            got: x_slot.dim(),
        });
    }
    let y = comm_row(sc, k, cfg)?.matmul(x_slot)?;
    let z = complex_gaussian(1, 1, cfg.sigma_c2_lin(), rng);
    Ok(y.get(0, 0) + z.get(0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn steering_vector_closed_forms() {
        let a = steering_vector(0.0, 4);
        for i in 0..4 {
            assert!(close(a.get(i, 0), Complex64::new(0.5, 0.0), 1e-15));
        }
        let a = steering_vector(90.0, 3);
        let r = 1.0 / 3f64.sqrt();
        for (i, sign) in [1.0, -1.0, 1.0].iter().enumerate() {
            assert!(close(a.get(i, 0), Complex64::new(sign * r, 0.0), 1e-12));
        }
        let a = steering_vector(30.0, 2);
        let r = 1.0 / 2f64.sqrt();
        assert!(close(a.get(0, 0), Complex64::new(r, 0.0), 1e-15));
        assert!(close(a.get(1, 0), Complex64::new(0.0, -r), 1e-12));
    }

    #[test]
    fn path_loss_closed_forms() {
        assert!((path_loss(-30.0, 1.0, 1.0, 2.2).unwrap() - 1e-3).abs() < 1e-18);
        let v = path_loss(-30.0, 10.0, 1.0, 2.2).unwrap();
        assert!((v - 10f64.powf(-5.2)).abs() < 1e-18);
        assert!((v - 6.3096e-6).abs() < 1e-9);
        assert!((path_loss(-30.0, 37.0, 1.0, 0.0).unwrap() - 1e-3).abs() < 1e-18);
        assert!(path_loss(-30.0, 0.0, 1.0, 2.2).is_err());
        assert!(path_loss(-30.0, -1.0, 1.0, 2.2).is_err());
    }

    #[test]
    fn array_gains() {
        let mut cfg = SystemConfig::default();
        cfg.nt = 16;
        cfg.nr = 16;
        assert_eq!(radar_gain(&cfg), 16.0);
        assert_eq!(comm_gain(&cfg), 4.0);
    }

    #[test]
    fn degenerate_bounds_fix_the_angle() {
        let mut cfg = SystemConfig::desk();
        cfg.theta_bounds = crate::config::AngleInterval::new(10.0, 10.0);
        let mut rng = stream(1, Purpose::TrainData, 0);
        for _ in 0..100 {
            assert_eq!(sample_scenario(&cfg, &mut rng).theta_deg, 10.0);
        }
    }

    #[test]
    fn absent_target_noiseless_echo_is_zero() {
        let mut cfg = SystemConfig::desk();
        cfg.sigma_r2_dbm = -1000.0;
        let mut rng = stream(3, Purpose::TrainData, 0);
        let mut sc = sample_scenario(&cfg, &mut rng);
        sc.target_present = false;
        let x = complex_gaussian(cfg.nt, cfg.n, 1.0, &mut rng);
        let y = radar_echo(&x, &sc, &cfg, &mut rng).unwrap();
        assert!(y.norm_sqr() < 1e-90);
    }

    #[test]
    fn matched_transmit_gives_full_gain() {
        let mut cfg = SystemConfig::default();
        cfg.sigma_r2_dbm = -1000.0;
        cfg.sigma_c2_dbm = -1000.0;
        let mut rng = stream(5, Purpose::TrainData, 0);
        let mut sc = sample_scenario(&cfg, &mut rng);
        sc.target_present = true;
        let a = steering_vector(sc.theta_deg, cfg.nt).conj();
        let x = CTensor::from_fn(cfg.nt, cfg.n, |i, _| a.get(i, 0));
        let y = radar_echo(&x, &sc, &cfg, &mut rng).unwrap();
        let alpha_d = path_loss(cfg.alpha0_db, sc.d_r, cfg.d0, cfg.gamma).unwrap();
        let expected = radar_gain(&cfg) * cfg.alpha_t * alpha_d;
        for n in 0..cfg.n {
            let col = y.column(n).norm_sqr().sqrt();
            assert!((col - expected).abs() / expected < 1e-12);
        }

        let k = 1;
        let a = steering_vector(sc.user_angles_deg[k], cfg.nt).conj();
        let yk = comm_receive(&a, &sc, k, &cfg, &mut rng).unwrap();
        let beta_d = path_loss(cfg.beta0_db, sc.d_c[k], cfg.d0, cfg.gamma).unwrap();
        let expected = (cfg.nt as f64).sqrt() * beta_d.sqrt();
        assert!((yk - Complex64::new(expected, 0.0)).norm() / expected < 1e-12);
    }

    #[test]
    fn zero_transmit_noiseless_downlink_is_zero() {
        let mut cfg = SystemConfig::desk();
        cfg.sigma_c2_dbm = -1000.0;
        let mut rng = stream(2, Purpose::TrainData, 0);
        let sc = sample_scenario(&cfg, &mut rng);
        let y = comm_receive(&CTensor::zeros(cfg.nt, 1), &sc, 0, &cfg, &mut rng).unwrap();
        assert!(y.norm() < 1e-40);
    }

    #[test]
    fn dimension_and_index_errors() {
        let cfg = SystemConfig::desk();
        let mut rng = stream(2, Purpose::TrainData, 0);
        let sc = sample_scenario(&cfg, &mut rng);
        let bad = CTensor::zeros(cfg.nt + 1, cfg.n);
        assert!(matches!(
            radar_echo(&bad, &sc, &cfg, &mut rng),
            Err(ChannelError::Dimension { .. })
        ));
        let x = CTensor::zeros(cfg.nt, 1);
        assert!(matches!(
            comm_receive(&x, &sc, cfg.k, &cfg, &mut rng),
            Err(ChannelError::UserIndex { .. })
        ));
    }

    #[test]
    fn stacked_and_real_rep_agree_with_complex_product() {
        let mut rng = stream(9, Purpose::TrainData, 0);
        let a = complex_gaussian(3, 4, 1.0, &mut rng);
        let x = complex_gaussian(4, 2, 1.0, &mut rng);
        let direct = a.matmul(&x).unwrap().to_stacked();
        let via = a.real_rep().dot(&x.to_stacked());
        for (p, q) in direct.iter().zip(via.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(CTensor::from_stacked(&x.to_stacked()).unwrap(), x);
    }
}
