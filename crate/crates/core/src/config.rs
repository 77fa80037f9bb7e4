//! Run configuration and its `key = value` text format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Closed angular interval in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleInterval {
    pub min: f64,
    pub max: f64,
}

impl AngleInterval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, deg: f64) -> bool {
        (self.min..=self.max).contains(&deg)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Transmit power used while training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainPower {
    /// Always `p_dbm`.
    Fixed,
    /// Drawn per batch, uniform in dBmW.
    Uniform { lo_dbm: f64, hi_dbm: f64 },
}

/// Every physical, architectural and training parameter of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub nt: usize,
    pub nr: usize,
    pub k: usize,
    pub n: usize,
    pub m_size: usize,
    pub p_dbm: f64,
    pub sigma_r2_dbm: f64,
    pub sigma_c2_dbm: f64,
    pub alpha0_db: f64,
    pub beta0_db: f64,
    pub gamma: f64,
    pub d0: f64,
    pub d_r_mean: f64,
    pub d_r_std: f64,
    pub d_c_mean: f64,
    pub d_c_std: f64,
    pub theta_bounds: AngleInterval,
    pub user_bounds: Vec<AngleInterval>,
    pub alpha_t: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub q_bar: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    /// Estimator output scale; `None` means the largest magnitude of the
    /// target interval bounds.
    pub theta_scale_deg: Option<f64>,
    pub train_count: usize,
    pub test_count: usize,
    pub val_count: usize,
    pub train_power: TrainPower,
}

const DEFAULT_USER_BOUNDS: [AngleInterval; 3] = [
    AngleInterval::new(50.0, 70.0),
    AngleInterval::new(-75.0, -60.0),
    AngleInterval::new(-45.0, -30.0),
];

impl Default for SystemConfig {
    /// Full-scale scenario: 16 antennas, three users.
    fn default() -> Self {
        Self {
            nt: 16,
            nr: 16,
            k: 3,
            n: 8,
            m_size: 4,
            p_dbm: 10.0,
            sigma_r2_dbm: -70.0,
            sigma_c2_dbm: -70.0,
            alpha0_db: -30.0,
            beta0_db: -30.0,
            gamma: 2.2,
            d0: 1.0,
            d_r_mean: 10.0,
            d_r_std: 1.0,
            d_c_mean: 150.0,
            d_c_std: 1.0,
            theta_bounds: AngleInterval::new(-10.0, 10.0),
            user_bounds: DEFAULT_USER_BOUNDS.to_vec(),
            alpha_t: 1.0,
            omega1: 0.05,
            omega2: 0.3,
            q_bar: 0.5,
            lr: 1e-3,
            batch: 1000,
            epochs: 30,
            seed: 0,
            hidden: 64,
            theta_scale_deg: None,
            train_count: 1_000_000,
            test_count: 500_000,
            val_count: 2000,
            train_power: TrainPower::Fixed,
        }
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl SystemConfig {
    /// Reduced scenario that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            nt: 8,
            nr: 8,
            k: 2,
            user_bounds: DEFAULT_USER_BOUNDS[..2].to_vec(),
            batch: 200,
            epochs: 30,
            train_count: 20_000,
            test_count: 10_000,
            val_count: 1000,
            ..Self::default()
        }
    }

    pub fn p_lin(&self) -> f64 {
        db_to_lin(self.p_dbm)
    }

    pub fn sigma_r2_lin(&self) -> f64 {
        db_to_lin(self.sigma_r2_dbm)
    }

    pub fn sigma_c2_lin(&self) -> f64 {
        db_to_lin(self.sigma_c2_dbm)
    }

    pub fn theta_scale(&self) -> f64 {
        self.theta_scale_deg.unwrap_or_else(|| {
            self.theta_bounds
                .min
                .abs()
                .max(self.theta_bounds.max.abs())
        })
    }

    /// Symbol combinations a transmitter slot can carry, `|M|^K`.
    pub fn combos(&self) -> Option<usize> {
        self.m_size.checked_pow(self.k as u32)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in [
            ("nt", self.nt),
            ("nr", self.nr),
            ("k", self.k),
            ("n", self.n),
            ("m_size", self.m_size),
            ("batch", self.batch),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.m_size > 256 {
            return bad(format!("m_size {} exceeds 256", self.m_size));
        }
        for (name, v) in [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("q_bar", self.q_bar),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.user_bounds.len() != self.k {
            return bad(format!(
                "k = {} but {} user intervals given",
                self.k,
                self.user_bounds.len()
            ));
        }
        for iv in std::iter::once(&self.theta_bounds).chain(&self.user_bounds) {
            if !(iv.min <= iv.max) || iv.min < -90.0 || iv.max > 90.0 {
                return bad(format!("angle interval [{}, {}] is empty or outside [-90, 90]", iv.min, iv.max));
            }
        }
        if !(self.d0 > 0.0 && self.d_r_mean > 0.0 && self.d_c_mean > 0.0) {
            return bad("distances must be positive".into());
        }
        if self.d_r_std < 0.0 || self.d_c_std < 0.0 {
            return bad("distance spreads must be non-negative".into());
        }
        if !(self.lr >= 0.0) {
            return bad(format!("lr = {} must be non-negative", self.lr));
        }
        if let Some(s) = self.theta_scale_deg {
            if !(s > 0.0) {
                return bad(format!("theta_scale_deg = {s} must be positive"));
            }
        }
        if let TrainPower::Uniform { lo_dbm, hi_dbm } = self.train_power {
            if !(lo_dbm <= hi_dbm) {
                return bad("train_power_range lower bound exceeds upper bound".into());
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        text.parse()
    }

    /// Stable 64-bit digest of the canonical text form.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_string().as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }

    fn set(&mut self, key: &str, value: &str, line: usize, user_bounds_set: &mut bool) -> Result<(), ConfigError> {
        let perr = |msg: String| ConfigError::Parse { line, msg };
        fn num<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("`{key}`: cannot parse `{v}`"),
            })
        }
        let interval = |v: &str| -> Result<AngleInterval, ConfigError> {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(perr(format!("`{key}`: expected `min, max`, got `{v}`")));
            }
            Ok(AngleInterval::new(num(key, parts[0], line)?, num(key, parts[1], line)?))
        };
        match key {
            "nt" => self.nt = num(key, value, line)?,
            "nr" => self.nr = num(key, value, line)?,
            "k" => self.k = num(key, value, line)?,
            "n" => self.n = num(key, value, line)?,
            "m_size" => self.m_size = num(key, value, line)?,
            "p_dbm" => self.p_dbm = num(key, value, line)?,
            "sigma_r2_dbm" => self.sigma_r2_dbm = num(key, value, line)?,
            "sigma_c2_dbm" => self.sigma_c2_dbm = num(key, value, line)?,
            "alpha0_db" => self.alpha0_db = num(key, value, line)?,
            "beta0_db" => self.beta0_db = num(key, value, line)?,
            "gamma" => self.gamma = num(key, value, line)?,
            "d0" => self.d0 = num(key, value, line)?,
            "d_r_mean" => self.d_r_mean = num(key, value, line)?,
            "d_r_std" => self.d_r_std = num(key, value, line)?,
            "d_c_mean" => self.d_c_mean = num(key, value, line)?,
            "d_c_std" => self.d_c_std = num(key, value, line)?,
            "theta_bounds" => self.theta_bounds = interval(value)?,
            "user_bounds" => {
                self.user_bounds = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(&interval)
                    .collect::<Result<_, _>>()?;
                *user_bounds_set = true;
            }
            "alpha_t" => self.alpha_t = num(key, value, line)?,
            "omega1" => self.omega1 = num(key, value, line)?,
            "omega2" => self.omega2 = num(key, value, line)?,
            "q_bar" => self.q_bar = num(key, value, line)?,
            "lr" => self.lr = num(key, value, line)?,
            "batch" => self.batch = num(key, value, line)?,
            "epochs" => self.epochs = num(key, value, line)?,
            "seed" => self.seed = num(key, value, line)?,
            "hidden" => self.hidden = num(key, value, line)?,
            "theta_scale_deg" => {
                self.theta_scale_deg = match value {
                    "auto" => None,
                    v => Some(num(key, v, line)?),
                }
            }
            "train_count" => self.train_count = num(key, value, line)?,
            "test_count" => self.test_count = num(key, value, line)?,
            "val_count" => self.val_count = num(key, value, line)?,
            "train_power" => {
                self.train_power = match (value, self.train_power) {
                    ("fixed", _) => TrainPower::Fixed,
                    ("uniform", TrainPower::Uniform { .. }) => self.train_power,
                    ("uniform", TrainPower::Fixed) => TrainPower::Uniform {
                        lo_dbm: 6.0,
                        hi_dbm: 14.0,
                    },
                    (v, _) => return Err(perr(format!("`train_power`: expected `fixed` or `uniform`, got `{v}`"))),
                }
            }
            "train_power_range" => {
                let iv = interval(value)?;
                self.train_power = TrainPower::Uniform {
                    lo_dbm: iv.min,
                    hi_dbm: iv.max,
                };
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_owned(),
                })
            }
        }
        Ok(())
    }
}

impl FromStr for SystemConfig {
    type Err = ConfigError;

    /// Parses `key = value` lines on top of [`SystemConfig::default`].
    /// `#` starts a comment. If `k` is given without `user_bounds`, the
    /// first `k` default user intervals are used.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cfg = SystemConfig::default();
        let mut user_bounds_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            cfg.set(key.trim(), value.trim(), line, &mut user_bounds_set)?;
        }
        if !user_bounds_set && cfg.k <= DEFAULT_USER_BOUNDS.len() {
            cfg.user_bounds = DEFAULT_USER_BOUNDS[..cfg.k].to_vec();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SystemConfig {
    /// Canonical text form; parses back to an equal config.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nt = {}", self.nt)?;
        writeln!(f, "nr = {}", self.nr)?;
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "m_size = {}", self.m_size)?;
        writeln!(f, "p_dbm = {:?}", self.p_dbm)?;
        writeln!(f, "sigma_r2_dbm = {:?}", self.sigma_r2_dbm)?;
        writeln!(f, "sigma_c2_dbm = {:?}", self.sigma_c2_dbm)?;
        writeln!(f, "alpha0_db = {:?}", self.alpha0_db)?;
        writeln!(f, "beta0_db = {:?}", self.beta0_db)?;
        writeln!(f, "gamma = {:?}", self.gamma)?;
        writeln!(f, "d0 = {:?}", self.d0)?;
        writeln!(f, "d_r_mean = {:?}", self.d_r_mean)?;
        writeln!(f, "d_r_std = {:?}", self.d_r_std)?;
        writeln!(f, "d_c_mean = {:?}", self.d_c_mean)?;
        writeln!(f, "d_c_std = {:?}", self.d_c_std)?;
        writeln!(f, "theta_bounds = {:?}, {:?}", self.theta_bounds.min, self.theta_bounds.max)?;
        let ub: Vec<String> = self
            .user_bounds
            .iter()
            .map(|b| format!("{:?}, {:?}", b.min, b.max))
            .collect();
        writeln!(f, "user_bounds = {}", ub.join("; "))?;
        writeln!(f, "alpha_t = {:?}", self.alpha_t)?;
        writeln!(f, "omega1 = {:?}", self.omega1)?;
        writeln!(f, "omega2 = {:?}", self.omega2)?;
        writeln!(f, "q_bar = {:?}", self.q_bar)?;
        writeln!(f, "lr = {:?}", self.lr)?;
        writeln!(f, "batch = {}", self.batch)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "hidden = {}", self.hidden)?;
        match self.theta_scale_deg {
            Some(s) => writeln!(f, "theta_scale_deg = {s:?}")?,
            None => writeln!(f, "theta_scale_deg = auto")?,
        }
        writeln!(f, "train_count = {}", self.train_count)?;
        writeln!(f, "test_count = {}", self.test_count)?;
        writeln!(f, "val_count = {}", self.val_count)?;
        match self.train_power {
            TrainPower::Fixed => writeln!(f, "train_power = fixed"),
            TrainPower::Uniform { lo_dbm, hi_dbm } => {
                writeln!(f, "train_power = uniform")?;
                writeln!(f, "train_power_range = {lo_dbm:?}, {hi_dbm:?}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        for cfg in [SystemConfig::default(), SystemConfig::desk()] {
            let back: SystemConfig = cfg.to_string().parse().unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
        let mut cfg = SystemConfig::desk();
        cfg.train_power = TrainPower::Uniform {
            lo_dbm: 6.0,
            hi_dbm: 14.0,
        };
        cfg.theta_scale_deg = Some(12.5);
        let back: SystemConfig = cfg.to_string().parse().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_user_bounds() {
        let cfg: SystemConfig = "# desk\nnt = 8 # transmit\nnr=8\nk = 2\n\nuser_bounds = 0,10; -5,5\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.nt, 8);
        assert_eq!(cfg.user_bounds, vec![AngleInterval::new(0.0, 10.0), AngleInterval::new(-5.0, 5.0)]);
    }

    #[test]
    fn k_without_bounds_takes_prefix() {
        let cfg: SystemConfig = "k = 1".parse().unwrap();
        assert_eq!(cfg.user_bounds, vec![AngleInterval::new(50.0, 70.0)]);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = "nt = 4\nfoo = 1".parse::<SystemConfig>().unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, .. }));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!("omega1 = 1.5".parse::<SystemConfig>().is_err());
        assert!("nt = 0".parse::<SystemConfig>().is_err());
        assert!("theta_bounds = 5, -5".parse::<SystemConfig>().is_err());
        assert!("k = 4".parse::<SystemConfig>().is_err());
        assert!("nt = eight".parse::<SystemConfig>().is_err());
        assert!("nt 8".parse::<SystemConfig>().is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = SystemConfig::from_file(Path::new("/nonexistent/run.cfg")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.cfg"));
    }

    #[test]
    fn derived_quantities() {
        let cfg = SystemConfig::default();
        assert!((cfg.p_lin() - 10.0).abs() < 1e-12);
        assert!((cfg.sigma_r2_lin() - 1e-7).abs() < 1e-20);
        assert_eq!(cfg.theta_scale(), 10.0);
        assert_eq!(SystemConfig::desk().combos(), Some(16));
    }
}
