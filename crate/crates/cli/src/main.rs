use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use isac_core::autodiff::TensorError;
use isac_core::eval::{self, EvalError};
use isac_core::{
    generate_dataset, CheckpointError, ConfigError, Dataset, DatasetError, EstimatorKind, ModelError, ModelParams,
    Purpose, SystemConfig, TrainError, TransmitterKind,
};

#[derive(Parser, Debug)]
#[command(name = "isac", version, about = "Learned ISAC transceiver: data, training, evaluation")]
struct Cli {
    /// `key = value` configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train, validation and test scenario sets.
    Gen,
    /// Train all networks jointly.
    Train {
        #[arg(long, default_value = "slp")]
        mode: TransmitterKind,
        #[arg(long, default_value = "lstm")]
        estimator: EstimatorKind,
    },
    /// Sweep transmit power over the test set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "6,8,10,12,14")]
        powers: Vec<f64>,
    },
    /// Transmit beampattern of a trained transmitter.
    Beampattern {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure::Other(e.into())
    }
}

fn numeric_model(e: &ModelError) -> bool {
    matches!(e, ModelError::Tensor(TensorError::NonFiniteGradient { .. } | TensorError::ZeroPower))
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let numeric = match &e {
            TrainError::NonFinite { .. } | TrainError::Tensor(_) => true,
            TrainError::Model(m) => numeric_model(m),
            TrainError::Input(_) => false,
        };
        if numeric {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Other(e.into())
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Model(m) if numeric_model(m) => Failure::Numerical(e.to_string()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        EvalError::from(e).into()
    }
}

fn load_config(cli: &Cli) -> Result<SystemConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => SystemConfig::from_file(p)?,
        None => SystemConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(cfg: &SystemConfig, out: &Path, name: &str, count: usize, purpose: Purpose) -> Result<Dataset, Failure> {
    let path = out.join(format!("{name}.ds"));
    if path.exists() {
        log::info!("loading {}", path.display());
        return Ok(Dataset::load(&path, cfg)?);
    }
    Ok(generate_dataset(cfg, count, purpose, cfg.seed)?)
}

fn checkpoint(arg: &Option<PathBuf>) -> Result<&Path, Failure> {
    arg.as_deref()
        .ok_or_else(|| Failure::Usage("--checkpoint <path> is required".into()))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.cmd {
        Command::Gen => {
            for (name, count, purpose) in [
                ("train", cfg.train_count, Purpose::TrainData),
                ("val", cfg.val_count, Purpose::ValData),
                ("test", cfg.test_count, Purpose::TestData),
            ] {
                let path = cli.out.join(format!("{name}.ds"));
                generate_dataset(&cfg, count, purpose, cfg.seed)?.save(&path)?;
                println!("wrote {} ({count} scenarios)", path.display());
            }
        }
        Command::Train { mode, estimator } => {
            let train = dataset(&cfg, &cli.out, "train", cfg.train_count, Purpose::TrainData)?;
            let val = dataset(&cfg, &cli.out, "val", cfg.val_count, Purpose::ValData)?;
            let (model, report) = isac_core::train(&cfg, *mode, *estimator, &train.scenarios, &val.scenarios)?;
            let ckpt = cli.out.join("model.ckpt");
            model.save(&ckpt)?;
            let csv = cli.out.join("loss.csv");
            report
                .save_csv(&csv)
                .map_err(|(p, e)| anyhow::anyhow!("{}: {e}", p.display()))?;
            if report.stalled {
                log::warn!("validation loss stalled during training");
            }
            let last = report.final_val();
            println!("initial validation loss {:.6}", report.initial_val.total);
            println!("final validation loss   {:.6}", last.total);
            println!("wrote {} and {}", ckpt.display(), csv.display());
        }
        Command::Eval { checkpoint: ck, powers } => {
            let model = ModelParams::load(checkpoint(ck)?, &cfg)?;
            let test = dataset(&cfg, &cli.out, "test", cfg.test_count, Purpose::TestData)?;
            let points = eval::sweep_power(&model, &cfg, &test.scenarios, powers, cfg.seed)?;
            let rows: Vec<_> = points.into_iter().map(|p| p.row).collect();
            let path = cli.out.join("metrics.csv");
            let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            eval::write_metrics_csv(BufWriter::new(f), &rows).context("writing metrics")?;
            eval::write_metrics_csv(std::io::stdout().lock(), &rows).context("printing metrics")?;
        }
        Command::Beampattern { checkpoint: ck } => {
            let model = ModelParams::load(checkpoint(ck)?, &cfg)?;
            let grid = eval::default_grid();
            let power = eval::beampattern(&model, &cfg, &grid)?;
            let path = cli.out.join("beampattern.csv");
            let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            eval::write_beampattern_csv(BufWriter::new(f), &grid, &power).context("writing beampattern")?;
            let mut regions = vec![cfg.theta_bounds];
            regions.extend(cfg.user_bounds.iter().copied());
            let (inside, outside) = eval::region_contrast(&grid, &power, &regions);
            println!("in-region {inside:.2} dB, out-of-region {outside:.2} dB");
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
