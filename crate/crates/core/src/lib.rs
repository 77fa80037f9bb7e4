//! Learned integrated sensing and communication over a shared antenna
//! array: transmitters, decoders, radar receivers, the physical channel,
//! training and evaluation.

pub mod autodiff;
pub mod channel;
pub mod comm_rx;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod radar_rx;
pub mod rng;
pub mod training;
pub mod transmitter;

use thiserror::Error;

pub use autodiff::{Activation, Graph, NodeId, ParamId, ParamStore, TensorError};
pub use channel::{CTensor, ChannelError, Scenario};
pub use config::{AngleInterval, ConfigError, SystemConfig, TrainPower};
pub use dataset::{generate_dataset, Dataset, DatasetError};
pub use eval::{EvalError, EvalPoint, MetricsRow};
pub use model::{CheckpointError, ModelParams};
pub use rng::Purpose;
pub use training::{train, LossParts, TrainError, TrainReport};
pub use radar_rx::EstimatorKind;
pub use transmitter::{PrioriInfo, TransmitterKind};

/// Failure inside a network forward pass or its inputs.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Shape(String),
}
