//! Clock-driven spiking neural network simulator whose state carries a
//! leading minibatch dimension.
//!
//! Neuron state, spike traces and monitors are stored once per batch
//! element, while weights and adaptive thresholds are shared and receive
//! batch-reduced online STDP updates. On top of the simulator sit an
//! ANN-to-SNN conversion pipeline for MNIST, an unsupervised STDP digit
//! learner and a throughput benchmark.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the usual `f32` choice.

// `!(x > 0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod conversion;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod mlp;
pub mod mnist;
pub mod neurons;
pub mod plasticity;
pub mod rng;
pub mod scalar;
pub mod snnw;
pub mod tensor;
pub mod topology;

pub use config::NetworkConfig;
pub use conversion::{convert, convert_with, normalize_activations, ConvertedSnn};
pub use engine::{InputSource, MemoryReport, MonitorTarget, Network, Propagation, Recordings, SimulationMode};
pub use error::{Result, SnnError};
pub use mlp::{train_mlp, MlpModel, TrainConfig};
pub use mnist::{load_mnist, MnistDataset, Split};
pub use neurons::{
    AccumulatorGroup, AdaptiveLifGroup, InputGroup, LifGroup, LifParams, NeuronGroup, SubtractiveIfGroup, Variable,
};
pub use plasticity::{StdpRule, StdpVariant};
pub use rng::Rng;
pub use scalar::Real;
pub use tensor::{BatchedTensor, Matrix, Reduction, TimeSeries};
pub use topology::Connection;

pub type Tensor = BatchedTensor<f32>;
pub type Tensor64 = BatchedTensor<f64>;
pub type Weights = Matrix<f32>;
pub type Series = TimeSeries<f32>;
pub type Net = Network<f32>;
pub type Net64 = Network<f64>;
pub type Mlp = MlpModel<f32>;
pub type Mlp64 = MlpModel<f64>;
pub type Snn = ConvertedSnn<f32>;
