//! Variational encoder-decoder models with deterministic and variational
//! attention, built on a small reverse-mode autodiff engine.
//!
//! Eight model variants share one LSTM encoder-decoder:
//!
//! | variant            | latent `z` | attention              |
//! |--------------------|------------|------------------------|
//! | `ded`              | no         | none                   |
//! | `ded-dattn`        | no         | deterministic          |
//! | `ved`              | yes        | none                   |
//! | `ved-hinit`        | yes        | none, encoder-state init |
//! | `ved-dattn`        | yes        | deterministic          |
//! | `ved-dattn-2stage` | yes        | deterministic, enabled late |
//! | `ved-vattn-0`      | yes        | variational, `N(0, I)` prior |
//! | `ved-vattn-hbar`   | yes        | variational, `N(mean source state, I)` prior |

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod gradcheck;
pub mod inference;
pub mod metrics;
pub mod noise;
pub mod objective;
pub mod optim;
pub mod params;
pub mod seq2seq;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, TrainConfig, Variant};
pub use data::{ParallelCorpus, SyntheticTaskSpec, Task, Vocabulary};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use gaussian::{DiagonalGaussian, GaussianPrior, PriorKind};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use inference::{DecodeMode, DecodeOptions, Generation};
pub use metrics::MetricsReport;
pub use noise::{GaussianNoise, NoiseSource, ZeroNoise};
pub use objective::AnnealSchedule;
pub use params::ParamSet;
pub use seq2seq::{Batch, ForwardOptions, Model};
pub use tensor::Tensor;
pub use train::{EpochLog, Trainer};
