//! In-context denoising with one-layer attention.
//!
//! A prompt is a context of L clean tokens plus a noise-corrupted query; the
//! goal is to predict the clean token behind the query. This crate provides
//! the three token distributions (random linear subspace, sphere in a random
//! subspace, spherical Gaussian mixture), their Bayes-optimal denoisers,
//! linear/softmax/Gaussian-kernel attention forwards with analytic gradients,
//! Adam training, the associative-memory energy descents whose one-step
//! updates coincide with attention, and coordinate-transform experiments.

pub mod attention;
pub mod baselines;
pub mod energy;
mod error;
pub mod numerics;
pub mod tasks;
pub mod training;
pub mod transform;

pub use attention::{AttentionKind, AttentionWeights, ScaledIdentitySummary};
pub use baselines::BaselineKind;
pub use energy::{DescentTrajectory, EnergyKind, EnergyModel};
pub use error::{Error, Result};
pub use numerics::RngStream;
pub use tasks::{Prompt, TaskCase, TaskInstance, TaskSpec, TransformSpec};
pub use training::{AdamState, LossRecord, TrainConfig, TrainResult};
pub use transform::{TransformTrainReport, TransformedOptimum};
