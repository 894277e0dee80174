//! Two-layer message-passing classifier trained from scratch with
//! hand-written derivatives.

pub mod checkpoint;
pub mod model;
pub mod params;
pub mod train;

pub use model::{forward, gradients, loss, predict, DropoutMasks, Prediction, PreparedGraph, Propagator, Targets};
pub use params::{LayerKind, ModelDims, ModelParams, TaskMode};
pub use train::{
    meta_step, reweight_step, train, train_from, LabeledGraph, SampleWeights, StepDiagnostics, Task,
    TrainConfig, TrainOutcome,
};
