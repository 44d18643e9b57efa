//! The fixed classifier, its training loop, and checkpoint serialization.
//!
//! The architecture never changes: two valid 3×3 convolutions with ReLU and
//! 2×2 max pooling, then a 64-unit hidden layer and a linear head. Only the
//! input side length and the class count are parameters. Everything is
//! generic over the float type so the same code path can be trained in `f32`
//! and finite-difference-checked in `f64`.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError, NetOracle};
pub use model::{image_to_input, Net, NetShape, NetTensors, Scalar};
pub use optim::AdamState;
pub use train::{
    export_features, run_fingerprint, total_loss, train, EpochLog, LossTerms, LossWeights,
    SimScope, TrainConfig, TrainData, TrainError, TrainOutput,
};
