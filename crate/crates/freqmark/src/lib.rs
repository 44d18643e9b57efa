//! Frequency-domain compression watermarking for image classifiers.
//!
//! The pipeline, end to end:
//!
//! 1. [`codec`] forges watermark samples by running images through a
//!    JPEG-style block-DCT quantization round trip (no bitstream is ever
//!    written); the compression behavior itself is the trigger.
//! 2. [`data`] supplies deterministic synthetic datasets, PNG folder
//!    ingestion, and the sampling/partition primitives used everywhere.
//! 3. [`attack`] simulates common input preprocessing attacks and builds
//!    the per-epoch attacked dataset used during training.
//! 4. [`nn`] trains a small CNN with the four-term loss (primary,
//!    watermark, attack, feature-similarity) on CPU, deterministically.
//! 5. [`lab`] runs removal, extraction, evasion, and false-trigger
//!    experiments against a trained checkpoint.
//! 6. [`verify`] makes the black-box ownership decision with an exact
//!    binomial threshold.
//!
//! [`metrics`] (PSNR/SSIM/accuracy/WSR), [`oracle`] (prediction
//! interfaces), [`config`] (run configuration), and [`report`]
//! (CSV/markdown emission) support the above.

pub mod attack;
pub mod codec;
pub mod config;
pub mod data;
pub mod lab;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod verify;

pub use data::{Dataset, ImageU8, LabeledSample, Provenance};
pub use rng::SeededRng;
