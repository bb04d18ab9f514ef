//! Multi-view spike pairing, metric calibration, and volume-model
//! distillation, exercised end to end on synthetic scenes.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`camera`] — calibrated pinhole cameras, epipolar geometry, DLT
//!   triangulation, metric scale recovery, weighted spike centers.
//! * [`pairing`] — epipolar-consistency edge weights between detection
//!   boxes, weighted label propagation, and consensus clustering.
//! * [`scene`] — synthetic ellipsoid-spike scenes with exact silhouette
//!   boxes, plus pairing precision/recall scoring against ground truth.
//! * [`cloud`] — point-cloud utilities and rigid-invariant per-point
//!   distance histograms.
//! * [`losses`] — Gaussian NLL, regulated multi-view losses, feature
//!   alignment, and evaluation metrics.
//! * [`learn`] — small hand-rolled learners (histogram encoder, regulated
//!   view regressor, fusion ensemble) with exact analytic gradients,
//!   trainers, and the distillation recipes connecting them.
//! * [`formats`] / [`pipeline`] — file codecs, checkpoints, the stage
//!   runner, and inference benchmarks.
//!
//! Each major capability has a runnable demo under `examples/`; the thin
//! `spikevol` binary exposes the same stages as subcommands.

pub mod camera;
pub mod cloud;
pub mod formats;
pub mod learn;
pub mod losses;
pub mod pairing;
pub mod pipeline;
pub mod rng;
pub mod scene;

pub use camera::{Camera, GeometryError};
