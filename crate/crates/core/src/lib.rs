//! Certification of nonclassical collective-spin states from photon-counting
//! Faraday-rotation data.
//!
//! The pipeline runs pulse records → pooled photon histogram → axis moments
//! (directly from factorial moments, or through a deconvolved marginal) →
//! radial moments → trial-function minimization. A negative minimized mean of
//! the non-negative trial function is impossible for any classical
//! phase-space density.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod criterion;
pub mod error;
pub mod io;
pub mod model;
pub mod moments;
pub mod pipeline;
pub mod reconstruct;
pub mod rng;
pub mod special;
pub mod synthetic;
pub mod xprec;

pub use error::{Error, Result};
pub use model::{
    pool_angles, validate_records, AngleHistogram, AngleSet, AxisMoments, DetectionParams, MarginalDistribution,
    PoolWeighting, PooledHistogram, PulseRecord, RadialMoments,
};
pub use criterion::{SweepResult, TrialSolution, Verdict};
pub use moments::MomentRoute;
pub use pipeline::PipelineConfig;
pub use synthetic::SyntheticState;
