//! Desk-scale mechanisms for dyadic conversational video generation, built
//! to be verified against closed-form oracles rather than pretrained
//! weights:
//!
//! - [`scene`]: synthetic two-person scenes with landmarks, VAD, lip centers
//!   and latent-grid region masks, plus the lips-masked motion encoder
//!   stand-in.
//! - [`attention`]: label-rotary identity binding and region-masked
//!   interaction injection.
//! - [`flow`]: flow-matching interpolation and loss, Euler sampling, and
//!   chunked long-form generation with hard context anchoring.
//! - [`align`]: the temporal connector from audio-context states to motion
//!   latents, its loss, analytic gradients with a finite-difference audit,
//!   and a plain trainer.
//! - [`guidance`]: VAD-driven role assignment and the spatially modulated
//!   guidance scale with lip-centered Gaussian fields.
//! - [`metrics`]: latency-shifted temporal IoU and eye-landmark co-motion
//!   saliency.
//! - [`curation`]: the cascaded clip-metadata filter pipeline.
//! - [`demo`]: the end-to-end pipeline wiring all of the above.
//!
//! The numeric core is generic over [`num::Scalar`] (`f32` or `f64`);
//! concrete aliases live at the crate root. All randomness flows through
//! explicit seeds, and every operation is pure and reentrant.

pub mod align;
pub mod attention;
pub mod curation;
pub mod demo;
pub mod error;
pub mod flow;
pub mod guidance;
pub mod latent;
pub mod metrics;
pub mod num;
pub mod scene;

pub use error::{Error, Result};
pub use num::Scalar;

/// Latent grid in the on-disk precision.
pub type Latent32 = latent::LatentGrid<f32>;
/// Latent grid in oracle precision.
pub type Latent64 = latent::LatentGrid<f64>;
/// Scene in oracle precision.
pub type Scene64 = scene::DyadicScene<f64>;
/// Motion latents in oracle precision.
pub type Motion64 = scene::MotionLatentSeq<f64>;
/// Interval sets in oracle precision.
pub type Segments64 = metrics::SegmentSet<f64>;
