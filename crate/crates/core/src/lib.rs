//! Semantic-conditioned diffusion, desk scale.
//!
//! The crate pairs an absorbing-state label-diffusion process (classes decay
//! into a MASK symbol on class-wise schedules) with a small Gaussian image
//! diffusion whose sampler conditions on the partially masked maps. Around
//! that core sit the supporting pieces: corpus statistics, corruption models
//! for conditioning maps, evaluation metrics, runnable verification targets,
//! and an ablation harness.

#![allow(clippy::needless_range_loop)]

pub mod ablate;
pub mod corrupt;
pub mod error;
pub mod fsx;
pub mod imagediff;
pub mod labeldiff;
pub mod labelmap;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod verify;

pub use error::{Error, Result};
