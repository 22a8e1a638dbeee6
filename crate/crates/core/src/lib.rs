//! Desk-scale learn-compare-critique distillation: tabular autoregressive
//! teachers with scheduled concept drift, windowed drift detection,
//! KL-barycenter supervised pre-distillation, self-distilled consensus
//! trajectories, and preference optimization against weighted teacher
//! negatives.

pub mod apo;
pub mod core;
pub mod distill;
pub mod drift;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod teachers;

pub use crate::error::{Error, Result};
