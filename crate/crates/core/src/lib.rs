//! Editing of density-based topology-optimized structures with a diffusion
//! prior: SIMP solver, morphology, warps, denoiser and edit operators.

pub mod diffusion;
pub mod edit;
pub mod error;
pub mod eval;
pub mod fem;
pub mod field;
pub mod io;
pub mod morphology;
pub mod problem;
pub mod rng;
pub mod warp;

pub use error::{Error, Result};
pub use field::{DensityField, Grid, Latent, Mask};
pub use problem::{Load, ProblemSpec, Support};
