//! Human-feedback efficient RL fine-tuning of a toy diffusion model.

pub mod autodiff;
pub mod ddpo;
pub mod diffusion;
pub mod error;
pub mod feedback;
pub mod nn;
pub mod noise_refine;
pub mod orchestrator;
pub mod representation;

pub use error::{HeroError, Result};
