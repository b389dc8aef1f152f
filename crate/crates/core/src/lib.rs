//! Counterfactual explanations for video models via target-guided latent
//! diffusion, built against small trainable toy components.
//!
//! The pipeline: encode a factual video, noise it to depth `t_T`, run a
//! deterministic DDIM reverse loop that decodes the clean-latent estimate at
//! every step and pushes it toward a target prediction using (optionally
//! SmoothGrad-averaged) gradients of the target model, then optionally blend
//! the result with the factual video wherever it barely differs from an
//! unguided reference.

pub mod archive;
pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod export;
pub mod guidance;
pub mod metrics;
pub mod nn;
pub mod refine;
pub mod rng;
pub mod target;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
