//! Sound morphing for text-to-audio diffusion by intercepting, interpolating
//! and re-injecting cross-attention components.
//!
//! The usual flow is:
//!
//! 1. [`capture::record_pair`] generates the source and target prompts and
//!    records Q, K and V at every cross-attention site and timestep.
//! 2. [`morph::run_morph`] regenerates from the empty prompt with the same
//!    seed, replacing each site's components with their interpolation.
//! 3. [`evaluation`] sweeps alpha and scores how linearly the result moves
//!    from source to target.
//!
//! [`backend::ToyBackend`] is a deterministic stand-in model; real models are
//! reached through [`backend::DiffusionBackend`] adapters.

pub mod audio;
pub mod backend;
pub mod baselines;
pub mod capture;
pub mod error;
pub mod evaluation;
pub mod morph;
pub mod tensor;

pub use audio::AudioClip;
pub use backend::{DiffusionBackend, GenerationRequest, ToyBackend};
pub use capture::{AttentionCapture, AttentionSite, CaptureSession};
pub use error::{Error, Result};
pub use morph::{ComponentMask, MorphConfig};
pub use tensor::Tensor;
