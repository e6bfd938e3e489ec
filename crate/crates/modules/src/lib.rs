//! The four generative modules of the reference pipeline: an image VAE, a
//! Gaussian mixture over its latent space, a topic model over recognized
//! words and a syllable speech-recognition simulator.

pub mod asr;
pub mod error;
pub mod gmm;
pub mod lda;
pub mod vae;

pub use error::{ModuleError, Result};
