//! Parametric PDE surrogate: a FiLM-conditioned convolutional autoencoder
//! around a parameter-modulated vision transformer, trained autoregressively
//! with scheduled sampling.

pub mod checkpoint;
pub mod config;
pub mod coords;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{CoreError, Result};
pub use model::{Architecture, Conditioning, Model, ModelConfig, Toggles};
