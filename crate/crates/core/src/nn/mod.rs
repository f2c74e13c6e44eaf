//! Network building blocks.

pub mod autoencoder;
pub mod film;
pub mod layers;
pub mod vit;
