#![allow(dead_code)]

use aevit_core::model::{ModelConfig, Toggles};
use aevit_core::nn::autoencoder::EncoderConfig;
use aevit_core::nn::film::FilmConfig;
use aevit_core::nn::vit::VitConfig;
use aevit_core::coords::CoordConfig;
use aevit_tensor::{Float, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-1.0..1.0)))
}

/// 8×8 single-channel model small enough for finite differences.
pub fn tiny_config(toggles: Toggles) -> ModelConfig {
    ModelConfig {
        height: 8,
        width: 8,
        coords: CoordConfig { k: 2 },
        encoder: EncoderConfig {
            kernels: vec![4, 8],
            strides: vec![2, 1],
        },
        vit: VitConfig {
            patch: 2,
            emb: 8,
            layers: 2,
            heads: 2,
            ff: 16,
        },
        film: FilmConfig {
            hidden: 8,
            ..FilmConfig::default()
        },
        toggles,
        ..ModelConfig::default()
    }
}

/// Add uniform noise of size `scale` to every parameter, so that zero-initialized
/// generators and tables take part in the computation.
pub fn jitter(store: &mut ParamStore<f32>, scale: f64, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += (r.gen_range(-1.0..1.0) * scale) as f32;
        }
    }
}
