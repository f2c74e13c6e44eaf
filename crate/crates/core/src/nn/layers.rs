use aevit_tensor::{Float, Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Gelu,
    Tanh,
}

impl Activation {
    pub fn apply<T: Float>(self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Silu => g.silu(x)?,
            Activation::Gelu => g.gelu(x)?,
            Activation::Tanh => g.tanh(x)?,
        })
    }
}

/// Registers named parameters. Every tensor draws from its own stream
/// keyed by `(seed, name)`, so a parameter's initial value does not depend
/// on which other parameters exist.
pub struct Init<'a> {
    pub store: &'a mut ParamStore<f32>,
    seed: u64,
    prefix: String,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        Init {
            store,
            seed,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Init<'_> {
        Init {
            prefix: self.name(name),
            seed: self.seed,
            store: self.store,
        }
    }

    fn name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let full = self.name(name);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(&full));
        let t = Tensor::from_fn(shape.to_vec(), |_| {
            if bound > 0.0 {
                rng.gen_range(-bound..bound) as f32
            } else {
                0.0
            }
        });
        Ok(self.store.add(full, t)?)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], v: f32) -> Result<ParamId> {
        let full = self.name(name);
        Ok(self.store.add(full, Tensor::full(shape.to_vec(), v))?)
    }
}

/// `y = x W + b` over the last axis; `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, din: usize, dout: usize) -> Result<Self> {
        Self::scaled(init, name, din, dout, 1.0)
    }

    /// Default uniform init scaled by `gain`; `gain = 0` gives an exact zero map.
    pub fn scaled(init: &mut Init, name: &str, din: usize, dout: usize, gain: f64) -> Result<Self> {
        let mut s = init.scope(name);
        let bound = gain / (din as f64).sqrt();
        Ok(Linear {
            w: s.uniform("weight", &[din, dout], bound)?,
            b: s.uniform("bias", &[dout], bound)?,
            din,
            dout,
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }
}

/// Fully connected stack with an activation between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`; the last layer's init is scaled by `last_gain`.
    pub fn new(init: &mut Init, name: &str, widths: &[usize], act: Activation, last_gain: f64) -> Result<Self> {
        let mut s = init.scope(name);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { last_gain } else { 1.0 };
                Linear::scaled(&mut s, &format!("fc{i}"), widths[i], widths[i + 1], gain)
            })
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, act })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, p, x)?;
            if i + 1 < self.layers.len() {
                x = self.act.apply(g, x)?;
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Ok(Conv {
            w: s.uniform("weight", &[cout, cin, k, k], bound)?,
            b: s.uniform("bias", &[cout], bound)?,
            stride,
            pad,
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        Ok(g.conv2d(x, w, Some(b), self.stride, self.pad)?)
    }
}

/// Transposed convolution; weight is `[cin, cout, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let bound = 1.0 / ((cout * k * k) as f64).sqrt();
        Ok(ConvTranspose {
            w: s.uniform("weight", &[cin, cout, k, k], bound)?,
            b: s.uniform("bias", &[cout], bound)?,
            stride,
            pad,
            out_pad,
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        Ok(g.conv_transpose2d(x, w, Some(b), self.stride, self.pad, self.out_pad)?)
    }
}

/// Either a strided convolution (downsampling or same size) or a
/// transposed one (upsampling).
#[derive(Debug, Clone)]
pub enum Resample {
    Down(Conv),
    Up(ConvTranspose),
}

impl Resample {
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            Resample::Down(c) => c.forward(g, p, x),
            Resample::Up(c) => c.forward(g, p, x),
        }
    }
}

/// `min(32, C/4)` groups, lowered to the nearest divisor of `C` (at least 1).
pub fn default_groups(channels: usize) -> usize {
    let mut g = (channels / 4).clamp(1, 32);
    while !channels.is_multiple_of(g) {
        g -= 1;
    }
    g
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub channels: usize,
}

impl GroupNorm {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(GroupNorm {
            gamma: s.full("weight", &[channels], 1.0)?,
            beta: s.full("bias", &[channels], 0.0)?,
            groups: default_groups(channels),
            channels,
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = g.group_norm(x, self.groups, NORM_EPS)?;
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        let gamma = g.reshape(gamma, &[1, self.channels, 1, 1])?;
        let beta = g.reshape(beta, &[1, self.channels, 1, 1])?;
        let y = g.mul(y, gamma)?;
        Ok(g.add(y, beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(LayerNorm {
            gamma: s.full("weight", &[dim], 1.0)?,
            beta: s.full("bias", &[dim], 0.0)?,
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = g.layer_norm(x, NORM_EPS)?;
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        let y = g.mul(y, gamma)?;
        Ok(g.add(y, beta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_rule() {
        assert_eq!(default_groups(64), 16);
        assert_eq!(default_groups(256), 32);
        assert_eq!(default_groups(8), 2);
        assert_eq!(default_groups(2), 1);
        assert_eq!(default_groups(36), 9);
        assert_eq!(default_groups(132), 22);
    }

    #[test]
    fn init_is_keyed_by_name() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        {
            let mut ia = Init::new(&mut a, 7);
            ia.uniform("x", &[4], 1.0).unwrap();
            ia.uniform("y", &[4], 1.0).unwrap();
        }
        Init::new(&mut b, 7).uniform("y", &[4], 1.0).unwrap();
        assert_eq!(a.by_name("y").unwrap(), b.by_name("y").unwrap());
        assert_ne!(a.by_name("x").unwrap(), a.by_name("y").unwrap());
    }
}
