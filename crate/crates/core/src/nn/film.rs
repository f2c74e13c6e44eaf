//! Parameter injection: FiLM generators and the modulation sites they feed.

use aevit_tensor::{Float, Graph, ParamId, ParamStore, Var};
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Init, Mlp};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilmConfig {
    /// Width of the two hidden layers of every generator.
    pub hidden: usize,
    /// Fixed LayerNorm modulation strength.
    pub theta: f64,
    /// Bound on |η| for query/key/value modulation.
    pub eta_cap: f64,
    /// Initial η as a fraction of the cap.
    pub eta_init: f64,
    /// Init scale of the last layer of conv-site generators.
    pub conv_init_gain: f64,
}

impl Default for FilmConfig {
    fn default() -> Self {
        FilmConfig {
            hidden: 128,
            theta: 1e-3,
            eta_cap: 0.1,
            eta_init: 0.5,
            conv_init_gain: 0.1,
        }
    }
}

/// MLP `λ → hidden → hidden → 2·width`, split into `(α, β)`.
#[derive(Debug, Clone)]
pub struct FilmGenerator {
    pub mlp: Mlp,
    pub width: usize,
}

impl FilmGenerator {
    pub fn new(init: &mut Init, name: &str, n_params: usize, width: usize, hidden: usize, last_gain: f64) -> Result<Self> {
        Ok(FilmGenerator {
            mlp: Mlp::new(init, name, &[n_params, hidden, hidden, 2 * width], Activation::Silu, last_gain)?,
            width,
        })
    }

    /// `(α, β)`, each `[B, width]`, from normalized parameters `[B, P]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lam: Var) -> Result<(Var, Var)> {
        let out = self.mlp.forward(g, p, lam)?;
        let alpha = g.slice(out, 1, 0, self.width)?;
        let beta = g.slice(out, 1, self.width, self.width)?;
        Ok((alpha, beta))
    }
}

/// `h ← α ⊙ h + β` with `α, β: [N, C]` broadcast over the spatial axes of `h: [N, C, H, W]`.
pub fn film_conv<T: Float>(g: &mut Graph<T>, h: Var, alpha: Var, beta: Var) -> Result<Var> {
    let (n, c) = (g.shape(alpha)[0], g.shape(alpha)[1]);
    let a = g.reshape(alpha, &[n, c, 1, 1])?;
    let b = g.reshape(beta, &[n, c, 1, 1])?;
    let y = g.mul(h, a)?;
    Ok(g.add(y, b)?)
}

/// `x ← x ⊙ (1 + s·α) + s·β` for tokens `x: [N, T, D]` and `α, β: [N, D]`.
/// `s` is θ for LayerNorm sites and η for query/key/value sites.
pub fn film_tokens<T: Float>(g: &mut Graph<T>, x: Var, alpha: Var, beta: Var, strength: Strength) -> Result<Var> {
    let (n, d) = (g.shape(alpha)[0], g.shape(alpha)[1]);
    let a = g.reshape(alpha, &[n, 1, d])?;
    let b = g.reshape(beta, &[n, 1, d])?;
    let (sa, sb) = match strength {
        Strength::Fixed(s) => (g.scale(a, s)?, g.scale(b, s)?),
        Strength::Learned(eta) => (g.mul(a, eta)?, g.mul(b, eta)?),
    };
    let scale = g.add_scalar(sa, 1.0)?;
    let y = g.mul(x, scale)?;
    Ok(g.add(y, sb)?)
}

#[derive(Debug, Clone, Copy)]
pub enum Strength {
    Fixed(f64),
    /// A graph scalar of shape `[1]`.
    Learned(Var),
}

/// Learnable η = cap · tanh(raw), so |η| < cap for every raw value.
#[derive(Debug, Clone)]
pub struct BoundedScalar {
    pub raw: ParamId,
    pub cap: f64,
}

impl BoundedScalar {
    pub fn new(init: &mut Init, name: &str, cap: f64, fraction: f64) -> Result<Self> {
        let raw = fraction.clamp(-0.999_999, 0.999_999).atanh() as f32;
        Ok(BoundedScalar {
            raw: init.full(name, &[1], raw)?,
            cap,
        })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>) -> Result<Var> {
        let raw = g.param(p, self.raw);
        let t = g.tanh(raw)?;
        Ok(g.scale(t, self.cap)?)
    }

    pub fn value(&self, p: &ParamStore<f32>) -> f64 {
        self.cap * (p.get(self.raw).item() as f64).tanh()
    }

    /// Set η directly (|η| must stay below the cap).
    pub fn set(&self, p: &mut ParamStore<f32>, eta: f64) {
        let r = (eta / self.cap).clamp(-0.999_999, 0.999_999).atanh() as f32;
        p.get_mut(self.raw).data_mut()[0] = r;
    }
}
