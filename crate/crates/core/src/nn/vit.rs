//! Vision transformer over a spatial tensor: patch embedding, learnable
//! positional table, optional parameter token, pre-norm encoder layers with
//! optional LayerNorm and query/key/value modulation, and un-patching.

use aevit_tensor::{Float, Graph, ParamId, ParamStore, Var};
use serde::{Deserialize, Serialize};

use super::film::{film_tokens, BoundedScalar, FilmConfig, FilmGenerator, Strength};
use super::layers::{Activation, Conv, Init, LayerNorm, Linear, Mlp};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub patch: usize,
    pub emb: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            patch: 2,
            emb: 256,
            layers: 4,
            heads: 8,
            ff: 1024,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.emb == 0 || self.heads == 0 || self.ff == 0 {
            return Err(CoreError::config("transformer sizes must be positive"));
        }
        if !self.emb.is_multiple_of(self.heads) {
            return Err(CoreError::config(format!(
                "embedding {} is not divisible by {} heads",
                self.emb, self.heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if !height.is_multiple_of(self.patch) || !width.is_multiple_of(self.patch) {
            return Err(CoreError::config(format!(
                "{height}x{width} input is not divisible into {p}x{p} patches",
                p = self.patch
            )));
        }
        Ok((height / self.patch, width / self.patch))
    }
}

/// Which parameter-injection sites inside the transformer are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VitSites {
    pub layernorm: bool,
    pub qkv: bool,
    pub token: bool,
}

#[derive(Debug, Clone)]
pub struct QkvFilm {
    pub gen: FilmGenerator,
    pub eta: BoundedScalar,
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln_film: Option<(FilmGenerator, FilmGenerator)>,
    pub qkv_film: Option<QkvFilm>,
    pub heads: usize,
    pub act: Activation,
    pub theta: f64,
}

/// Per-layer modulation inputs, computed once per batch of parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct LayerConditioning {
    pub ln1: Option<(Var, Var)>,
    pub ln2: Option<(Var, Var)>,
    /// `(α, β, η)` for the fused `[Q | K | V]` projection.
    pub qkv: Option<(Var, Var, Var)>,
}

impl EncoderLayer {
    pub fn new(
        init: &mut Init,
        name: &str,
        cfg: &VitConfig,
        sites: VitSites,
        n_params: usize,
        film: &FilmConfig,
        act: Activation,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let d = cfg.emb;
        let ln_film = if sites.layernorm {
            Some((
                FilmGenerator::new(&mut s, "ln1_film", n_params, d, film.hidden, 0.0)?,
                FilmGenerator::new(&mut s, "ln2_film", n_params, d, film.hidden, 0.0)?,
            ))
        } else {
            None
        };
        let qkv_film = if sites.qkv {
            Some(QkvFilm {
                gen: FilmGenerator::new(&mut s, "qkv_film", n_params, 3 * d, film.hidden, 0.0)?,
                eta: BoundedScalar::new(&mut s, "eta", film.eta_cap, film.eta_init)?,
            })
        } else {
            None
        };
        Ok(EncoderLayer {
            ln1: LayerNorm::new(&mut s, "ln1", d)?,
            ln2: LayerNorm::new(&mut s, "ln2", d)?,
            qkv: Linear::new(&mut s, "qkv", d, 3 * d)?,
            proj: Linear::new(&mut s, "proj", d, d)?,
            ff1: Linear::new(&mut s, "ff1", d, cfg.ff)?,
            ff2: Linear::new(&mut s, "ff2", cfg.ff, d)?,
            ln_film,
            qkv_film,
            heads: cfg.heads,
            act,
            theta: film.theta,
        })
    }

    pub fn condition<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lam: Var) -> Result<LayerConditioning> {
        let mut c = LayerConditioning::default();
        if let Some((g1, g2)) = &self.ln_film {
            c.ln1 = Some(g1.forward(g, p, lam)?);
            c.ln2 = Some(g2.forward(g, p, lam)?);
        }
        if let Some(q) = &self.qkv_film {
            let (a, b) = q.gen.forward(g, p, lam)?;
            c.qkv = Some((a, b, q.eta.forward(g, p)?));
        }
        Ok(c)
    }

    /// One pre-norm layer on tokens `[B, T, D]`. When `probe` is given the
    /// attention weights `[B·heads, T, T]` are pushed onto it.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        cond: &LayerConditioning,
        probe: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let (b, t, d) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let (heads, dk) = (self.heads, d / self.heads);

        let mut h = self.ln1.forward(g, p, x)?;
        if let Some((a, be)) = cond.ln1 {
            h = film_tokens(g, h, a, be, Strength::Fixed(self.theta))?;
        }
        let mut qkv = self.qkv.forward(g, p, h)?;
        if let Some((a, be, eta)) = cond.qkv {
            qkv = film_tokens(g, qkv, a, be, Strength::Learned(eta))?;
        }
        // [B, T, 3, H, dk] → [3, B, H, T, dk]
        let qkv = g.reshape(qkv, &[b, t, 3, heads, dk])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
        let qkv = g.reshape(qkv, &[3, b * heads, t, dk])?;
        let part = |g: &mut Graph<T>, i: usize| -> Result<Var> {
            let s = g.slice(qkv, 0, i, 1)?;
            Ok(g.reshape(s, &[b * heads, t, dk])?)
        };
        let (q, k, v) = (part(g, 0)?, part(g, 1)?, part(g, 2)?);
        let scores = g.matmul_t(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let attn = g.softmax(scores)?;
        if let Some(probe) = probe {
            probe.push(attn);
        }
        let o = g.matmul(attn, v)?;
        let o = g.reshape(o, &[b, heads, t, dk])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[b, t, d])?;
        let o = self.proj.forward(g, p, o)?;
        let x = g.add(x, o)?;

        let mut h = self.ln2.forward(g, p, x)?;
        if let Some((a, be)) = cond.ln2 {
            h = film_tokens(g, h, a, be, Strength::Fixed(self.theta))?;
        }
        let h = self.ff1.forward(g, p, h)?;
        let h = self.act.apply(g, h)?;
        let h = self.ff2.forward(g, p, h)?;
        Ok(g.add(x, h)?)
    }
}

#[derive(Debug, Clone)]
pub struct Vit {
    pub cfg: VitConfig,
    pub in_channels: usize,
    pub out_channels: usize,
    pub grid: (usize, usize),
    pub embed: Conv,
    pub pos: ParamId,
    pub token: Option<Mlp>,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
    pub unembed: Linear,
}

#[derive(Debug, Clone, Default)]
pub struct VitConditioning {
    /// Parameter token `[B, 1, D]`.
    pub token: Option<Var>,
    pub layers: Vec<LayerConditioning>,
}

pub struct VitSpec<'a> {
    pub cfg: VitConfig,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub sites: VitSites,
    pub n_params: usize,
    pub film: &'a FilmConfig,
    pub act: Activation,
}

impl Vit {
    pub fn new(init: &mut Init, name: &str, spec: VitSpec) -> Result<Self> {
        let cfg = spec.cfg;
        cfg.validate()?;
        let grid = cfg.grid(spec.height, spec.width)?;
        let mut s = init.scope(name);
        let n_tokens = grid.0 * grid.1 + usize::from(spec.sites.token);
        let token = if spec.sites.token {
            Some(Mlp::new(
                &mut s,
                "param_token",
                &[spec.n_params, spec.film.hidden, cfg.emb],
                Activation::Silu,
                1.0,
            )?)
        } else {
            None
        };
        let layers = (0..cfg.layers)
            .map(|i| EncoderLayer::new(&mut s, &format!("layer{i}"), &cfg, spec.sites, spec.n_params, spec.film, spec.act))
            .collect::<Result<_>>()?;
        Ok(Vit {
            embed: Conv::new(&mut s, "patch_embed", spec.in_channels, cfg.emb, cfg.patch, cfg.patch, 0)?,
            pos: s.full("pos_embed", &[n_tokens, cfg.emb], 0.0)?,
            token,
            layers,
            norm: LayerNorm::new(&mut s, "norm", cfg.emb)?,
            unembed: Linear::new(&mut s, "unembed", cfg.emb, spec.out_channels * cfg.patch * cfg.patch)?,
            cfg,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            grid,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn n_tokens(&self) -> usize {
        self.n_patches() + usize::from(self.token.is_some())
    }

    pub fn condition<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lam: Var) -> Result<VitConditioning> {
        let token = match &self.token {
            Some(mlp) => {
                let t = mlp.forward(g, p, lam)?;
                let b = g.shape(t)[0];
                Some(g.reshape(t, &[b, 1, self.cfg.emb])?)
            }
            None => None,
        };
        let layers = self.layers.iter().map(|l| l.condition(g, p, lam)).collect::<Result<_>>()?;
        Ok(VitConditioning { token, layers })
    }

    /// `[B, C, H, W]` → patch tokens `[B, N, D]` via a stride-`patch` convolution.
    pub fn patchify<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (gh, gw) = self.cfg.grid(s[2], s[3])?;
        if (gh, gw) != self.grid || s[1] != self.in_channels {
            return Err(CoreError::Invalid(format!(
                "transformer expects [B, {}, {}, {}] input, got {s:?}",
                self.in_channels,
                self.grid.0 * self.cfg.patch,
                self.grid.1 * self.cfg.patch
            )));
        }
        let e = self.embed.forward(g, p, x)?;
        let e = g.reshape(e, &[s[0], self.cfg.emb, gh * gw])?;
        Ok(g.permute(e, &[0, 2, 1])?)
    }

    /// Patch tokens `[B, N, D]` → `[B, C_out, H, W]`.
    pub fn unpatchify<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, tokens: Var) -> Result<Var> {
        let b = g.shape(tokens)[0];
        let (gh, gw) = self.grid;
        let (c, ps) = (self.out_channels, self.cfg.patch);
        let y = self.unembed.forward(g, p, tokens)?;
        let y = g.reshape(y, &[b, gh, gw, c, ps, ps])?;
        let y = g.permute(y, &[0, 3, 1, 4, 2, 5])?;
        Ok(g.reshape(y, &[b, c, gh * ps, gw * ps])?)
    }

    /// Append the parameter token (when enabled) and add the positional table.
    pub fn embed_tokens<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, tokens: Var, cond: &VitConditioning) -> Result<Var> {
        let n = g.shape(tokens)[1];
        if n != self.n_patches() {
            return Err(CoreError::Invalid(format!(
                "positional table covers {} patches, got {n} tokens",
                self.n_patches()
            )));
        }
        let x = match (cond.token, &self.token) {
            (Some(t), Some(_)) => g.concat(&[tokens, t], 1)?,
            (None, None) => tokens,
            _ => return Err(CoreError::Invalid("parameter token conditioning missing".into())),
        };
        let pos = g.param(p, self.pos);
        Ok(g.add(x, pos)?)
    }

    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        cond: &VitConditioning,
        mut probe: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let tokens = self.patchify(g, p, x)?;
        let mut h = self.embed_tokens(g, p, tokens, cond)?;
        for (layer, c) in self.layers.iter().zip(&cond.layers) {
            h = layer.forward(g, p, h, c, probe.as_deref_mut())?;
        }
        let h = self.norm.forward(g, p, h)?;
        let h = if self.token.is_some() {
            g.slice(h, 1, 0, self.n_patches())?
        } else {
            h
        };
        self.unpatchify(g, p, h)
    }
}
