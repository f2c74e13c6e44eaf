//! The AE-ViT surrogate and the plain-ViT baseline behind one interface.

use aevit_tensor::{Float, Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::coords::{coordinate_channels, CoordConfig};
use crate::error::{CoreError, Result};
use crate::nn::autoencoder::{BlockConditioning, Decoder, Encoder, EncoderConfig};
use crate::nn::film::{BoundedScalar, FilmConfig};
use crate::nn::layers::{Activation, Init};
use crate::nn::vit::{Vit, VitConditioning, VitConfig, VitSites, VitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    AeVit,
    PlainVit,
}

/// The parameter-injection sites that ablations switch on and off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub film_autoencoder: bool,
    pub film_layernorm: bool,
    pub param_token: bool,
    pub film_qkv: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::all()
    }
}

impl Toggles {
    pub fn all() -> Self {
        Toggles {
            film_autoencoder: true,
            film_layernorm: true,
            param_token: true,
            film_qkv: true,
        }
    }

    pub fn none() -> Self {
        Toggles {
            film_autoencoder: false,
            film_layernorm: false,
            param_token: false,
            film_qkv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_params: usize,
    pub coords: CoordConfig,
    pub encoder: EncoderConfig,
    pub vit: VitConfig,
    pub film: FilmConfig,
    pub toggles: Toggles,
    pub block_activation: Activation,
    pub ff_activation: Activation,
    /// Predict the increment `φ(t+Δt) − φ(t)` instead of the next state.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::AeVit,
            channels: 1,
            height: 32,
            width: 32,
            n_params: 3,
            coords: CoordConfig { k: 4 },
            encoder: EncoderConfig::default(),
            vit: VitConfig::default(),
            film: FilmConfig::default(),
            toggles: Toggles::all(),
            block_activation: Activation::Silu,
            ff_activation: Activation::Gelu,
            residual: false,
        }
    }
}

impl ModelConfig {
    /// Small configuration for CPU-scale experiments: 8×8×16 latent,
    /// 16 tokens of width 64, two layers.
    pub fn desk() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                kernels: vec![8, 16, 16],
                strides: vec![2, 2, 1],
            },
            vit: VitConfig {
                patch: 2,
                emb: 64,
                layers: 2,
                heads: 4,
                ff: 256,
            },
            film: FilmConfig {
                hidden: 64,
                ..FilmConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    pub fn plain_vit(&self) -> Self {
        ModelConfig {
            architecture: Architecture::PlainVit,
            coords: CoordConfig { k: 0 },
            toggles: Toggles {
                param_token: true,
                ..Toggles::none()
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(CoreError::config("model needs positive channels, height and width"));
        }
        if self.n_params == 0 {
            return Err(CoreError::config("model needs at least one PDE parameter"));
        }
        self.vit.validate()?;
        match self.architecture {
            Architecture::AeVit => {
                self.encoder.validate()?;
                let (h, w) = self.encoder.latent_size(self.height, self.width)?;
                self.vit.grid(h, w)?;
            }
            Architecture::PlainVit => {
                let t = self.toggles;
                if self.coords.k != 0 || t.film_autoencoder || t.film_layernorm || t.film_qkv {
                    return Err(CoreError::config(
                        "plain-vit takes parameters only through the token; disable coordinates and FiLM",
                    ));
                }
                self.vit.grid(self.height, self.width)?;
            }
        }
        if !(self.film.eta_cap > 0.0) || self.film.eta_init.abs() >= 1.0 {
            return Err(CoreError::config("eta_cap must be positive and |eta_init| < 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: Option<Encoder>,
    pub decoder: Option<Decoder>,
    pub vit: Vit,
    coord_planes: Vec<f32>,
}

/// Everything derived from the parameter batch, reused across the steps of
/// a rollout window.
#[derive(Debug, Clone, Default)]
pub struct Conditioning {
    pub encoder: BlockConditioning,
    pub decoder: BlockConditioning,
    pub vit: VitConditioning,
    /// Coordinate channels `[B, 4k, H, W]`.
    pub coords: Option<Var>,
    /// Domain mask `[B, 1, H, W]` applied to every prediction.
    pub mask: Option<Var>,
}

impl Conditioning {
    fn vars_mut(&mut self) -> Vec<&mut Var> {
        let mut out: Vec<&mut Var> = Vec::new();
        for (a, b) in self.encoder.iter_mut().chain(self.decoder.iter_mut()).flatten() {
            out.push(a);
            out.push(b);
        }
        if let Some(t) = self.vit.token.as_mut() {
            out.push(t);
        }
        for l in &mut self.vit.layers {
            for (a, b) in l.ln1.iter_mut().chain(l.ln2.iter_mut()) {
                out.push(a);
                out.push(b);
            }
            if let Some((a, b, e)) = l.qkv.as_mut() {
                out.extend([a, b, e]);
            }
        }
        out.extend(self.coords.as_mut());
        out.extend(self.mask.as_mut());
        out
    }

    /// Copy the values into `to` as constant inputs (no gradient path back).
    pub fn detached<T: Float>(&self, from: &Graph<T>, to: &mut Graph<T>) -> Conditioning {
        let mut c = self.clone();
        for v in c.vars_mut() {
            *v = to.input(from.value(*v).clone());
        }
        c
    }
}

impl Model {
    /// Build the architecture and its freshly initialized parameters.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore<f32>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        let t = cfg.toggles;
        let conv_film = t.film_autoencoder.then_some((cfg.n_params, &cfg.film));
        let sites = VitSites {
            layernorm: t.film_layernorm,
            qkv: t.film_qkv,
            token: t.param_token,
        };
        let (encoder, decoder, vit) = match cfg.architecture {
            Architecture::AeVit => {
                let cin = cfg.channels + cfg.coords.channels();
                let enc = Encoder::new(&mut init, &cfg.encoder, cin, conv_film, cfg.block_activation)?;
                let (lh, lw) = cfg.encoder.latent_size(cfg.height, cfg.width)?;
                let cl = cfg.encoder.latent_channels();
                let vit = Vit::new(
                    &mut init,
                    "vit",
                    VitSpec {
                        cfg: cfg.vit,
                        in_channels: cl,
                        out_channels: cl,
                        height: lh,
                        width: lw,
                        sites,
                        n_params: cfg.n_params,
                        film: &cfg.film,
                        act: cfg.ff_activation,
                    },
                )?;
                let dec = Decoder::new(&mut init, &cfg.encoder, cfg.channels, conv_film, cfg.block_activation)?;
                (Some(enc), Some(dec), vit)
            }
            Architecture::PlainVit => {
                let vit = Vit::new(
                    &mut init,
                    "vit",
                    VitSpec {
                        cfg: cfg.vit,
                        in_channels: cfg.channels,
                        out_channels: cfg.channels,
                        height: cfg.height,
                        width: cfg.width,
                        sites,
                        n_params: cfg.n_params,
                        film: &cfg.film,
                        act: cfg.ff_activation,
                    },
                )?;
                (None, None, vit)
            }
        };
        let coord_planes = match cfg.architecture {
            Architecture::AeVit => coordinate_channels(cfg.coords, cfg.height, cfg.width),
            Architecture::PlainVit => Vec::new(),
        };
        let model = Model {
            cfg: cfg.clone(),
            encoder,
            decoder,
            vit,
            coord_planes,
        };
        Ok((model, store))
    }

    pub fn snapshot_shape(&self) -> [usize; 3] {
        [self.cfg.channels, self.cfg.height, self.cfg.width]
    }

    /// The bounded η scalars of all query/key/value modulation sites.
    pub fn etas(&self) -> Vec<&BoundedScalar> {
        self.vit.layers.iter().filter_map(|l| l.qkv_film.as_ref().map(|q| &q.eta)).collect()
    }

    /// Conditioning for normalized parameters `lam: [B, P]`.
    pub fn condition<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lam: Var) -> Result<Conditioning> {
        let shape = g.shape(lam).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.n_params {
            return Err(CoreError::Invalid(format!(
                "expected parameters [B, {}], got {shape:?}",
                self.cfg.n_params
            )));
        }
        let b = shape[0];
        let encoder = match &self.encoder {
            Some(e) => e.condition(g, p, lam)?,
            None => Vec::new(),
        };
        let decoder = match &self.decoder {
            Some(d) => d.condition(g, p, lam)?,
            None => Vec::new(),
        };
        let vit = self.vit.condition(g, p, lam)?;
        let coords = if self.coord_planes.is_empty() {
            None
        } else {
            let planes: Vec<T> = (0..b)
                .flat_map(|_| self.coord_planes.iter().map(|&v| T::lit(v as f64)))
                .collect();
            let k4 = self.cfg.coords.channels();
            Some(g.input(Tensor::new([b, k4, self.cfg.height, self.cfg.width], planes)?))
        };
        Ok(Conditioning {
            encoder,
            decoder,
            vit,
            coords,
            mask: None,
        })
    }

    /// One step `φ(t) → φ(t + Δt)` on normalized snapshots `[B, C, H, W]`.
    pub fn step<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, cond: &Conditioning) -> Result<Var> {
        self.step_probed(g, p, x, cond, None)
    }

    /// As [`Model::step`], collecting the attention weights of every layer.
    pub fn step_probed<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        cond: &Conditioning,
        probe: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let expect = self.snapshot_shape();
        if g.shape(x).len() != 4 || g.shape(x)[1..] != expect {
            return Err(CoreError::Invalid(format!(
                "expected snapshots [B, {}, {}, {}], got {:?}",
                expect[0],
                expect[1],
                expect[2],
                g.shape(x)
            )));
        }
        let mut y = match (&self.encoder, &self.decoder) {
            (Some(enc), Some(dec)) => {
                let input = match cond.coords {
                    Some(c) => g.concat(&[x, c], 1)?,
                    None => x,
                };
                let z = enc.forward(g, p, input, &cond.encoder)?;
                let z = self.vit.forward(g, p, z, &cond.vit, probe)?;
                dec.forward(g, p, z, &cond.decoder)?
            }
            _ => self.vit.forward(g, p, x, &cond.vit, probe)?,
        };
        if self.cfg.residual {
            y = g.add(x, y)?;
        }
        if let Some(m) = cond.mask {
            y = g.mul(y, m)?;
        }
        Ok(y)
    }

    /// Single forward pass outside of training.
    pub fn predict(&self, p: &ParamStore<f32>, x: &Tensor<f32>, lam: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let l = g.input(lam.clone());
        let cond = self.condition(&mut g, p, l)?;
        let xv = g.input(x.clone());
        let y = self.step(&mut g, p, xv, &cond)?;
        Ok(g.value(y).clone())
    }
}
