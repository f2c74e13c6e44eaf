//! Fully convolutional encoder/decoder built from residual blocks with an
//! optional FiLM site after the first convolution of each block.

use aevit_tensor::{Float, Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use super::film::{film_conv, FilmConfig, FilmGenerator};
use super::layers::{Activation, Conv, ConvTranspose, GroupNorm, Init, Resample};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kernels: vec![32, 64, 64, 128, 256],
            strides: vec![1, 2, 1, 1, 1],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() || self.kernels.len() != self.strides.len() {
            return Err(CoreError::config(format!(
                "encoder needs matching non-empty kernel and stride lists, got {} and {}",
                self.kernels.len(),
                self.strides.len()
            )));
        }
        if self.kernels.contains(&0) || self.strides.contains(&0) {
            return Err(CoreError::config("encoder kernels and strides must be positive"));
        }
        Ok(())
    }

    pub fn downsample(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn latent_channels(&self) -> usize {
        *self.kernels.last().unwrap()
    }

    pub fn latent_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let d = self.downsample();
        if !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(CoreError::config(format!(
                "input {height}x{width} is not divisible by the encoder stride product {d}"
            )));
        }
        Ok((height / d, width / d))
    }
}

/// conv → GroupNorm → FiLM → act → conv → GroupNorm, plus a skip path
/// (identity, or a projection when channels or resolution change).
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Resample,
    pub gn1: GroupNorm,
    pub film: Option<FilmGenerator>,
    pub conv2: Conv,
    pub gn2: GroupNorm,
    pub skip: Option<Resample>,
    pub act: Activation,
}

pub struct BlockSpec {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub upsample: bool,
}

impl ResBlock {
    pub fn new(
        init: &mut Init,
        name: &str,
        spec: BlockSpec,
        film: Option<(usize, &FilmConfig)>,
        act: Activation,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let BlockSpec { cin, cout, stride, upsample } = spec;
        let up = upsample && stride > 1;
        let conv1 = if up {
            Resample::Up(ConvTranspose::new(&mut s, "conv1", cin, cout, 3, stride, 1, stride - 1)?)
        } else {
            Resample::Down(Conv::new(&mut s, "conv1", cin, cout, 3, stride, 1)?)
        };
        let skip = if cin == cout && stride == 1 {
            None
        } else if up {
            Some(Resample::Up(ConvTranspose::new(&mut s, "skip", cin, cout, stride, stride, 0, 0)?))
        } else {
            Some(Resample::Down(Conv::new(&mut s, "skip", cin, cout, 1, stride, 0)?))
        };
        let film = match film {
            Some((n_params, fc)) => Some(FilmGenerator::new(
                &mut s,
                "film",
                n_params,
                cout,
                fc.hidden,
                fc.conv_init_gain,
            )?),
            None => None,
        };
        Ok(ResBlock {
            conv1,
            gn1: GroupNorm::new(&mut s, "norm1", cout)?,
            film,
            conv2: Conv::new(&mut s, "conv2", cout, cout, 3, 1, 1)?,
            gn2: GroupNorm::new(&mut s, "norm2", cout)?,
            skip,
            act,
        })
    }

    /// Channel scales `1 + a(λ)` and shifts `b(λ)`, each `[B, C]`.
    pub fn condition<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lam: Var) -> Result<Option<(Var, Var)>> {
        match &self.film {
            Some(gen) => {
                let (a, b) = gen.forward(g, p, lam)?;
                Ok(Some((g.add_scalar(a, 1.0)?, b)))
            }
            None => Ok(None),
        }
    }

    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        film: Option<(Var, Var)>,
    ) -> Result<Var> {
        let mut h = self.conv1.forward(g, p, x)?;
        h = self.gn1.forward(g, p, h)?;
        if let Some((alpha, beta)) = film {
            h = film_conv(g, h, alpha, beta)?;
        }
        h = self.act.apply(g, h)?;
        h = self.conv2.forward(g, p, h)?;
        h = self.gn2.forward(g, p, h)?;
        let skip = match &self.skip {
            Some(s) => s.forward(g, p, x)?,
            None => x,
        };
        Ok(g.add(h, skip)?)
    }
}

pub type BlockConditioning = Vec<Option<(Var, Var)>>;

#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<ResBlock>,
}

impl Encoder {
    pub fn new(
        init: &mut Init,
        cfg: &EncoderConfig,
        in_channels: usize,
        film: Option<(usize, &FilmConfig)>,
        act: Activation,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut s = init.scope("encoder");
        let mut cin = in_channels;
        let mut blocks = Vec::new();
        for (i, (&k, &st)) in cfg.kernels.iter().zip(&cfg.strides).enumerate() {
            let spec = BlockSpec {
                cin,
                cout: k,
                stride: st,
                upsample: false,
            };
            blocks.push(ResBlock::new(&mut s, &format!("block{i}"), spec, film, act)?);
            cin = k;
        }
        Ok(Encoder { blocks })
    }

    pub fn condition<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lam: Var) -> Result<BlockConditioning> {
        self.blocks.iter().map(|b| b.condition(g, p, lam)).collect()
    }

    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        mut x: Var,
        cond: &BlockConditioning,
    ) -> Result<Var> {
        for (b, c) in self.blocks.iter().zip(cond) {
            x = b.forward(g, p, x, *c)?;
        }
        Ok(x)
    }
}

/// Mirror of the encoder: blocks in reverse order with transposed
/// convolutions where the encoder downsampled, then a plain 3×3
/// convolution to the solution channels.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub blocks: Vec<ResBlock>,
    pub out: Conv,
}

impl Decoder {
    pub fn new(
        init: &mut Init,
        cfg: &EncoderConfig,
        out_channels: usize,
        film: Option<(usize, &FilmConfig)>,
        act: Activation,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut s = init.scope("decoder");
        let n = cfg.kernels.len();
        let mut blocks = Vec::new();
        for i in (0..n).rev() {
            let cout = if i == 0 { cfg.kernels[0] } else { cfg.kernels[i - 1] };
            let spec = BlockSpec {
                cin: cfg.kernels[i],
                cout,
                stride: cfg.strides[i],
                upsample: true,
            };
            blocks.push(ResBlock::new(&mut s, &format!("block{}", n - 1 - i), spec, film, act)?);
        }
        let out = Conv::new(&mut s, "out", cfg.kernels[0], out_channels, 3, 1, 1)?;
        Ok(Decoder { blocks, out })
    }

    pub fn condition<T: Float>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lam: Var) -> Result<BlockConditioning> {
        self.blocks.iter().map(|b| b.condition(g, p, lam)).collect()
    }

    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        mut x: Var,
        cond: &BlockConditioning,
    ) -> Result<Var> {
        for (b, c) in self.blocks.iter().zip(cond) {
            x = b.forward(g, p, x, *c)?;
        }
        self.out.forward(g, p, x)
    }
}
