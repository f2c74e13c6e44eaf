//! Training windows and the scheduled-sampling rollout loss.

use aevit_tensor::{Float, Graph, Tensor, Var};
use rand::Rng;

use crate::data::{Normalizer, TrajectoryDataset};
use crate::error::{CoreError, Result};

/// `window + 1` consecutive normalized snapshots per batch element.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    /// `window + 1` tensors `[B, C, H, W]`.
    pub snapshots: Vec<Tensor<f32>>,
    /// Normalized parameters `[B, P]`.
    pub params: Tensor<f32>,
    /// `[B, 1, H, W]` for masked data.
    pub mask: Option<Tensor<f32>>,
}

/// Uniform sampling (with replacement) over every window that fits.
pub struct WindowSampler<'a> {
    data: &'a TrajectoryDataset,
    lam: Vec<Vec<f32>>,
    windows: Vec<(usize, usize)>,
    window: usize,
}

impl<'a> WindowSampler<'a> {
    /// `data` must already be normalized; `normalizer` maps its parameters.
    pub fn new(data: &'a TrajectoryDataset, normalizer: &Normalizer, window: usize) -> Result<Self> {
        let windows = data.windows(window + 1);
        if window == 0 || windows.is_empty() {
            return Err(CoreError::Invalid(format!(
                "no window of {} snapshots fits trajectories of {} snapshots",
                window + 1,
                data.n_snapshots()
            )));
        }
        let lam = data.sims.iter().map(|s| normalizer.normalize_params(&s.params)).collect();
        Ok(WindowSampler {
            data,
            lam,
            windows,
            window,
        })
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<WindowBatch> {
        let picks: Vec<(usize, usize)> = (0..batch)
            .map(|_| self.windows[rng.gen_range(0..self.windows.len())])
            .collect();
        let d = self.data;
        let shape = [batch, d.channels, d.height, d.width];
        let snapshots = (0..=self.window)
            .map(|k| {
                let data = picks.iter().flat_map(|&(s, t)| d.snapshot(s, t + k).iter().copied()).collect();
                Tensor::new(shape, data)
            })
            .collect::<aevit_tensor::Result<Vec<_>>>()?;
        let params = Tensor::new(
            [batch, d.n_params()],
            picks.iter().flat_map(|&(s, _)| self.lam[s].iter().copied()).collect(),
        )?;
        let mask = if d.has_mask() {
            let hw = d.height * d.width;
            let m = picks
                .iter()
                .flat_map(|&(s, _)| d.sims[s].mask.clone().unwrap_or_else(|| vec![1.0; hw]))
                .collect();
            Some(Tensor::new([batch, 1, d.height, d.width], m)?)
        } else {
            None
        };
        Ok(WindowBatch {
            snapshots,
            params,
            mask,
        })
    }
}

/// One Bernoulli(p) draw per batch element: `true` feeds the ground truth.
pub fn teacher_draws<R: Rng + ?Sized>(rng: &mut R, p: f64, batch: usize) -> Vec<bool> {
    (0..batch).map(|_| rng.gen_bool(p.clamp(0.0, 1.0))).collect()
}

/// Mean over the window of per-step MSEs. `truth` holds `window + 1`
/// snapshots; the first prediction always starts from `truth[0]`, and
/// `teacher[k - 1][b]` decides whether step `k + 1` of element `b` starts
/// from `truth[k]` or from the previous prediction. `step(g, x, k)` is the
/// model applied at step `k ≥ 1`. Returns the loss and the predictions.
pub fn window_loss<T: Float>(
    g: &mut Graph<T>,
    truth: &[Var],
    teacher: &[Vec<bool>],
    mut step: impl FnMut(&mut Graph<T>, Var, usize) -> Result<Var>,
) -> Result<(Var, Vec<Var>)> {
    let window = truth.len().saturating_sub(1);
    if window == 0 || teacher.len() + 1 < window {
        return Err(CoreError::Invalid(format!(
            "window of {} snapshots needs {} teacher-forcing draws, got {}",
            truth.len(),
            window.saturating_sub(1),
            teacher.len()
        )));
    }
    let mut preds = Vec::with_capacity(window);
    let mut total: Option<Var> = None;
    let mut input = truth[0];
    for k in 1..=window {
        let y = step(g, input, k)?;
        let l = g.mse(y, truth[k])?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
        preds.push(y);
        if k < window {
            input = mix(g, truth[k], y, &teacher[k - 1])?;
        }
    }
    let loss = g.scale(total.unwrap(), 1.0 / window as f64)?;
    Ok((loss, preds))
}

/// Per batch element: `truth` where `use_truth`, else `pred`.
fn mix<T: Float>(g: &mut Graph<T>, truth: Var, pred: Var, use_truth: &[bool]) -> Result<Var> {
    if use_truth.iter().all(|&t| t) {
        return Ok(truth);
    }
    if use_truth.iter().all(|&t| !t) {
        return Ok(pred);
    }
    let b = use_truth.len();
    let m: Vec<T> = use_truth.iter().map(|&t| if t { T::one() } else { T::zero() }).collect();
    let keep = g.input(Tensor::new([b, 1, 1, 1], m.clone())?);
    let flip = g.input(Tensor::new([b, 1, 1, 1], m.iter().map(|&v| T::one() - v).collect())?);
    let a = g.mul(truth, keep)?;
    let c = g.mul(pred, flip)?;
    Ok(g.add(a, c)?)
}
