use aevit_tensor::{par, Graph, ParamStore, Tensor};

use super::metrics::{channel_errors, column_stats, mean_rollout_error, relative_error};
use crate::data::{apply_mask, solve_adr, AdrParams, Normalizer, SolverConfig, TrajectoryDataset};
use crate::error::{CoreError, Result};
use crate::model::Model;

/// Initial state of one rollout, in physical units.
#[derive(Debug, Clone, Copy)]
pub struct Case<'a> {
    pub initial: &'a [f32],
    pub params: &'a [f64],
    pub mask: Option<&'a [f32]>,
}

/// Anything that maps `(φ(0), λ)` to a predicted trajectory.
pub trait Surrogate: Sync {
    /// The `n_steps` snapshots following `case.initial`, concatenated.
    fn rollout(&self, case: &Case, n_steps: usize) -> Result<Vec<f32>>;

    fn rollout_many(&self, cases: &[Case], n_steps: usize) -> Result<Vec<Vec<f32>>> {
        par::map_range(cases.len(), |i| self.rollout(&cases[i], n_steps))
            .into_iter()
            .collect()
    }
}

/// Predicts `φ(t) = φ(0)` for every step.
pub struct Persistence;

impl Surrogate for Persistence {
    fn rollout(&self, case: &Case, n_steps: usize) -> Result<Vec<f32>> {
        Ok(case.initial.repeat(n_steps))
    }
}

/// Reruns the ADR solver; exact on benchmark data generated with the same
/// solver settings.
pub struct SolverOracle {
    pub config: SolverConfig,
}

impl Surrogate for SolverOracle {
    fn rollout(&self, case: &Case, n_steps: usize) -> Result<Vec<f32>> {
        if case.initial.iter().any(|&v| v != 0.0) {
            return Err(CoreError::Invalid(
                "the solver oracle only starts from the benchmark's zero initial state".into(),
            ));
        }
        let [mu1, mu2, mu3] = case.params else {
            return Err(CoreError::Invalid(format!(
                "ADR takes 3 parameters, got {}",
                case.params.len()
            )));
        };
        let traj = solve_adr(AdrParams::new(*mu1, *mu2, *mu3)?, self.config, n_steps)?;
        Ok(traj[case.initial.len()..].to_vec())
    }
}

/// A trained network. States stay normalized between steps and are mapped
/// back to physical units for output.
pub struct ModelSurrogate<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore<f32>,
    pub normalizer: &'a Normalizer,
    /// Simulations advanced together in one batch.
    pub batch: usize,
}

impl ModelSurrogate<'_> {
    fn rollout_batch(&self, cases: &[Case], n_steps: usize) -> Result<Vec<Vec<f32>>> {
        let [c, h, w] = self.model.snapshot_shape();
        let (b, len) = (cases.len(), c * h * w);
        let mut x = Vec::with_capacity(b * len);
        let mut lam = Vec::new();
        for case in cases {
            if case.initial.len() != len {
                return Err(CoreError::Invalid(format!(
                    "initial state has {} values, model expects {len}",
                    case.initial.len()
                )));
            }
            let mut s = case.initial.to_vec();
            self.normalizer.normalize_field(&mut s, case.mask);
            x.extend(s);
            lam.extend(self.normalizer.normalize_params(case.params));
        }
        let mut root = Graph::new();
        let lv = root.input(Tensor::new([b, lam.len() / b.max(1)], lam)?);
        let mut cond = self.model.condition(&mut root, self.params, lv)?;
        if cases.iter().any(|c| c.mask.is_some()) {
            let m: Vec<f32> = cases
                .iter()
                .flat_map(|c| c.mask.map_or_else(|| vec![1.0; h * w], <[f32]>::to_vec))
                .collect();
            cond.mask = Some(root.input(Tensor::new([b, 1, h, w], m)?));
        }
        let mut state = Tensor::new([b, c, h, w], x)?;
        let mut out: Vec<Vec<f32>> = vec![Vec::with_capacity(n_steps * len); b];
        for _ in 0..n_steps {
            let mut g = Graph::new();
            let cd = cond.detached(&root, &mut g);
            let xv = g.input(state);
            let y = self.model.step(&mut g, self.params, xv, &cd)?;
            state = g.value(y).clone();
            if !state.all_finite() {
                return Err(CoreError::NonFinite("model rollout".into()));
            }
            for (i, snap) in state.data().chunks(len).enumerate() {
                let mut phys = snap.to_vec();
                self.normalizer.denormalize_field(&mut phys, cases[i].mask);
                out[i].extend(phys);
            }
        }
        Ok(out)
    }
}

impl Surrogate for ModelSurrogate<'_> {
    fn rollout(&self, case: &Case, n_steps: usize) -> Result<Vec<f32>> {
        Ok(self.rollout_batch(std::slice::from_ref(case), n_steps)?.remove(0))
    }

    fn rollout_many(&self, cases: &[Case], n_steps: usize) -> Result<Vec<Vec<f32>>> {
        let chunks: Vec<&[Case]> = cases.chunks(self.batch.max(1)).collect();
        let parts = par::map_range(chunks.len(), |i| self.rollout_batch(chunks[i], n_steps));
        let mut out = Vec::with_capacity(cases.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Predictions and per-step errors of a set of rollouts against reference data.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub sims: Vec<usize>,
    pub channels: usize,
    /// `[sim][step · C·H·W]`, steps `1..=n`.
    pub predictions: Vec<Vec<f32>>,
    /// `[sim][step][channel]`
    pub channel_errors: Vec<Vec<Vec<f64>>>,
    /// `[sim][step]`, all channels together.
    pub errors: Vec<Vec<f64>>,
}

impl RolloutResult {
    pub fn n_steps(&self) -> usize {
        self.errors.first().map_or(0, Vec::len)
    }

    /// Average over simulations of the time-averaged error up to `horizon`.
    pub fn mean_error(&self, horizon: usize) -> Result<f64> {
        let per_sim = self
            .errors
            .iter()
            .map(|e| mean_rollout_error(e, horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(per_sim.iter().sum::<f64>() / per_sim.len().max(1) as f64)
    }

    /// As [`RolloutResult::mean_error`], separately per channel.
    pub fn channel_mean_error(&self, horizon: usize) -> Result<Vec<f64>> {
        (0..self.channels)
            .map(|ch| {
                let per_sim = self
                    .channel_errors
                    .iter()
                    .map(|e| {
                        let series: Vec<f64> = e.iter().map(|s| s[ch]).collect();
                        mean_rollout_error(&series, horizon)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(per_sim.iter().sum::<f64>() / per_sim.len().max(1) as f64)
            })
            .collect()
    }

    /// Mean and standard deviation across simulations at every step.
    pub fn error_curve(&self) -> Vec<(f64, f64)> {
        column_stats(&self.errors)
    }
}

/// Roll `surrogate` out from step 0 of each listed simulation for `n_steps`
/// steps and compare with the stored trajectories.
pub fn evaluate(
    surrogate: &dyn Surrogate,
    data: &TrajectoryDataset,
    sims: &[usize],
    n_steps: usize,
) -> Result<RolloutResult> {
    if n_steps == 0 || n_steps > data.n_steps {
        return Err(CoreError::Invalid(format!(
            "rollout length {n_steps} outside 1..={}",
            data.n_steps
        )));
    }
    if let Some(&bad) = sims.iter().find(|&&s| s >= data.len()) {
        return Err(CoreError::Invalid(format!("simulation {bad} not in dataset of {}", data.len())));
    }
    let cases: Vec<Case> = sims
        .iter()
        .map(|&s| Case {
            initial: data.snapshot(s, 0),
            params: &data.sims[s].params,
            mask: data.sims[s].mask.as_deref(),
        })
        .collect();
    let predictions = surrogate.rollout_many(&cases, n_steps)?;
    let len = data.snapshot_len();
    let mut channel_errs = Vec::with_capacity(sims.len());
    let mut errors = Vec::with_capacity(sims.len());
    for (&s, pred) in sims.iter().zip(&predictions) {
        if pred.len() != n_steps * len {
            return Err(CoreError::Invalid(format!(
                "surrogate returned {} values for {n_steps} steps of {len}",
                pred.len()
            )));
        }
        let mut ce = Vec::with_capacity(n_steps);
        let mut te = Vec::with_capacity(n_steps);
        for (k, p) in pred.chunks(len).enumerate() {
            let mut p = p.to_vec();
            if let Some(m) = &data.sims[s].mask {
                apply_mask(&mut p, m);
            }
            let truth = data.snapshot(s, k + 1);
            ce.push(channel_errors(&p, truth, data.channels));
            te.push(relative_error(&p, truth));
        }
        channel_errs.push(ce);
        errors.push(te);
    }
    Ok(RolloutResult {
        sims: sims.to_vec(),
        channels: data.channels,
        predictions,
        channel_errors: channel_errs,
        errors,
    })
}
