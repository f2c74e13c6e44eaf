//! The training loop: scheduled sampling over windows of the training split,
//! AdamW with a warmup/plateau/cosine learning rate, periodic validation
//! rollouts and best-parameter tracking.

use aevit_tensor::{Graph, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{teacher_draws, window_loss, WindowSampler};
use super::optim::{clip_gradients, AdamConfig, AdamW};
use super::schedule::{LrSchedule, SamplingSchedule};
use crate::data::{Normalizer, TrajectoryDataset};
use crate::error::{CoreError, Result};
use crate::eval::{evaluate, ModelSurrogate};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total optimizer steps.
    pub steps: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// Prediction steps per training window.
    pub window: usize,
    /// Global gradient-norm limit.
    pub clip: f64,
    pub seed: u64,
    pub valid_every: usize,
    /// Validation rollout length; the validation trajectories' length if unset.
    pub valid_horizon: Option<usize>,
    /// Cap on validation simulations; all if unset.
    pub valid_sims: Option<usize>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 10_000,
            lr: 3e-4,
            weight_decay: 1e-4,
            batch: 16,
            window: 4,
            clip: 1.0,
            seed: 0,
            valid_every: 500,
            valid_horizon: None,
            valid_sims: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.steps == 0 || self.batch == 0 || self.window == 0 || self.valid_every == 0 {
            return bad("steps, batch, window and valid_every must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip > 0.0) {
            return bad("weight_decay must be non-negative and clip positive".into());
        }
        SamplingSchedule::new(self.steps)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    /// Probability of feeding the ground truth.
    pub teacher_prob: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidRecord {
    /// Optimizer steps taken when validated.
    pub step: usize,
    /// Mean relative rollout error; infinite if the rollout diverged.
    #[serde(with = "any_f64")]
    pub error: f64,
}

/// JSON has no infinities; those are written as strings.
mod any_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Everything that changes during training. The random stream of a step is
/// derived from `(seed, step)`, so this is all a resume needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub params: ParamStore<f32>,
    pub optim: AdamW,
    pub best: Option<(ValidRecord, ParamStore<f32>)>,
    pub history: Vec<StepRecord>,
    pub valid: Vec<ValidRecord>,
}

impl TrainState {
    pub fn new(params: ParamStore<f32>, cfg: &TrainConfig) -> Self {
        let optim = AdamW::new(cfg.adam(), &params);
        TrainState {
            step: 0,
            params,
            optim,
            best: None,
            history: Vec::new(),
            valid: Vec::new(),
        }
    }

    /// Best validated parameters, or the current ones.
    pub fn best_params(&self) -> &ParamStore<f32> {
        self.best.as_ref().map_or(&self.params, |(_, p)| p)
    }
}

/// What the hook passed to [`Trainer::run`] is told about.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Step(StepRecord),
    Valid(ValidRecord),
}

pub struct Trainer<'a> {
    pub model: &'a Model,
    pub cfg: TrainConfig,
    pub normalizer: Normalizer,
    train: TrajectoryDataset,
    valid: &'a TrajectoryDataset,
    lr: LrSchedule,
    sampling: SamplingSchedule,
}

impl<'a> Trainer<'a> {
    /// `train` and `valid` are in physical units; statistics are fitted on `train`.
    pub fn new(
        model: &'a Model,
        cfg: TrainConfig,
        train: &TrajectoryDataset,
        valid: &'a TrajectoryDataset,
    ) -> Result<Self> {
        let normalizer = Normalizer::fit(train)?;
        Self::with_normalizer(model, cfg, normalizer, train, valid)
    }

    pub fn with_normalizer(
        model: &'a Model,
        cfg: TrainConfig,
        normalizer: Normalizer,
        train: &TrajectoryDataset,
        valid: &'a TrajectoryDataset,
    ) -> Result<Self> {
        cfg.validate()?;
        let [c, h, w] = model.snapshot_shape();
        for ds in [train, valid] {
            if [ds.channels, ds.height, ds.width] != [c, h, w] || ds.n_params() != model.cfg.n_params {
                return Err(CoreError::Invalid(format!(
                    "{} split is {}x{}x{} with {} parameters, model expects {c}x{h}x{w} with {}",
                    ds.split,
                    ds.channels,
                    ds.height,
                    ds.width,
                    ds.n_params(),
                    model.cfg.n_params
                )));
            }
        }
        let train = normalizer.normalize_dataset(train)?;
        WindowSampler::new(&train, &normalizer, cfg.window)?;
        Ok(Trainer {
            model,
            lr: LrSchedule::new(cfg.lr, cfg.steps),
            sampling: SamplingSchedule::new(cfg.steps)?,
            cfg,
            normalizer,
            train,
            valid,
        })
    }

    pub fn lr_schedule(&self) -> &LrSchedule {
        &self.lr
    }

    pub fn sampling_schedule(&self) -> &SamplingSchedule {
        &self.sampling
    }

    /// Random stream for optimizer step `step`.
    pub fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64);
        rng
    }

    /// One optimizer step.
    pub fn step(&self, state: &mut TrainState) -> Result<StepRecord> {
        let step = state.step;
        let mut rng = self.step_rng(step);
        let sampler = WindowSampler::new(&self.train, &self.normalizer, self.cfg.window)?;
        let batch = sampler.sample(&mut rng, self.cfg.batch)?;
        let p = self.sampling.prob(step);
        let teacher: Vec<Vec<bool>> = (1..self.cfg.window)
            .map(|_| teacher_draws(&mut rng, p, self.cfg.batch))
            .collect();
        let lr = self.lr.at(step);

        let mut g = Graph::new();
        let lam = g.input(batch.params);
        let mut cond = self.model.condition(&mut g, &state.params, lam)?;
        cond.mask = batch.mask.map(|m| g.input(m));
        let truth: Vec<Var> = batch.snapshots.into_iter().map(|t| g.input(t)).collect();
        let params = &state.params;
        let (loss, _) = window_loss(&mut g, &truth, &teacher, |g, x, _| {
            self.model.step(g, params, x, &cond)
        })?;
        let loss_value = g.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(CoreError::NonFiniteLoss { step, lr });
        }
        let mut grads = g.backward(loss)?.params(&state.params);
        let grad_norm = clip_gradients(&mut grads, self.cfg.clip);
        if !grad_norm.is_finite() {
            return Err(CoreError::NonFiniteLoss { step, lr });
        }
        state.optim.step(&mut state.params, &grads, lr)?;
        state.step += 1;
        let rec = StepRecord {
            step,
            loss: loss_value,
            lr,
            teacher_prob: p,
            grad_norm,
        };
        state.history.push(rec);
        Ok(rec)
    }

    /// Mean relative error of rollouts from step 0 of the validation
    /// simulations, with `params`.
    pub fn validation_error(&self, params: &ParamStore<f32>) -> Result<f64> {
        let horizon = self.cfg.valid_horizon.unwrap_or(self.valid.n_steps);
        let n = self.cfg.valid_sims.map_or(self.valid.len(), |k| k.min(self.valid.len()));
        let sims: Vec<usize> = (0..n).collect();
        let surrogate = ModelSurrogate {
            model: self.model,
            params,
            normalizer: &self.normalizer,
            batch: self.cfg.batch,
        };
        match evaluate(&surrogate, self.valid, &sims, horizon) {
            Ok(r) => r.mean_error(horizon),
            Err(CoreError::NonFinite(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Validate the current parameters and keep them if they are the best so far.
    pub fn validate(&self, state: &mut TrainState) -> Result<ValidRecord> {
        let error = self.validation_error(&state.params)?;
        let rec = ValidRecord { step: state.step, error };
        state.valid.push(rec);
        if state.best.as_ref().is_none_or(|(b, _)| error < b.error) {
            state.best = Some((rec, state.params.clone()));
        }
        Ok(rec)
    }

    /// Train until `cfg.steps`, validating every `valid_every` steps and at
    /// the end. `hook` sees every event after the state is updated.
    pub fn run(
        &self,
        state: &mut TrainState,
        mut hook: impl FnMut(&TrainState, Event) -> Result<()>,
    ) -> Result<()> {
        while state.step < self.cfg.steps {
            let rec = self.step(state)?;
            if state.step.is_multiple_of(self.cfg.log_every) || state.step == 1 {
                log::info!(
                    "step {:>6}  loss {:.4e}  lr {:.2e}  p {:.3}  |g| {:.3e}",
                    state.step,
                    rec.loss,
                    rec.lr,
                    rec.teacher_prob,
                    rec.grad_norm
                );
            }
            hook(state, Event::Step(rec))?;
            if state.step.is_multiple_of(self.cfg.valid_every) || state.step == self.cfg.steps {
                let v = self.validate(state)?;
                log::info!("step {:>6}  valid rollout error {:.4e}", v.step, v.error);
                hook(state, Event::Valid(v))?;
            }
        }
        Ok(())
    }
}
