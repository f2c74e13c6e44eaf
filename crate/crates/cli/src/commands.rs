use std::fs;
use std::path::Path;
use std::time::Instant;

use aevit_core::checkpoint::Checkpoint;
use aevit_core::config::write_splits;
use aevit_core::data::{load_dataset, write_dataset, Trajectory, TrajectoryDataset};
use aevit_core::eval::report::write_report;
use aevit_core::eval::{evaluate as eval_rollouts, ModelSurrogate, Persistence};
use aevit_core::train::{Event, TrainState, Trainer, ValidRecord};
use aevit_core::{CoreError, Model, Result, RunConfig};
use serde::{Deserialize, Serialize};

use crate::run::{self, write_text, CHECKPOINT, METRICS};
use crate::ConfigArgs;

pub fn generate_data(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = run::resolve(args)?;
    let t0 = Instant::now();
    let splits = aevit_core::data::build_splits(&cfg.dataset.adr)?;
    for p in write_splits(&splits, out)? {
        println!("{}", p.display());
    }
    log::info!("generated in {:.1?}", t0.elapsed());
    Ok(())
}

fn logs(state: &TrainState, dir: &Path) -> Result<()> {
    let mut s = String::from("step,loss,lr,teacher_prob,grad_norm\n");
    for r in &state.history {
        s.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.step, r.loss, r.lr, r.teacher_prob, r.grad_norm));
    }
    write_text(&dir.join("train_log.csv"), &s)?;
    let mut s = String::from("step,rollout_error\n");
    for r in &state.valid {
        s.push_str(&format!("{},{:e}\n", r.step, r.error));
    }
    write_text(&dir.join("valid_log.csv"), &s)
}

pub fn train(root: &Path, args: &ConfigArgs, fresh: bool, then_evaluate: bool) -> Result<()> {
    let cfg = run::resolve(args)?;
    let dir = run::prepare(root, &cfg)?;
    log::info!("run directory {}", dir.display());
    let splits = cfg.dataset.splits()?;
    let (model, init) = Model::new(&cfg.model, cfg.trainer.seed)?;
    let trainer = Trainer::new(&model, cfg.trainer.clone(), &splits.train, &splits.valid)?;
    let ck_path = dir.join(CHECKPOINT);
    let mut state = if ck_path.exists() && !fresh {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.model != cfg.model || ck.train != cfg.trainer || ck.normalizer != trainer.normalizer {
            return Err(CoreError::Invalid(format!(
                "{} was written for a different configuration or dataset",
                ck_path.display()
            )));
        }
        log::info!("resuming at step {}", ck.state.step);
        ck.state
    } else {
        TrainState::new(init, &cfg.trainer)
    };
    let save = |st: &TrainState| -> Result<()> {
        Checkpoint {
            model: cfg.model.clone(),
            train: cfg.trainer.clone(),
            normalizer: trainer.normalizer.clone(),
            state: st.clone(),
        }
        .save(&ck_path)?;
        logs(st, &dir)
    };
    let t0 = Instant::now();
    let outcome = trainer.run(&mut state, |st, ev| match ev {
        Event::Valid(_) => save(st),
        Event::Step(_) => Ok(()),
    });
    logs(&state, &dir)?;
    outcome?;
    log::info!("trained {} steps in {:.1?}", cfg.trainer.steps, t0.elapsed());
    if then_evaluate {
        evaluate_run(&cfg, &dir)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub config_hash: String,
    pub step: usize,
    pub best_valid: Option<ValidRecord>,
    pub test_sims: usize,
    pub horizons: Vec<usize>,
    /// Mean rollout error of the model at each horizon.
    pub model_error: Vec<f64>,
    pub persistence_error: Vec<f64>,
    /// `[horizon][channel]`
    pub channel_error: Vec<Vec<f64>>,
}

pub fn evaluate(root: &Path, args: &ConfigArgs) -> Result<()> {
    let cfg = run::resolve(args)?;
    let dir = run::run_dir(root, &cfg)?;
    evaluate_run(&cfg, &dir)
}

fn evaluate_run(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ck = Checkpoint::load(&dir.join(CHECKPOINT))?;
    let (model, params) = ck.inference()?;
    let test = cfg.dataset.splits()?.test;
    let n = *cfg.eval.horizons.iter().max().unwrap_or(&test.n_steps);
    if n > test.n_steps {
        return Err(CoreError::config(format!(
            "evaluation horizon {n} exceeds the {} test steps",
            test.n_steps
        )));
    }
    let sims: Vec<usize> = (0..test.len()).collect();
    let surrogate = ModelSurrogate {
        model: &model,
        params,
        normalizer: &ck.normalizer,
        batch: cfg.eval.batch,
    };
    let t0 = Instant::now();
    let result = eval_rollouts(&surrogate, &test, &sims, n)?;
    let base = eval_rollouts(&Persistence, &test, &sims, n)?;
    log::info!("rolled out {} simulations for {n} steps in {:.1?}", sims.len(), t0.elapsed());
    let hs = &cfg.eval.horizons;
    let metrics = Metrics {
        config_hash: run::config_hash(cfg)?,
        step: ck.state.step,
        best_valid: ck.state.best.as_ref().map(|(r, _)| *r),
        test_sims: sims.len(),
        horizons: hs.clone(),
        model_error: hs.iter().map(|&h| result.mean_error(h)).collect::<Result<_>>()?,
        persistence_error: hs.iter().map(|&h| base.mean_error(h)).collect::<Result<_>>()?,
        channel_error: hs.iter().map(|&h| result.channel_mean_error(h)).collect::<Result<_>>()?,
    };
    write_report(&result, &test, &dir.join("eval"), &cfg.eval.triplet_steps, cfg.eval.triplet_sims)?;
    let json = serde_json::to_string_pretty(&metrics).map_err(|e| CoreError::Invalid(e.to_string()))?;
    write_text(&dir.join(METRICS), &json)?;
    for (i, h) in hs.iter().enumerate() {
        println!(
            "horizon {h:>5}: model {:.4e}  persistence {:.4e}",
            metrics.model_error[i], metrics.persistence_error[i]
        );
    }
    Ok(())
}

pub fn rollout(ck_path: &Path, data: &Path, horizon: usize, sims: &[usize], out: &Path) -> Result<()> {
    let ck = Checkpoint::load(ck_path)?;
    let (model, params) = ck.inference()?;
    let ds = load_dataset(data)?;
    let sims: Vec<usize> = if sims.is_empty() { (0..ds.len()).collect() } else { sims.to_vec() };
    let surrogate = ModelSurrogate {
        model: &model,
        params,
        normalizer: &ck.normalizer,
        batch: 16,
    };
    let result = eval_rollouts(&surrogate, &ds, &sims, horizon)?;
    let steps = [1, horizon.div_ceil(2), horizon];
    write_report(&result, &ds, out, &steps, sims.len().min(2))?;
    let pred = TrajectoryDataset {
        n_steps: horizon,
        sims: sims
            .iter()
            .zip(&result.predictions)
            .map(|(&s, p)| {
                let mut snapshots = ds.snapshot(s, 0).to_vec();
                snapshots.extend_from_slice(p);
                Trajectory {
                    params: ds.sims[s].params.clone(),
                    snapshots,
                    mask: ds.sims[s].mask.clone(),
                }
            })
            .collect(),
        ..ds.clone()
    };
    write_dataset(&pred, &out.join("predictions.bin"))?;
    println!("mean rollout error over {horizon} steps: {:.4e}", result.mean_error(horizon)?);
    Ok(())
}

pub fn inspect(path: &Path, json: bool) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let (m, _) = Checkpoint::read_manifest(&bytes)?;
    if json {
        let text = serde_json::to_string_pretty(&m).map_err(|e| CoreError::Invalid(e.to_string()))?;
        println!("{text}");
        return Ok(());
    }
    // Full validation of the payload, not just the manifest.
    Checkpoint::from_bytes(&bytes)?;
    let t = m.model.toggles;
    println!("architecture      {:?}", m.model.architecture);
    println!("grid              {}x{}x{}, {} parameters", m.model.channels, m.model.height, m.model.width, m.model.n_params);
    println!("coordinates k     {}", m.model.coords.k);
    println!(
        "toggles           film_autoencoder={} film_layernorm={} param_token={} film_qkv={}",
        t.film_autoencoder, t.film_layernorm, t.param_token, t.film_qkv
    );
    println!("tensors           {} ({} values)", m.n_tensors(), m.n_scalars());
    println!("step              {} of {}", m.step, m.train.steps);
    if let Some(r) = m.history.last() {
        println!("last loss         {:.4e}", r.loss);
    }
    match m.best {
        Some(b) => println!("best validation   {:.4e} at step {}", b.error, b.step),
        None => println!("best validation   none"),
    }
    Ok(())
}
