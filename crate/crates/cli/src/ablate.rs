//! Ablation sweeps: every on/off combination of the chosen toggles, for each
//! seed, trained and evaluated in separate processes.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use aevit_core::{CoreError, Result, RunConfig};

use crate::commands::Metrics;
use crate::run::{self, write_text, METRICS};
use crate::ConfigArgs;

pub const TOGGLES: [&str; 5] = ["film_autoencoder", "film_layernorm", "param_token", "film_qkv", "coords"];

fn set_toggle(cfg: &mut RunConfig, name: &str, on: bool, k_on: usize) {
    let t = &mut cfg.model.toggles;
    match name {
        "film_autoencoder" => t.film_autoencoder = on,
        "film_layernorm" => t.film_layernorm = on,
        "param_token" => t.param_token = on,
        "film_qkv" => t.film_qkv = on,
        "coords" => cfg.model.coords.k = if on { k_on } else { 0 },
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub on: Vec<bool>,
    pub seed: u64,
    pub config: RunConfig,
    pub dir: PathBuf,
}

fn label(names: &[String], on: &[bool]) -> String {
    match on.iter().filter(|&&b| b).count() {
        0 => "baseline".into(),
        n if n == on.len() && n > 1 => "all".into(),
        _ => names
            .iter()
            .zip(on)
            .filter(|(_, &b)| b)
            .map(|(n, _)| format!("+{n}"))
            .collect(),
    }
}

/// The `2^toggles × seeds` runs, baseline first.
pub fn plan(root: &Path, base: &RunConfig, toggles: &[String], seeds: &[u64]) -> Result<Vec<Variant>> {
    for t in toggles {
        if !TOGGLES.contains(&t.as_str()) {
            return Err(CoreError::config(format!("unknown toggle `{t}`; choose from {}", TOGGLES.join(", "))));
        }
    }
    if seeds.is_empty() || toggles.is_empty() {
        return Err(CoreError::config("ablation needs at least one toggle and one seed"));
    }
    let k_on = if base.model.coords.k > 0 { base.model.coords.k } else { 4 };
    let mut out = Vec::new();
    let mut masks: Vec<u32> = (0..1u32 << toggles.len()).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let on: Vec<bool> = (0..toggles.len()).map(|i| mask & (1 << i) != 0).collect();
        for &seed in seeds {
            let mut config = base.clone();
            config.trainer.seed = seed;
            for (t, &b) in toggles.iter().zip(&on) {
                set_toggle(&mut config, t, b, k_on);
            }
            config.validate()?;
            let dir = run::run_dir(root, &config)?;
            out.push(Variant {
                label: label(toggles, &on),
                on: on.clone(),
                seed,
                config,
                dir,
            });
        }
    }
    Ok(out)
}

fn run_child(root: &Path, v: &Variant) -> Result<()> {
    let dir = run::prepare(root, &v.config)?;
    let exe = std::env::current_exe().map_err(|e| CoreError::io("current executable", e))?;
    let status = Command::new(exe)
        .arg("--run-root")
        .arg(root)
        .arg("train")
        .arg("--config")
        .arg(dir.join(run::CONFIG))
        .arg("--evaluate")
        .status()
        .map_err(|e| CoreError::io("aevit train", e))?;
    match status.code() {
        Some(0) => Ok(()),
        Some(3) => Err(CoreError::NonFinite(format!("run {} ({} seed {})", dir.display(), v.label, v.seed))),
        Some(4) => Err(CoreError::io(&dir, std::io::Error::other("training run failed"))),
        code => Err(CoreError::Invalid(format!(
            "run {} ({} seed {}) exited with {code:?}",
            dir.display(),
            v.label,
            v.seed
        ))),
    }
}

pub fn ablate(root: &Path, args: &ConfigArgs, toggles: &[String], seeds: &[u64], workers: usize, dry_run: bool) -> Result<()> {
    let base = run::resolve(args)?;
    let variants = plan(root, &base, toggles, seeds)?;
    println!("{} runs", variants.len());
    for v in &variants {
        println!("{:<40} seed {:<6} {}", v.label, v.seed, v.dir.display());
    }
    if dry_run {
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let errors = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(v) = variants.get(i) else { break };
                if let Err(e) = run_child(root, v) {
                    log::error!("{e}");
                    errors.lock().unwrap().push(e);
                }
            });
        }
    });
    if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    summarize(root, &base, toggles, seeds, &variants)
}

fn read_metrics(dir: &Path) -> Result<Metrics> {
    let p = dir.join(METRICS);
    let text = std::fs::read_to_string(&p).map_err(|e| CoreError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Format {
        what: "metrics",
        offset: e.column() as u64,
        detail: e.to_string(),
    })
}

/// Mean and spread over seeds of the error at the first evaluation
/// horizon, one row per toggle combination.
fn summarize(root: &Path, base: &RunConfig, toggles: &[String], seeds: &[u64], variants: &[Variant]) -> Result<()> {
    let mut csv = String::from("variant,seed,");
    csv.push_str(&toggles.join(","));
    csv.push_str(",horizon,rollout_error\n");
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut horizon = 0;
    for v in variants {
        let m = read_metrics(&v.dir)?;
        horizon = m.horizons[0];
        let e = m.model_error[0];
        let flags: Vec<&str> = v.on.iter().map(|&b| if b { "1" } else { "0" }).collect();
        csv.push_str(&format!("{},{},{},{horizon},{e:e}\n", v.label, v.seed, flags.join(",")));
        match rows.iter_mut().find(|(l, _)| *l == v.label) {
            Some((_, es)) => es.push(e),
            None => rows.push((v.label.clone(), vec![e])),
        }
    }
    let baseline = rows[0].1.iter().sum::<f64>() / rows[0].1.len() as f64;
    let mut table = format!(
        "| variant | mean rollout error (h={horizon}) | std | vs. baseline |\n|---|---|---|---|\n"
    );
    for (l, es) in &rows {
        let n = es.len() as f64;
        let mean = es.iter().sum::<f64>() / n;
        let std = (es.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        table.push_str(&format!("| {l} | {mean:.4e} | {std:.2e} | {:.2}x |\n", baseline / mean));
    }
    let name = format!("ablation-{}", &run::config_hash(base)?[..8]);
    let out = root.join(format!("{name}-{}", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join("_")));
    std::fs::create_dir_all(&out).map_err(|e| CoreError::io(&out, e))?;
    write_text(&out.join("runs.csv"), &csv)?;
    write_text(&out.join("summary.md"), &table)?;
    println!("\n{table}");
    println!("summary written to {}", out.display());
    Ok(())
}
