//! Run directories: `<root>/<hash>/` holding the resolved config, the
//! checkpoint, training logs and evaluation output.

use std::fs;
use std::path::{Path, PathBuf};

use aevit_core::{CoreError, Result, RunConfig};
use sha2::{Digest, Sha256};

use crate::overrides;
use crate::ConfigArgs;

pub const CONFIG: &str = "config.toml";
pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const METRICS: &str = "metrics.json";

pub fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let base = match (&args.config, args.desk) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, true) => RunConfig::desk(),
        (None, false) => RunConfig::default(),
    };
    overrides::apply(&base, &args.sets)
}

/// First 16 hex digits of the SHA-256 of the resolved config.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(hex::encode(&digest[..8]))
}

pub fn run_dir(root: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    Ok(root.join(config_hash(cfg)?))
}

/// Create the run directory and store the config, refusing to mix runs.
pub fn prepare(root: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = run_dir(root, cfg)?;
    fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
    let path = dir.join(CONFIG);
    if path.exists() {
        let stored = RunConfig::load(&path)?;
        if &stored != cfg {
            return Err(CoreError::Invalid(format!(
                "{} holds a different configuration",
                dir.display()
            )));
        }
    } else {
        cfg.save(&path)?;
    }
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}
