use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adr::{solve_adr, AdrParams, SolverConfig, PARAM_NAMES};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// One simulation: `n_steps + 1` snapshots of `C×H×W` values, its raw
/// parameter vector and an optional `H×W` domain mask (1 inside, 0 outside).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: Vec<f64>,
    pub snapshots: Vec<f32>,
    pub mask: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Steps per simulation; each simulation stores `n_steps + 1` snapshots.
    pub n_steps: usize,
    pub dt: f64,
    pub param_names: Vec<String>,
    pub split: Split,
    pub sims: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn snapshot_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn n_snapshots(&self) -> usize {
        self.n_steps + 1
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn len(&self) -> usize {
        self.sims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sims.is_empty()
    }

    pub fn has_mask(&self) -> bool {
        self.sims.first().is_some_and(|s| s.mask.is_some())
    }

    pub fn snapshot(&self, sim: usize, step: usize) -> &[f32] {
        let n = self.snapshot_len();
        &self.sims[sim].snapshots[step * n..(step + 1) * n]
    }

    /// Check every simulation against the declared layout.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(CoreError::Invalid("dataset has an empty dimension".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CoreError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        let expect = self.n_snapshots() * self.snapshot_len();
        let masked = self.has_mask();
        for (i, sim) in self.sims.iter().enumerate() {
            if sim.snapshots.len() != expect {
                return Err(CoreError::Invalid(format!(
                    "simulation {i} holds {} values, expected {expect}",
                    sim.snapshots.len()
                )));
            }
            if sim.params.len() != self.n_params() {
                return Err(CoreError::Invalid(format!(
                    "simulation {i} has {} parameters, expected {}",
                    sim.params.len(),
                    self.n_params()
                )));
            }
            match (&sim.mask, masked) {
                (Some(m), true) if m.len() == self.height * self.width => {}
                (None, false) => {}
                _ => {
                    return Err(CoreError::Invalid(format!(
                        "simulation {i}: mask presence or size differs from the dataset"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Keep the first `n_steps` steps of every simulation.
    pub fn truncated(&self, n_steps: usize) -> Result<Self> {
        if n_steps > self.n_steps {
            return Err(CoreError::Invalid(format!(
                "cannot truncate {} steps to {n_steps}",
                self.n_steps
            )));
        }
        let keep = (n_steps + 1) * self.snapshot_len();
        let sims = self
            .sims
            .iter()
            .map(|s| Trajectory {
                params: s.params.clone(),
                snapshots: s.snapshots[..keep].to_vec(),
                mask: s.mask.clone(),
            })
            .collect();
        Ok(TrajectoryDataset {
            n_steps,
            sims,
            ..self.clone_header()
        })
    }

    /// First `n` simulations.
    pub fn head(&self, n: usize) -> Self {
        TrajectoryDataset {
            sims: self.sims.iter().take(n).cloned().collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        TrajectoryDataset {
            sims: Vec::new(),
            param_names: self.param_names.clone(),
            ..*self
        }
    }

    /// Every `(sim, start)` whose window of `len` snapshots fits.
    pub fn windows(&self, len: usize) -> Vec<(usize, usize)> {
        if len == 0 || len > self.n_snapshots() {
            return Vec::new();
        }
        (0..self.len())
            .flat_map(|s| (0..=self.n_snapshots() - len).map(move |t| (s, t)))
            .collect()
    }
}

/// Zero every channel outside the domain mask.
pub fn apply_mask(snapshot: &mut [f32], mask: &[f32]) {
    let hw = mask.len();
    for chan in snapshot.chunks_mut(hw) {
        for (v, &m) in chan.iter_mut().zip(mask) {
            if m == 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Simulation counts and lengths for the ADR benchmark splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Steps kept for train and valid simulations.
    pub train_steps: usize,
    /// Steps kept for test simulations.
    pub test_steps: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            n_train: 800,
            n_valid: 200,
            n_test: 200,
            train_steps: 400,
            test_steps: 1000,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: TrajectoryDataset,
    pub valid: TrajectoryDataset,
    pub test: TrajectoryDataset,
}

/// Parameter draws for all three splits, in train, valid, test order.
pub fn sample_split_params(spec: &SplitSpec) -> Vec<AdrParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_train + spec.n_valid + spec.n_test)
        .map(|_| AdrParams::sample(&mut rng))
        .collect()
}

/// Solve the benchmark for uniformly drawn parameters, in parallel across
/// simulations.
pub fn build_splits(spec: &SplitSpec) -> Result<Splits> {
    let params = sample_split_params(spec);
    for (i, a) in params.iter().enumerate() {
        if params[..i].contains(a) {
            return Err(CoreError::Invalid(format!("duplicate parameter draw {a:?}")));
        }
    }
    let (train_p, rest) = params.split_at(spec.n_train);
    let (valid_p, test_p) = rest.split_at(spec.n_valid);
    Ok(Splits {
        train: generate(train_p, spec.solver, spec.train_steps, Split::Train)?,
        valid: generate(valid_p, spec.solver, spec.train_steps, Split::Valid)?,
        test: generate(test_p, spec.solver, spec.test_steps, Split::Test)?,
    })
}

pub fn generate(
    params: &[AdrParams],
    solver: SolverConfig,
    n_steps: usize,
    split: Split,
) -> Result<TrajectoryDataset> {
    let sims = aevit_tensor::par::map_range(params.len(), |i| {
        solve_adr(params[i], solver, n_steps).map(|snapshots| Trajectory {
            params: params[i].to_vec(),
            snapshots,
            mask: None,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryDataset {
        channels: 1,
        height: solver.nodes,
        width: solver.nodes,
        n_steps,
        dt: solver.dt,
        param_names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        split,
        sims,
    })
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-component mean and population standard deviation. `source` records
/// which split produced the numbers; only training statistics are accepted
/// by [`Normalizer::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub source: Split,
}

impl Stats {
    /// From per-column means and sums of centered squares over `counts` samples.
    fn from_moments(mean: Vec<f64>, centered_sq: &[f64], counts: &[usize], source: Split) -> Self {
        let std = centered_sq
            .iter()
            .zip(counts)
            .map(|(&sq, &n)| (sq / n.max(1) as f64).sqrt().max(STD_FLOOR))
            .collect();
        Stats { mean, std, source }
    }
}

/// z-score transform for fields (per channel) and parameters (per entry).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub channels: Stats,
    pub params: Stats,
}

impl Normalizer {
    /// Statistics over in-domain cells of every snapshot of a training split.
    pub fn fit(train: &TrajectoryDataset) -> Result<Self> {
        if train.split != Split::Train {
            return Err(CoreError::Invalid(format!(
                "normalization statistics must come from the train split, got {}",
                train.split
            )));
        }
        let hw = train.height * train.width;
        let c = train.channels;
        // Two passes (mean, then centered squares) keep precision for large offsets.
        let mut sums = vec![0.0f64; c];
        let mut counts = vec![0usize; c];
        for sim in &train.sims {
            for snap in sim.snapshots.chunks(c * hw) {
                for (ch, plane) in snap.chunks(hw).enumerate() {
                    for (i, &v) in plane.iter().enumerate() {
                        if sim.mask.as_ref().is_none_or(|m| m[i] != 0.0) {
                            sums[ch] += v as f64;
                            counts[ch] += 1;
                        }
                    }
                }
            }
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n.max(1) as f64).collect();
        let mut sq = vec![0.0f64; c];
        for sim in &train.sims {
            for snap in sim.snapshots.chunks(c * hw) {
                for (ch, plane) in snap.chunks(hw).enumerate() {
                    for (i, &v) in plane.iter().enumerate() {
                        if sim.mask.as_ref().is_none_or(|m| m[i] != 0.0) {
                            let d = v as f64 - means[ch];
                            sq[ch] += d * d;
                        }
                    }
                }
            }
        }
        let channels = Stats::from_moments(means, &sq, &counts, Split::Train);

        let p = train.n_params();
        let n = train.len();
        let pmean: Vec<f64> = (0..p)
            .map(|j| train.sims.iter().map(|s| s.params[j]).sum::<f64>() / n.max(1) as f64)
            .collect();
        let psq: Vec<f64> = (0..p)
            .map(|j| train.sims.iter().map(|s| (s.params[j] - pmean[j]).powi(2)).sum())
            .collect();
        let params = Stats::from_moments(pmean, &psq, &vec![n; p], Split::Train);
        Ok(Normalizer { channels, params })
    }

    /// Refuse statistics that were not computed on training data.
    pub fn check_provenance(&self) -> Result<()> {
        if self.channels.source != Split::Train || self.params.source != Split::Train {
            return Err(CoreError::Invalid(
                "normalization statistics do not come from the train split".into(),
            ));
        }
        Ok(())
    }

    pub fn normalize_field(&self, snapshot: &mut [f32], mask: Option<&[f32]>) {
        let hw = snapshot.len() / self.channels.mean.len();
        for (ch, plane) in snapshot.chunks_mut(hw).enumerate() {
            let (m, s) = (self.channels.mean[ch], self.channels.std[ch]);
            for v in plane.iter_mut() {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        if let Some(mask) = mask {
            apply_mask(snapshot, mask);
        }
    }

    pub fn denormalize_field(&self, snapshot: &mut [f32], mask: Option<&[f32]>) {
        let hw = snapshot.len() / self.channels.mean.len();
        for (ch, plane) in snapshot.chunks_mut(hw).enumerate() {
            let (m, s) = (self.channels.mean[ch], self.channels.std[ch]);
            for v in plane.iter_mut() {
                *v = (*v as f64 * s + m) as f32;
            }
        }
        if let Some(mask) = mask {
            apply_mask(snapshot, mask);
        }
    }

    pub fn normalize_params(&self, params: &[f64]) -> Vec<f32> {
        params
            .iter()
            .enumerate()
            .map(|(j, &v)| ((v - self.params.mean[j]) / self.params.std[j]) as f32)
            .collect()
    }

    /// Copy of `ds` with every snapshot normalized (parameters stay raw).
    pub fn normalize_dataset(&self, ds: &TrajectoryDataset) -> Result<TrajectoryDataset> {
        self.check_provenance()?;
        if ds.channels != self.channels.mean.len() || ds.n_params() != self.params.mean.len() {
            return Err(CoreError::Invalid(format!(
                "dataset has {} channels / {} parameters, statistics cover {} / {}",
                ds.channels,
                ds.n_params(),
                self.channels.mean.len(),
                self.params.mean.len()
            )));
        }
        let n = ds.snapshot_len();
        let sims = ds
            .sims
            .iter()
            .map(|s| {
                let mut snaps = s.snapshots.clone();
                for snap in snaps.chunks_mut(n) {
                    self.normalize_field(snap, s.mask.as_deref());
                }
                Trajectory {
                    params: s.params.clone(),
                    snapshots: snaps,
                    mask: s.mask.clone(),
                }
            })
            .collect();
        Ok(TrajectoryDataset {
            sims,
            ..ds.clone_header()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(values: Vec<f32>, split: Split) -> TrajectoryDataset {
        TrajectoryDataset {
            channels: 1,
            height: 1,
            width: values.len(),
            n_steps: 0,
            dt: 0.1,
            param_names: vec!["a".into()],
            split,
            sims: vec![Trajectory {
                params: vec![1.0],
                snapshots: values,
                mask: None,
            }],
        }
    }

    #[test]
    fn channel_one_two_three() {
        let n = Normalizer::fit(&tiny(vec![1.0, 2.0, 3.0], Split::Train)).unwrap();
        assert_eq!(n.channels.mean, vec![2.0]);
        assert!((n.channels.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_uses_floor() {
        let n = Normalizer::fit(&tiny(vec![4.0; 5], Split::Train)).unwrap();
        assert_eq!(n.channels.std, vec![STD_FLOOR]);
        let mut snap = vec![4.0f32; 5];
        n.normalize_field(&mut snap, None);
        assert!(snap.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn statistics_refuse_non_train_splits() {
        assert!(Normalizer::fit(&tiny(vec![1.0, 2.0], Split::Valid)).is_err());
        assert!(Normalizer::fit(&tiny(vec![1.0, 2.0], Split::Test)).is_err());
    }

    #[test]
    fn mask_examples() {
        let mut x = vec![1.0f32, 2.0, 3.0, 4.0];
        apply_mask(&mut x, &[1.0, 1.0]);
        assert_eq!(x, [1.0, 2.0, 3.0, 4.0]);
        apply_mask(&mut x, &[0.0, 1.0]);
        assert_eq!(x, [0.0, 2.0, 0.0, 4.0]);
        apply_mask(&mut x, &[0.0, 0.0]);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn windows_enumerate_valid_starts() {
        let mut ds = tiny(vec![0.0; 6], Split::Train);
        ds.width = 1;
        ds.n_steps = 5;
        assert_eq!(ds.windows(5), vec![(0, 0), (0, 1)]);
        assert!(ds.windows(7).is_empty());
    }
}
