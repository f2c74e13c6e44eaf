//! Benchmark data: ADR solver, trajectory datasets, normalization and the
//! on-disk container.

pub mod adr;
pub mod container;
pub mod dataset;

pub use adr::{solve_adr, AdrParams, AdrSolver, Problem, SolverConfig};
pub use container::{load_dataset, write_dataset};
pub use dataset::{
    apply_mask, build_splits, generate, Normalizer, Split, SplitSpec, Splits, Stats, Trajectory,
    TrajectoryDataset,
};
