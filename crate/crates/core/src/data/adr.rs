//! Advection-diffusion-reaction benchmark on the unit square:
//!
//! ```text
//! φ_t − μ1 Δφ + b(t)·∇φ + φ = f(x; μ2, μ3),   b(t) = (cos t, sin t)
//! μ1 ∇φ·n = 0 on ∂Ω,   φ(x, 0) = 0
//! f = 10 exp(−((x − μ2)² + (y − μ3)²) / 0.07²)
//! ```
//!
//! Discretized on a uniform node grid with second-order central differences
//! and ghost-node reflection at the walls. Diffusion and reaction are
//! integrated with Crank–Nicolson, advection and source with second-order
//! Adams–Bashforth. The implicit part is diagonal in the cosine basis of
//! the reflected Laplacian, so each substep is two small dense transforms.

use std::f64::consts::PI;

use aevit_tensor::{gemm, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MU1_RANGE: (f64, f64) = (0.02, 0.05);
pub const CENTER_RANGE: (f64, f64) = (0.4, 0.6);
pub const SOURCE_AMPLITUDE: f64 = 10.0;
pub const SOURCE_WIDTH: f64 = 0.07;
pub const PARAM_NAMES: [&str; 3] = ["mu1", "mu2", "mu3"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdrParams {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

impl AdrParams {
    pub fn new(mu1: f64, mu2: f64, mu3: f64) -> Result<Self> {
        let p = AdrParams { mu1, mu2, mu3 };
        if !p.in_box() {
            return Err(CoreError::Invalid(format!(
                "ADR parameters {p:?} outside [{}, {}] x [{}, {}]^2",
                MU1_RANGE.0, MU1_RANGE.1, CENTER_RANGE.0, CENTER_RANGE.1
            )));
        }
        Ok(p)
    }

    pub fn in_box(&self) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        inside(self.mu1, MU1_RANGE) && inside(self.mu2, CENTER_RANGE) && inside(self.mu3, CENTER_RANGE)
    }

    /// Uniform draw over the parameter box.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AdrParams {
            mu1: rng.gen_range(MU1_RANGE.0..=MU1_RANGE.1),
            mu2: rng.gen_range(CENTER_RANGE.0..=CENTER_RANGE.1),
            mu3: rng.gen_range(CENTER_RANGE.0..=CENTER_RANGE.1),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.mu1, self.mu2, self.mu3]
    }

    pub fn source(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.mu2).powi(2) + (y - self.mu3).powi(2);
        SOURCE_AMPLITUDE * (-r2 / (SOURCE_WIDTH * SOURCE_WIDTH)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Nodes per side, including both walls.
    pub nodes: usize,
    /// Spacing between saved snapshots.
    pub dt: f64,
    /// Internal substeps per saved step.
    pub substeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nodes: 32,
            dt: PI / 100.0,
            substeps: 4,
        }
    }
}

impl SolverConfig {
    pub fn spacing(&self) -> f64 {
        1.0 / (self.nodes - 1) as f64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    fn validate(&self) -> Result<()> {
        if self.nodes < 3 || self.substeps == 0 || !(self.dt > 0.0) {
            return Err(CoreError::config(format!("bad solver settings {self:?}")));
        }
        Ok(())
    }
}

/// What to integrate. The benchmark is `Problem::adr`; the other fields
/// exist for verification runs (constant initial state, no source, ...).
#[derive(Debug, Clone, Copy)]
pub struct Problem {
    pub diffusivity: f64,
    pub source: Option<AdrParams>,
    pub initial: f64,
    pub advection: bool,
}

impl Problem {
    pub fn adr(params: AdrParams) -> Self {
        Problem {
            diffusivity: params.mu1,
            source: Some(params),
            initial: 0.0,
            advection: true,
        }
    }
}

/// Cosine basis of the ghost-reflected second-difference operator.
struct CosineBasis {
    m: usize,
    /// V_ik = cos(π k i / (m − 1))
    v: Vec<f64>,
    /// V⁻¹ = 2/(m − 1) · W V W with W = diag(½, 1, …, 1, ½)
    v_inv: Vec<f64>,
    /// Eigenvalues of the 1-D operator (2 cos(π k /(m − 1)) − 2) / h².
    eig: Vec<f64>,
}

impl CosineBasis {
    fn new(m: usize) -> Self {
        let n = (m - 1) as f64;
        let h = 1.0 / n;
        let mut v = vec![0.0; m * m];
        let mut v_inv = vec![0.0; m * m];
        let w = |i: usize| if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
        for i in 0..m {
            for k in 0..m {
                let c = (PI * (k * i) as f64 / n).cos();
                v[i * m + k] = c;
                v_inv[k * m + i] = 2.0 / n * w(k) * c * w(i);
            }
        }
        let eig = (0..m)
            .map(|k| (2.0 * (PI * k as f64 / n).cos() - 2.0) / (h * h))
            .collect();
        CosineBasis { m, v, v_inv, eig }
    }

    /// out = A · X · Aᵀ for an m×m field X.
    fn sandwich(&self, a: &[f64], x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        let m = self.m;
        let am = MatRef::row_major(a, m, m);
        gemm(1.0, am, MatRef::row_major(x, m, m), 0.0, tmp);
        gemm(1.0, MatRef::row_major(tmp, m, m), am.t(), 0.0, out);
    }

    fn forward(&self, x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        self.sandwich(&self.v_inv, x, tmp, out);
    }

    fn inverse(&self, x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        self.sandwich(&self.v, x, tmp, out);
    }
}

pub struct AdrSolver {
    config: SolverConfig,
    basis: CosineBasis,
}

impl AdrSolver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdrSolver {
            basis: CosineBasis::new(config.nodes),
            config,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Integrate `n_steps` saved steps. Returns `n_steps + 1` row-major
    /// `nodes × nodes` snapshots (row = y index), starting with the initial state.
    pub fn solve(&self, problem: &Problem, n_steps: usize) -> Result<Vec<Vec<f64>>> {
        let m = self.config.nodes;
        let h = self.config.spacing();
        let dt = self.config.dt / self.config.substeps as f64;
        let mm = m * m;

        let source: Vec<f64> = match problem.source {
            Some(p) => (0..mm)
                .map(|idx| p.source(self.config.coordinate(idx % m), self.config.coordinate(idx / m)))
                .collect(),
            None => vec![0.0; mm],
        };
        // implicit symbol μ1(λ_y + λ_x) − 1
        let implicit: Vec<f64> = (0..mm)
            .map(|idx| problem.diffusivity * (self.basis.eig[idx / m] + self.basis.eig[idx % m]) - 1.0)
            .collect();

        let mut phi = vec![problem.initial; mm];
        let mut phi_hat = vec![0.0; mm];
        let mut tmp = vec![0.0; mm];
        self.basis.forward(&phi, &mut tmp, &mut phi_hat);

        let mut explicit = vec![0.0; mm];
        let mut explicit_hat = vec![0.0; mm];
        let mut explicit_prev: Option<Vec<f64>> = None;

        let mut out = Vec::with_capacity(n_steps + 1);
        out.push(phi.clone());
        let mut t = 0.0;
        for step in 0..n_steps {
            for _ in 0..self.config.substeps {
                self.explicit_terms(problem, &phi, &source, t, h, &mut explicit);
                self.basis.forward(&explicit, &mut tmp, &mut explicit_hat);
                let prev = explicit_prev.get_or_insert_with(|| explicit_hat.clone());
                for idx in 0..mm {
                    let a = implicit[idx];
                    let e = 1.5 * explicit_hat[idx] - 0.5 * prev[idx];
                    phi_hat[idx] =
                        ((1.0 + 0.5 * dt * a) * phi_hat[idx] + dt * e) / (1.0 - 0.5 * dt * a);
                }
                prev.copy_from_slice(&explicit_hat);
                self.basis.inverse(&phi_hat, &mut tmp, &mut phi);
                t += dt;
            }
            if !phi.iter().all(|v| v.is_finite()) {
                return Err(CoreError::SolverDiverged {
                    substeps: self.config.substeps,
                    step: step + 1,
                });
            }
            out.push(phi.clone());
        }
        Ok(out)
    }

    /// −b(t)·∇φ + f with central differences; the reflected ghost values
    /// make the normal derivative vanish on the walls.
    fn explicit_terms(&self, problem: &Problem, phi: &[f64], source: &[f64], t: f64, h: f64, out: &mut [f64]) {
        let m = self.config.nodes;
        out.copy_from_slice(source);
        if !problem.advection {
            return;
        }
        let (bx, by) = (t.cos(), t.sin());
        let inv2h = 0.5 / h;
        for j in 0..m {
            for i in 0..m {
                let dx = if i == 0 || i == m - 1 {
                    0.0
                } else {
                    (phi[j * m + i + 1] - phi[j * m + i - 1]) * inv2h
                };
                let dy = if j == 0 || j == m - 1 {
                    0.0
                } else {
                    (phi[(j + 1) * m + i] - phi[(j - 1) * m + i]) * inv2h
                };
                out[j * m + i] -= bx * dx + by * dy;
            }
        }
    }
}

/// One benchmark trajectory as f32 snapshots `[n_steps + 1][nodes][nodes]`.
pub fn solve_adr(params: AdrParams, config: SolverConfig, n_steps: usize) -> Result<Vec<f32>> {
    let solver = AdrSolver::new(config)?;
    let snaps = solver.solve(&Problem::adr(params), n_steps)?;
    Ok(snaps.into_iter().flatten().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_basis_is_inverse() {
        let b = CosineBasis::new(7);
        let m = 7;
        for i in 0..m {
            for j in 0..m {
                let s: f64 = (0..m).map(|k| b.v[i * m + k] * b.v_inv[k * m + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12, "({i},{j}) = {s}");
            }
        }
    }

    #[test]
    fn basis_diagonalizes_reflected_laplacian() {
        let m = 9;
        let b = CosineBasis::new(m);
        let h = 1.0 / (m - 1) as f64;
        for k in 0..m {
            let col: Vec<f64> = (0..m).map(|i| b.v[i * m + k]).collect();
            for i in 0..m {
                let left = if i == 0 { col[1] } else { col[i - 1] };
                let right = if i == m - 1 { col[m - 2] } else { col[i + 1] };
                let lap = (left - 2.0 * col[i] + right) / (h * h);
                assert!((lap - b.eig[k] * col[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn box_is_enforced() {
        assert!(AdrParams::new(0.03, 0.5, 0.5).is_ok());
        assert!(AdrParams::new(0.01, 0.5, 0.5).is_err());
        assert!(AdrParams::new(0.03, 0.5, 0.7).is_err());
    }
}
