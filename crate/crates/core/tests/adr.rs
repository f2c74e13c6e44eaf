use std::f64::consts::PI;

use aevit_core::data::adr::{AdrParams, AdrSolver, Problem, SolverConfig};
use aevit_core::data::dataset::{build_splits, SplitSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn l2(a: &[f64]) -> f64 {
    (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn constant_state_decays_exactly() {
    // f ≡ 0, φ0 = c: advection and diffusion of a constant vanish, φ' = −φ
    let cfg = SolverConfig { dt: 0.01, ..SolverConfig::default() };
    let solver = AdrSolver::new(cfg).unwrap();
    let problem = Problem {
        diffusivity: 0.04,
        source: None,
        initial: 2.5,
        advection: true,
    };
    let snaps = solver.solve(&problem, 100).unwrap();
    let exact = 2.5 * (-1.0f64).exp();
    for &v in &snaps[100] {
        assert!(((v - exact) / exact).abs() < 1e-3, "{v} vs {exact}");
    }
}

#[test]
fn source_peak_drives_early_growth() {
    let p = AdrParams::new(0.03, 0.5, 0.45).unwrap();
    let cfg = SolverConfig::default();
    let h = cfg.spacing();
    let (i, j) = ((p.mu2 / h).round() as usize, (p.mu3 / h).round() as usize);
    let f = p.source(i as f64 * h, j as f64 * h);
    assert!(f > 9.0, "source at nearest node {f}");

    // the first snapshot peaks where the source does
    let snaps = AdrSolver::new(cfg).unwrap().solve(&Problem::adr(p), 1).unwrap();
    let argmax = (0..snaps[1].len()).max_by(|&a, &b| snaps[1][a].total_cmp(&snaps[1][b])).unwrap();
    assert_eq!(argmax, j * cfg.nodes + i);

    // φ(δ) = δ f + O(δ²) from the zero state
    let tiny = SolverConfig { dt: 1e-4, ..cfg };
    let snaps = AdrSolver::new(tiny).unwrap().solve(&Problem::adr(p), 1).unwrap();
    let v = snaps[1][j * cfg.nodes + i];
    assert!((v / (tiny.dt * f) - 1.0).abs() < 1e-2, "{v} vs {}", tiny.dt * f);
}

/// Solve on nested grids (h, h/2, h/4) with Δt scaled alongside h and
/// compare at the coarse nodes.
fn refinement_errors(p: AdrParams, t_end_steps: usize) -> (f64, f64, f64) {
    let run = |level: usize| {
        let nodes = 31 * (1 << level) + 1;
        let cfg = SolverConfig {
            nodes,
            dt: PI / 100.0,
            substeps: 4 << level,
        };
        let s = AdrSolver::new(cfg).unwrap().solve(&Problem::adr(p), t_end_steps).unwrap();
        let fine = s.last().unwrap().clone();
        let stride = 1 << level;
        (0..32 * 32)
            .map(|idx| fine[(idx / 32) * stride * nodes + (idx % 32) * stride])
            .collect::<Vec<f64>>()
    };
    let (u0, u1, u2) = (run(0), run(1), run(2));
    let diff = |a: &[f64], b: &[f64]| l2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    (diff(&u0, &u1), diff(&u1, &u2), diff(&u0, &u2) / diff(&u1, &u2))
}

#[test]
fn second_order_self_convergence() {
    let p = AdrParams::new(0.035, 0.5, 0.55).unwrap();
    let (e01, e12, _) = refinement_errors(p, 32);
    let order = (e01 / e12).log2();
    println!("e01 {e01:.3e} e12 {e12:.3e} order {order:.3}");
    assert!(order >= 1.8, "observed order {order}");
}

#[test]
fn trajectories_stay_bounded_over_the_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SolverConfig::default();
    let solver = AdrSolver::new(cfg).unwrap();
    for _ in 0..10 {
        let p = AdrParams::sample(&mut rng);
        let snaps = solver.solve(&Problem::adr(p), 1000).unwrap();
        let max = snaps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max.is_finite() && max < 10.0, "{p:?}: max {max}");
    }
}

#[test]
fn split_lengths_and_determinism() {
    let spec = SplitSpec {
        n_train: 3,
        n_valid: 2,
        n_test: 2,
        train_steps: 40,
        test_steps: 100,
        seed: 11,
        ..SplitSpec::default()
    };
    let a = build_splits(&spec).unwrap();
    let b = build_splits(&spec).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.train.n_snapshots(), 41);
    assert_eq!(a.valid.n_steps, 40);
    assert_eq!(a.test.n_steps, 100);
    // train prefix of a longer run is the same trajectory
    let all: Vec<_> = a.train.sims.iter().chain(&a.valid.sims).chain(&a.test.sims).collect();
    for (i, s) in all.iter().enumerate() {
        for t in &all[..i] {
            assert_ne!(s.params, t.params);
        }
    }
    assert!(a.train.snapshot(0, 0).iter().all(|&v| v == 0.0));
}
