//! Central finite-difference checks of reverse-mode gradients (f64).

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare `d loss / d param[index]` from one backward pass against
/// `(loss(p + h) - loss(p - h)) / 2h` for every probe.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    loss: F,
    probes: &[(ParamId, usize)],
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let grads = g.backward(l)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, s)?;
        Ok(g.value(l).item())
    };
    let mut out = Vec::with_capacity(probes.len());
    for &(id, index) in probes {
        let analytic = grads.param(store, id).data()[index];
        let mut perturbed = store.clone();
        perturbed.get_mut(id).data_mut()[index] += h;
        let plus = eval(&perturbed)?;
        perturbed.get_mut(id).data_mut()[index] -= 2.0 * h;
        let minus = eval(&perturbed)?;
        let numeric = (plus - minus) / (2.0 * h);
        out.push(Probe {
            param: store.name(id).to_string(),
            index,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric),
        });
    }
    Ok(GradCheckReport { probes: out })
}

/// Check every element of every input of a function of free tensors.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("input{i}"), t.clone()))
        .collect::<Result<_>>()?;
    let probes: Vec<(ParamId, usize)> = ids
        .iter()
        .zip(inputs)
        .flat_map(|(&id, t)| (0..t.numel()).map(move |i| (id, i)))
        .collect();
    check_params(
        &store,
        |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            f(g, &vars)
        },
        &probes,
        h,
    )
}

/// `count` pseudo-random (parameter, element) pairs, reproducible per seed.
/// Parameters are drawn uniformly, then an element within the parameter.
pub fn sample_probes<T: crate::Float>(
    store: &ParamStore<T>,
    count: usize,
    seed: u64,
) -> Vec<(ParamId, usize)> {
    let mut state = seed;
    let mut next = move || {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.get(id).numel() > 0).collect();
    (0..count)
        .map(|_| {
            let id = ids[(next() % ids.len() as u64) as usize];
            let index = (next() % store.get(id).numel() as u64) as usize;
            (id, index)
        })
        .collect()
}
