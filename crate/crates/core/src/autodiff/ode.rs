//! Fixed-step fourth-order Runge-Kutta on the graph.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// `k · t_end / n` for `k = 1..=n`.
pub fn uniform_sample_times(t_end: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| t_end * k as f64 / n as f64).collect()
}

/// Integrates `ẋ = f(x)` from `x0` over `[0, t_end]` in `n_steps` equal steps
/// and returns the states at `sample_times`, each snapped to the nearest grid
/// point. Every step stays on the graph, so gradients flow through the solver.
pub fn ode_integrate<F>(g: &mut Graph, mut f: F, x0: Var, t_end: f64, n_steps: usize, sample_times: &[f64]) -> Result<Vec<Var>>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    if n_steps == 0 || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Config("integration needs a positive span and at least one step".into()));
    }
    let dt = t_end / n_steps as f64;
    let grid: Vec<usize> = sample_times
        .iter()
        .map(|&t| {
            let k = (t / dt).round().clamp(0.0, n_steps as f64) as usize;
            if (k as f64 * dt - t).abs() > 1e-9 * t_end.max(1.0) {
                log::warn!("sample time {t} is off the integration grid; using {}", k as f64 * dt);
            }
            k
        })
        .collect();
    let last = grid.iter().copied().max().unwrap_or(0);
    let mut states = Vec::with_capacity(last + 1);
    states.push(x0);
    let mut x = x0;
    for _ in 0..last {
        let k1 = f(g, x)?;
        let s = g.scale(k1, dt / 2.0);
        let x2 = g.add(x, s)?;
        let k2 = f(g, x2)?;
        let s = g.scale(k2, dt / 2.0);
        let x3 = g.add(x, s)?;
        let k3 = f(g, x3)?;
        let s = g.scale(k3, dt);
        let x4 = g.add(x, s)?;
        let k4 = f(g, x4)?;
        let k23 = g.add(k2, k3)?;
        let k23 = g.scale(k23, 2.0);
        let sum = g.add(k1, k23)?;
        let sum = g.add(sum, k4)?;
        let step = g.scale(sum, dt / 6.0);
        x = g.add(x, step)?;
        states.push(x);
    }
    Ok(grid.into_iter().map(|k| states[k]).collect())
}
