//! Backward costate sweep and the two equivalent Hamiltonian views.
//!
//! Costates `(pₖ, qₖ)` ride the forward characteristics, so together with a
//! [`TrajectoryBundle`] they describe `γₜ = Σₖ wₖ δ_{(xₖ, yₖ, pₖ, qₖ)}`. Their
//! equations are the gradient of the discrete lifted Hamiltonian
//!
//! ```text
//! H = Σₖ wₖ [ pₖ·F(t, u, μ, xₖ) + qₖ yₖ G(t, u, μ, xₖ) ],   μ = Σⱼ wⱼ yⱼ δ_{xⱼ}
//! ```
//!
//! and `ψᵢ = Σ wₖ pₖᵢ δ_{xₖ}`, `ξ = Σ wₖ yₖ qₖ δ_{xₖ}` are the measure-valued view.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{
    field_and_source, integrate_forward, ControlSignal, TimeGrid, TrajectoryBundle, PARALLEL_THRESHOLD,
};
use crate::integrate::{Integrator, Stepper};
use crate::measure::{LiftedEnsemble, ParticleMeasure, SignedParticleMeasure};
use crate::model::Model;

/// Per-node costates matching a forward trajectory.
#[derive(Debug, Clone)]
pub struct CostateBundle {
    grid: TimeGrid,
    dim: usize,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    /// `∫_{t_m}^{t_{m+1}} ∇ᵤH dt` per interval, integrated alongside the costates.
    control_integrals: Option<Vec<f64>>,
}

impl CostateBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row covectors `pₖ(t_m)`, particle-major.
    pub fn p(&self, m: usize) -> &[f64] {
        &self.p[m]
    }

    pub fn q(&self, m: usize) -> &[f64] {
        &self.q[m]
    }

    /// Largest costate magnitude over all nodes.
    pub fn max_abs(&self) -> f64 {
        self.p.iter().chain(&self.q).flatten().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Signed measures `ψ₁..ψₙ` and `ξ` at one node.
#[derive(Debug, Clone)]
pub struct AdjointMeasures {
    pub psi: Vec<SignedParticleMeasure>,
    pub xi: SignedParticleMeasure,
}

impl AdjointMeasures {
    pub fn psi_totals(&self) -> Vec<f64> {
        self.psi.iter().map(|m| m.total_mass()).collect()
    }

    pub fn xi_total(&self) -> f64 {
        self.xi.total_mass()
    }
}

/// `pₖ = −yₖ ∇_μℓ(μ_T, xₖ)` and `qₖ = −δℓ/δμ(μ_T, xₖ)`.
pub fn terminal_costate(model: &dyn Model, traj: &TrajectoryBundle) -> (Vec<f64>, Vec<f64>) {
    let n = traj.dim();
    let last = traj.grid().steps();
    let mu = traj.terminal_measure();
    let cost = model.cost();
    let x = traj.positions(last);
    let y = traj.masses(last);
    let mut p = vec![0.0; x.len()];
    let mut q = vec![0.0; y.len()];
    for k in 0..y.len() {
        let xk = &x[k * n..(k + 1) * n];
        let pk = &mut p[k * n..(k + 1) * n];
        cost.intrinsic(&mu, xk, pk);
        pk.iter_mut().for_each(|v| *v *= -y[k]);
        q[k] = -cost.flat(&mu, xk);
    }
    (p, q)
}

/// Forward state on one interval, reconstructed by cubic Hermite interpolation
/// from node values and node slopes.
struct IntervalState {
    t0: f64,
    h: f64,
    z0: Vec<f64>,
    z1: Vec<f64>,
    d0: Vec<f64>,
    d1: Vec<f64>,
}

impl IntervalState {
    fn new(model: &dyn Model, traj: &TrajectoryBundle, u: &[f64], m: usize) -> Self {
        let grid = traj.grid();
        let (z0, d0) = node_state_and_slope(model, traj, u, m);
        let (z1, d1) = node_state_and_slope(model, traj, u, m + 1);
        Self { t0: grid.node(m), h: grid.step_size(), z0, z1, d0, d1 }
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for (i, o) in out.iter_mut().enumerate() {
            *o = h00 * self.z0[i] + h01 * self.z1[i] + self.h * (h10 * self.d0[i] + h11 * self.d1[i]);
        }
    }
}

/// `[x | y]` at node `m` and its time derivative under the control `u`.
fn node_state_and_slope(model: &dyn Model, traj: &TrajectoryBundle, u: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let count = traj.particles();
    let n = traj.dim();
    let x = traj.positions(m);
    let y = traj.masses(m);
    let mu = traj.measure_unchecked(m);
    let mut slope = vec![0.0; count * (n + 1)];
    let mut g = vec![0.0; count];
    let (dx, dy) = slope.split_at_mut(count * n);
    field_and_source(model, traj.grid().node(m), u, &mu, x, dx, &mut g);
    for k in 0..count {
        dy[k] = y[k] * g[k];
    }
    let mut state = x.to_vec();
    state.extend_from_slice(y);
    (state, slope)
}

/// Right-hand side of the costate system at one instant.
///
/// `state` is `[p | q]`; `dstate` receives `[ṗ | q̇]`. When `du` is given it
/// receives `∇ᵤH`.
#[allow(clippy::too_many_arguments)]
fn costate_rhs(
    model: &dyn Model,
    t: f64,
    u: &[f64],
    weights: &[f64],
    x: &[f64],
    y: &[f64],
    state: &[f64],
    dstate: &mut [f64],
    du: Option<&mut [f64]>,
) {
    let n = model.state_dim();
    let count = weights.len();
    let mu = ParticleMeasure::from_raw(n, x.to_vec(), weights.iter().zip(y).map(|(w, y)| w * y).collect());
    let (p, q) = state.split_at(count * n);
    let (dp, dq) = dstate.split_at_mut(count * n);
    let nonlocal = model.is_nonlocal();
    // Weighted costates of the integrated particle in the coupling sums.
    let a: Vec<f64> = (0..count * n).map(|i| weights[i / n] * p[i]).collect();
    let b: Vec<f64> = (0..count).map(|j| weights[j] * q[j] * y[j]).collect();

    let local = |(k, (dpk, dqk)): (usize, (&mut [f64], &mut f64))| {
        let xk = &x[k * n..(k + 1) * n];
        let pk = &p[k * n..(k + 1) * n];
        let mut jac = vec![0.0; n * n];
        let mut grad = vec![0.0; n];
        model.field_dx(t, u, &mu, xk, &mut jac);
        model.source_dx(t, u, &mu, xk, &mut grad);
        let g = model.source(t, u, &mu, xk);
        for c in 0..n {
            let mut s = q[k] * y[k] * grad[c];
            for r in 0..n {
                s += pk[r] * jac[r * n + c];
            }
            dpk[c] = -s;
        }
        *dqk = -q[k] * g;
        if nonlocal {
            let mut coupling_p = vec![0.0; n];
            let mut coupling_q = 0.0;
            let mut flat = vec![0.0; n];
            for j in 0..count {
                let xj = &x[j * n..(j + 1) * n];
                let aj = &a[j * n..(j + 1) * n];
                model.field_intrinsic(t, u, &mu, xj, xk, &mut jac);
                model.source_intrinsic(t, u, &mu, xj, xk, &mut grad);
                model.field_flat(t, u, &mu, xj, xk, &mut flat);
                for c in 0..n {
                    let mut s = b[j] * grad[c];
                    for r in 0..n {
                        s += aj[r] * jac[r * n + c];
                    }
                    coupling_p[c] += s;
                }
                coupling_q +=
                    aj.iter().zip(&flat).map(|(a, f)| a * f).sum::<f64>() + b[j] * model.source_flat(t, u, &mu, xj, xk);
            }
            for c in 0..n {
                dpk[c] -= y[k] * coupling_p[c];
            }
            *dqk -= coupling_q;
        }
    };
    if nonlocal && count >= PARALLEL_THRESHOLD {
        dp.par_chunks_mut(n).zip(dq.par_iter_mut()).enumerate().for_each(local);
    } else {
        dp.chunks_mut(n).zip(dq.iter_mut()).enumerate().for_each(local);
    }

    if let Some(du) = du {
        control_hamiltonian_gradient(model, t, u, &mu, x, y, weights, p, q, du);
    }
}

/// `∇ᵤH = Σₖ wₖ [pₖ ∇ᵤF(xₖ) + qₖ yₖ ∇ᵤG(xₖ)]`.
#[allow(clippy::too_many_arguments)]
fn control_hamiltonian_gradient(
    model: &dyn Model,
    t: f64,
    u: &[f64],
    mu: &ParticleMeasure,
    x: &[f64],
    y: &[f64],
    weights: &[f64],
    p: &[f64],
    q: &[f64],
    out: &mut [f64],
) {
    let n = model.state_dim();
    let dim_u = u.len();
    let mut fu = vec![0.0; n * dim_u];
    let mut gu = vec![0.0; dim_u];
    out.fill(0.0);
    for k in 0..weights.len() {
        let xk = &x[k * n..(k + 1) * n];
        let pk = &p[k * n..(k + 1) * n];
        model.field_du(t, u, mu, xk, &mut fu);
        model.source_du(t, u, mu, xk, &mut gu);
        for c in 0..dim_u {
            let mut s = q[k] * y[k] * gu[c];
            for r in 0..n {
                s += pk[r] * fu[r * dim_u + c];
            }
            out[c] += weights[k] * s;
        }
    }
}

/// Integrates the costate system from `T` back to `0` with the given scheme.
pub fn integrate_adjoint_backward(
    model: &dyn Model,
    u: &ControlSignal,
    traj: &TrajectoryBundle,
    method: Integrator,
) -> Result<CostateBundle> {
    let grid = *traj.grid();
    if u.steps() != grid.steps() {
        return Err(Error::GridMismatch(format!(
            "control has {} intervals, trajectory has {}",
            u.steps(),
            grid.steps()
        )));
    }
    if traj.dim() != model.state_dim() {
        return Err(Error::Dimension(format!("trajectory dimension {} vs model {}", traj.dim(), model.state_dim())));
    }
    let n = traj.dim();
    let count = traj.particles();
    let dim_u = u.dim();
    let track_control = model.control_differentiable();
    let weights = traj.weights().to_vec();

    let (p_end, q_end) = terminal_costate(model, traj);
    // State layout: [p (count·n) | q (count) | ∫∇ᵤH accumulator (dim_u)].
    let mut state = p_end;
    state.extend_from_slice(&q_end);
    let accumulator = if track_control { dim_u } else { 0 };
    state.extend(std::iter::repeat_n(0.0, accumulator));

    let mut p = vec![Vec::new(); grid.steps() + 1];
    let mut q = vec![Vec::new(); grid.steps() + 1];
    let mut integrals = vec![0.0; if track_control { grid.steps() * dim_u } else { 0 }];
    p[grid.steps()] = state[..count * n].to_vec();
    q[grid.steps()] = state[count * n..count * (n + 1)].to_vec();

    let mut stepper = Stepper::new(method, state.len());
    let mut forward = vec![0.0; count * (n + 1)];
    let h = grid.step_size();
    for m in (0..grid.steps()).rev() {
        let control = u.at(m);
        let interval = IntervalState::new(model, traj, control, m);
        state[count * (n + 1)..].fill(0.0);
        let mut rhs = |t: f64, z: &[f64], dz: &mut [f64]| {
            interval.eval(t, &mut forward);
            let (x, y) = forward.split_at(count * n);
            let (costates, acc) = z.split_at(count * (n + 1));
            let (dcostates, dacc) = dz.split_at_mut(count * (n + 1));
            let du = if acc.is_empty() { None } else { Some(dacc) };
            costate_rhs(model, t, control, &weights, x, y, costates, dcostates, du);
        };
        stepper.step(grid.node(m + 1), -h, &mut state, &mut rhs);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: m });
        }
        p[m] = state[..count * n].to_vec();
        q[m] = state[count * n..count * (n + 1)].to_vec();
        if track_control {
            // The accumulator ran backward from zero, so it holds −∫ ∇ᵤH.
            for (c, v) in state[count * (n + 1)..].iter().enumerate() {
                integrals[m * dim_u + c] = -v;
            }
        }
    }
    Ok(CostateBundle { grid, dim: n, p, q, control_integrals: track_control.then_some(integrals) })
}

fn check_pair(traj: &TrajectoryBundle, costates: &CostateBundle, m: usize) -> Result<()> {
    if traj.grid() != costates.grid() || traj.dim() != costates.dim() {
        return Err(Error::GridMismatch("costates do not belong to this trajectory".into()));
    }
    if m > traj.grid().steps() {
        return Err(Error::NodeOutOfRange { index: m, last: traj.grid().steps() });
    }
    Ok(())
}

/// `ψᵢ = Σₖ wₖ pₖᵢ δ_{xₖ}` and `ξ = Σₖ wₖ yₖ qₖ δ_{xₖ}` at node `m`.
pub fn extract_adjoint_measures(
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    m: usize,
) -> Result<AdjointMeasures> {
    check_pair(traj, costates, m)?;
    let n = traj.dim();
    let w = traj.weights();
    let x = traj.positions(m).to_vec();
    let y = traj.masses(m);
    let p = costates.p(m);
    let q = costates.q(m);
    let psi = (0..n)
        .map(|i| {
            let weights = (0..w.len()).map(|k| w[k] * p[k * n + i]).collect();
            SignedParticleMeasure::new(n, x.clone(), weights)
        })
        .collect::<Result<Vec<_>>>()?;
    let xi = SignedParticleMeasure::new(n, x, (0..w.len()).map(|k| w[k] * y[k] * q[k]).collect())?;
    Ok(AdjointMeasures { psi, xi })
}

/// `H(t_m, u) = Σₖ wₖ [pₖ·F(t, u, μ, xₖ) + qₖ yₖ G(t, u, μ, xₖ)]`.
pub fn hamiltonian_v1(
    model: &dyn Model,
    u: &[f64],
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    m: usize,
) -> Result<f64> {
    check_pair(traj, costates, m)?;
    Ok(node_hamiltonian(model, u, traj, costates, m, &traj.measure_unchecked(m)))
}

fn node_hamiltonian(
    model: &dyn Model,
    u: &[f64],
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    m: usize,
    mu: &ParticleMeasure,
) -> f64 {
    let n = traj.dim();
    let t = traj.grid().node(m);
    let (x, y, w) = (traj.positions(m), traj.masses(m), traj.weights());
    let (p, q) = (costates.p(m), costates.q(m));
    let mut f = vec![0.0; n];
    let mut total = 0.0;
    for k in 0..w.len() {
        let xk = &x[k * n..(k + 1) * n];
        model.field(t, u, mu, xk, &mut f);
        let transport: f64 = p[k * n..(k + 1) * n].iter().zip(&f).map(|(a, b)| a * b).sum();
        total += w[k] * (transport + q[k] * y[k] * model.source(t, u, mu, xk));
    }
    total
}

/// `𝓗(t, u) = Σᵢ ⟨ψᵢ, Fⁱ(t, u, μ, ·)⟩ + ⟨ξ, G(t, u, μ, ·)⟩`.
pub fn hamiltonian_v2(model: &dyn Model, t: f64, u: &[f64], adjoint: &AdjointMeasures, mu: &ParticleMeasure) -> f64 {
    let n = model.state_dim();
    let mut f = vec![0.0; n];
    let mut total = 0.0;
    for (i, psi) in adjoint.psi.iter().enumerate() {
        for (x, c) in psi.atoms() {
            model.field(t, u, mu, x, &mut f);
            total += c * f[i];
        }
    }
    for (x, c) in adjoint.xi.atoms() {
        total += c * model.source(t, u, mu, x);
    }
    total
}

/// Gradient of the discretized cost `J(u) = ℓ(μ_T)` with respect to the
/// interval values `u_m`: `g_m = −∫_{t_m}^{t_{m+1}} ∇ᵤH dt`, interval-major.
pub fn control_gradient(
    model: &dyn Model,
    u: &ControlSignal,
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
) -> Result<Vec<f64>> {
    if !model.control_differentiable() {
        return Err(Error::NotControlDifferentiable);
    }
    check_pair(traj, costates, 0)?;
    if u.steps() != traj.grid().steps() {
        return Err(Error::GridMismatch("control and trajectory grids differ".into()));
    }
    let integrals = costates.control_integrals.as_ref().ok_or(Error::NotControlDifferentiable)?;
    Ok(integrals.iter().map(|v| -v).collect())
}

/// Control value used at node `m`: the interval starting there, or the last one at `T`.
pub(crate) fn node_control(u: &ControlSignal, m: usize) -> &[f64] {
    u.at(m.min(u.steps() - 1))
}

/// Hamiltonian at node `m` for every candidate control.
pub(crate) fn node_hamiltonians(
    model: &dyn Model,
    candidates: &[Vec<f64>],
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    m: usize,
) -> Vec<f64> {
    let mu = traj.measure_unchecked(m);
    candidates.iter().map(|v| node_hamiltonian(model, v, traj, costates, m, &mu)).collect()
}

/// `max_m [max_{v ∈ u_grid} H(t_m, v) − H(t_m, u_m)]`, always `≥ 0` when `u_m ∈ u_grid`.
pub fn pmp_residual(
    model: &dyn Model,
    u: &ControlSignal,
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    u_grid: &[Vec<f64>],
) -> Result<f64> {
    Ok(node_residuals(model, u, traj, costates, u_grid)?.into_iter().fold(0.0, f64::max))
}

/// Per-node maximum-condition gaps `max_v H(t_m, v) − H(t_m, u_m)`.
pub fn node_residuals(
    model: &dyn Model,
    u: &ControlSignal,
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    u_grid: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if u_grid.is_empty() {
        return Err(Error::InvalidControl("empty control grid".into()));
    }
    check_pair(traj, costates, 0)?;
    if u.steps() != traj.grid().steps() {
        return Err(Error::GridMismatch("control and trajectory grids differ".into()));
    }
    let nodes: Vec<usize> = (0..=traj.grid().steps()).collect();
    let gaps = nodes
        .par_iter()
        .map(|&m| {
            let mu = traj.measure_unchecked(m);
            let current = node_hamiltonian(model, node_control(u, m), traj, costates, m, &mu);
            let best = u_grid
                .iter()
                .map(|v| node_hamiltonian(model, v, traj, costates, m, &mu))
                .fold(f64::NEG_INFINITY, f64::max);
            best - current
        })
        .collect();
    Ok(gaps)
}

/// Largest `|H_v1 − H_v2| / max(|H_v1|, |H_v2|, 1)` over all nodes and grid controls.
pub fn hamiltonian_version_gap(
    model: &dyn Model,
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    u_grid: &[Vec<f64>],
) -> Result<f64> {
    check_pair(traj, costates, 0)?;
    let mut worst = 0.0f64;
    for m in 0..=traj.grid().steps() {
        let adjoint = extract_adjoint_measures(traj, costates, m)?;
        let mu = traj.measure_unchecked(m);
        let t = traj.grid().node(m);
        for v in u_grid {
            let h1 = node_hamiltonian(model, v, traj, costates, m, &mu);
            let h2 = hamiltonian_v2(model, t, v, &adjoint, &mu);
            worst = worst.max((h1 - h2).abs() / h1.abs().max(h2.abs()).max(1.0));
        }
    }
    Ok(worst)
}

/// Adjoint gradient against finite differences of the discretized cost.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `‖analytic − numeric‖∞ / ‖numeric‖∞`.
    pub rel_error: f64,
}

/// Central differences with step `eps` on every control entry; one-sided
/// where a central stencil would leave `U`.
pub fn gradient_check(
    model: &dyn Model,
    u: &ControlSignal,
    initial: &LiftedEnsemble,
    method: Integrator,
    grid: &TimeGrid,
    eps: f64,
) -> Result<GradientCheck> {
    let traj = integrate_forward(model, u, initial, grid, method)?;
    let costates = integrate_adjoint_backward(model, u, &traj, method)?;
    let analytic = control_gradient(model, u, &traj, &costates)?;
    let cost = |values: Vec<f64>| -> Result<f64> {
        let v = ControlSignal::new(u.dim(), values)?;
        let t = integrate_forward(model, &v, initial, grid, method)?;
        Ok(model.cost().value(&t.terminal_measure()))
    };
    let base = model.cost().value(&traj.terminal_measure());
    let control_box = model.control_box();
    let dim = u.dim();
    let numeric = (0..u.values().len())
        .into_par_iter()
        .map(|i| {
            let c = i % dim;
            let (lo, hi) = (control_box.lower()[c], control_box.upper()[c]);
            let v = u.values()[i];
            let shifted = |delta: f64| {
                let mut values = u.values().to_vec();
                values[i] += delta;
                cost(values)
            };
            match (v - eps >= lo, v + eps <= hi) {
                (true, true) => Ok((shifted(eps)? - shifted(-eps)?) / (2.0 * eps)),
                (false, true) => Ok((shifted(eps)? - base) / eps),
                (true, false) => Ok((base - shifted(-eps)?) / eps),
                (false, false) => Ok(0.0),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let scale = numeric.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gap = analytic.iter().zip(&numeric).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let rel_error = if scale > 0.0 { gap / scale } else { gap };
    Ok(GradientCheck { analytic, numeric, rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::simulate;
    use crate::model::{ControlBox, Cost, LinearModel, ScalarBenchmark};
    use std::f64::consts::E;

    fn benchmark_run(
        x0: f64,
        v: f64,
        steps: usize,
    ) -> (ScalarBenchmark, ControlSignal, TrajectoryBundle, CostateBundle) {
        let model = ScalarBenchmark::new();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let u = ControlSignal::constant(steps, &[v]);
        let theta = ParticleMeasure::from_atoms_1d(&[(x0, 1.0)]).unwrap();
        let traj = simulate(&model, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&model, &u, &traj, Integrator::Rk4).unwrap();
        (model, u, traj, co)
    }

    #[test]
    fn benchmark_terminal_values() {
        let (model, _, traj, co) = benchmark_run(2.0, -1.0, 100);
        let (p, q) = terminal_costate(&model, &traj);
        assert!((p[0] + E).abs() < 1e-8);
        assert!((q[0] + 0.5).abs() < 1e-12);
        let adj = extract_adjoint_measures(&traj, &co, 100).unwrap();
        assert!((adj.psi_totals()[0] + E).abs() < 1e-8);
        assert!((adj.xi_total() + E / 2.0).abs() < 1e-8);
    }

    #[test]
    fn benchmark_costate_closed_form() {
        let (_, _, traj, co) = benchmark_run(2.0, -1.0, 100);
        for m in 0..=100 {
            let t = traj.grid().node(m);
            assert!((co.p(m)[0] + E).abs() < 1e-8);
            assert!((co.q(m)[0] + 0.5 * (1.0 - t).exp()).abs() < 1e-8);
            // ψ(ℝ) and ξ(ℝ) carry no source terms.
            let adj = extract_adjoint_measures(&traj, &co, m).unwrap();
            assert!((adj.xi_total() + E / 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn benchmark_hamiltonian_is_affine_in_u() {
        let (model, _, traj, co) = benchmark_run(2.0, -1.0, 50);
        for v in [-1.0, -0.3, 0.0, 1.0] {
            let h = hamiltonian_v1(&model, &[v], &traj, &co, 50).unwrap();
            assert!((h + v * E / 2.0).abs() < 1e-8);
            let adj = extract_adjoint_measures(&traj, &co, 50).unwrap();
            let h2 = hamiltonian_v2(&model, 1.0, &[v], &adj, &traj.measure_at(50).unwrap());
            assert!((h - h2).abs() <= 1e-12 * h.abs().max(1.0));
        }
    }

    #[test]
    fn benchmark_extremal_has_zero_residual() {
        let (model, u, traj, co) = benchmark_run(2.0, -1.0, 50);
        let grid = model.control_box().grid(101);
        assert!(pmp_residual(&model, &u, &traj, &co, &grid).unwrap() <= 1e-8);
        // From δ₃ the switching function at u ≡ 0 is ψ(ℝ) − ξ(ℝ) = −3 + 4.5.
        let (model, u, traj, co) = benchmark_run(3.0, 0.0, 50);
        assert!(pmp_residual(&model, &u, &traj, &co, &grid).unwrap() > 1e-3);
    }

    #[test]
    fn zero_cost_gives_zero_adjoint() {
        let model = ScalarBenchmark::new().with_cost(Cost::Zero);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let u = ControlSignal::constant(20, &[0.4]);
        let theta = ParticleMeasure::from_atoms_1d(&[(1.0, 0.5), (-2.0, 0.5)]).unwrap();
        let traj = simulate(&model, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&model, &u, &traj, Integrator::Rk4).unwrap();
        assert_eq!(co.max_abs(), 0.0);
        assert!(control_gradient(&model, &u, &traj, &co).unwrap().iter().all(|g| *g == 0.0));
        assert_eq!(pmp_residual(&model, &u, &traj, &co, &model.control_box().grid(11)).unwrap(), 0.0);
    }

    #[test]
    fn linear_field_matches_matrix_exponential() {
        // A = [[0, 1], [−1, 0]] rotates; pₖ(t) = pₖ(T) e^{A(T−t)}.
        let model =
            LinearModel::new(2, vec![0.0, 1.0, -1.0, 0.0], 0.0).unwrap().with_cost(Cost::quadratic(vec![0.0, 0.0]));
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let u = ControlSignal::constant(100, &[0.0]);
        let theta = ParticleMeasure::new(2, vec![1.0, 0.5], vec![1.0]).unwrap();
        let traj = simulate(&model, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&model, &u, &traj, Integrator::Rk4).unwrap();
        let pt = co.p(100).to_vec();
        for m in [0, 37, 99] {
            let s = 1.0 - grid.node(m);
            // e^{As} = [[cos s, sin s], [−sin s, cos s]]; row vector times it.
            let expected = [pt[0] * s.cos() - pt[1] * s.sin(), pt[0] * s.sin() + pt[1] * s.cos()];
            assert!((co.p(m)[0] - expected[0]).abs() < 1e-9);
            assert!((co.p(m)[1] - expected[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_particle_psi_components() {
        let model = LinearModel::constant_source(2, 0.0).with_cost(Cost::quadratic(vec![-1.0, 0.0]));
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let u = ControlSignal::constant(4, &[0.0]);
        let theta = ParticleMeasure::new(2, vec![0.0, 3.0], vec![1.0]).unwrap();
        let traj = simulate(&model, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&model, &u, &traj, Integrator::Rk4).unwrap();
        assert_eq!(co.p(4), &[-1.0, -3.0]);
        let adj = extract_adjoint_measures(&traj, &co, 4).unwrap();
        assert_eq!(adj.psi[0].weights(), &[-1.0]);
        assert_eq!(adj.psi[1].weights(), &[-3.0]);
        assert!(extract_adjoint_measures(&traj, &co, 5).is_err());
    }

    #[test]
    fn gradient_matches_closed_form_on_benchmark() {
        // J(a) = ½(x₀ + a)² e^{−a} with a = Σ h u_m, so ∂J/∂u_m = h (x₀ + a)(1 − (x₀ + a)/2) e^{−a}.
        let model = ScalarBenchmark::new().with_control_box(ControlBox::symmetric(1, 2.0));
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let u = ControlSignal::new(1, (0..100).map(|m| (m as f64 * 0.06).sin() * 0.8).collect()).unwrap();
        let theta = ParticleMeasure::from_atoms_1d(&[(2.0, 1.0)]).unwrap();
        let traj = simulate(&model, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&model, &u, &traj, Integrator::Rk4).unwrap();
        let g = control_gradient(&model, &u, &traj, &co).unwrap();
        let h = grid.step_size();
        let a: f64 = u.values().iter().sum::<f64>() * h;
        let z = 2.0 + a;
        let expected = h * z * (1.0 - z / 2.0) * (-a).exp();
        // The closed form is the continuous cost; the per-interval quadrature is accurate to O(h⁴) relative.
        for gm in g {
            assert!((gm - expected).abs() < 1e-6 * expected.abs(), "{gm} vs {expected}");
        }
    }

    #[test]
    fn gradient_requires_control_derivatives() {
        struct Opaque(ScalarBenchmark);
        impl Model for Opaque {
            fn name(&self) -> &str {
                "opaque"
            }
            fn state_dim(&self) -> usize {
                1
            }
            fn control_box(&self) -> &ControlBox {
                self.0.control_box()
            }
            fn field(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
                self.0.field(t, u, mu, x, out)
            }
            fn source(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64]) -> f64 {
                self.0.source(t, u, mu, x)
            }
            fn field_dx(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
                self.0.field_dx(t, u, mu, x, out)
            }
            fn source_dx(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
                self.0.source_dx(t, u, mu, x, out)
            }
            fn field_flat(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]) {
                self.0.field_flat(t, u, mu, x, xp, out)
            }
            fn source_flat(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], xp: &[f64]) -> f64 {
                self.0.source_flat(t, u, mu, x, xp)
            }
            fn field_intrinsic(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]) {
                self.0.field_intrinsic(t, u, mu, x, xp, out)
            }
            fn source_intrinsic(
                &self,
                t: f64,
                u: &[f64],
                mu: &ParticleMeasure,
                x: &[f64],
                xp: &[f64],
                out: &mut [f64],
            ) {
                self.0.source_intrinsic(t, u, mu, x, xp, out)
            }
            fn cost(&self) -> &Cost {
                self.0.cost()
            }
        }
        let model = Opaque(ScalarBenchmark::new());
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let u = ControlSignal::constant(4, &[0.0]);
        let theta = ParticleMeasure::from_atoms_1d(&[(1.0, 1.0)]).unwrap();
        let traj = simulate(&model, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&model, &u, &traj, Integrator::Rk4).unwrap();
        let err = control_gradient(&model, &u, &traj, &co).unwrap_err();
        assert_eq!(err.to_string(), "model not u-differentiable");
    }

    #[test]
    fn nonlocal_gradient_matches_finite_differences() {
        use crate::model::{InteractionKernel, OpinionDynamics, SourceKernel};
        let model = OpinionDynamics::new(
            2,
            InteractionKernel::Gaussian { strength: 0.8, width: 1.5 },
            SourceKernel::Affinity { strength: 0.6, width: 1.0 },
        )
        .unwrap()
        .with_control(ControlBox::symmetric(2, 1.0))
        .unwrap()
        .with_cost(Cost::CenterOfMass { target: vec![0.5, -0.2], scale: 1.0 });
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let theta = ParticleMeasure::new(2, vec![0.0, 0.3, 1.0, -0.5, -0.7, 0.9], vec![0.5, 0.3, 0.4]).unwrap();
        let u = ControlSignal::new(2, (0..32).map(|i| 0.4 * (i as f64 * 0.7).cos()).collect()).unwrap();
        let cost = |u: &ControlSignal| {
            let traj = simulate(&model, u, &theta, &grid, Integrator::Rk4).unwrap();
            model.cost().value(&traj.terminal_measure())
        };
        let traj = simulate(&model, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&model, &u, &traj, Integrator::Rk4).unwrap();
        let g = control_gradient(&model, &u, &traj, &co).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..u.values().len() {
            let mut plus = u.values().to_vec();
            let mut minus = plus.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let fd = (cost(&ControlSignal::new(2, plus).unwrap()) - cost(&ControlSignal::new(2, minus).unwrap()))
                / (2.0 * eps);
            worst = worst.max((fd - g[i]).abs());
            scale = scale.max(fd.abs());
        }
        assert!(worst / scale < 1e-4, "relative error {}", worst / scale);
    }
}
