//! Forward solve of the balance law along characteristics.
//!
//! Each particle of the lifted ensemble follows
//!
//! ```text
//! ẋₖ = F(t, u, μₜ, xₖ),    ẏₖ = yₖ G(t, u, μₜ, xₖ),    μₜ = Σⱼ wⱼ yⱼ δ_{xⱼ}
//! ```
//!
//! with the nonlocal coupling re-evaluated at every Runge–Kutta stage. The
//! base weights `wₖ` stay fixed; sources and sinks act on the multipliers `yₖ`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{Integrator, Stepper};
use crate::measure::{LiftedEnsemble, ParticleMeasure};
use crate::model::{ControlBox, Model};

/// Particle counts from which per-particle work is spread over threads.
pub(crate) const PARALLEL_THRESHOLD: usize = 64;

/// Uniform grid `0 = t₀ < … < t_M = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::GridMismatch(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::GridMismatch("at least one time step is required".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, m: usize) -> f64 {
        if m == self.steps {
            self.horizon
        } else {
            m as f64 * self.step_size()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|m| self.node(m))
    }
}

/// Piecewise-constant control, `u(t) = u_m` on `[t_m, t_{m+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    dim: usize,
    values: Vec<f64>,
}

impl ControlSignal {
    /// `values` holds `steps × dim` entries, interval-major.
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidControl(format!("{} values do not split into {dim}-vectors", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidControl("non-finite control value".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn constant(steps: usize, u: &[f64]) -> Self {
        Self { dim: u.len(), values: u.repeat(steps) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn at(&self, m: usize) -> &[f64] {
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    pub fn at_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.values[m * self.dim..(m + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest componentwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn check(&self, grid: &TimeGrid, control_box: &ControlBox) -> Result<()> {
        if self.steps() != grid.steps() {
            return Err(Error::GridMismatch(format!(
                "control has {} intervals, grid has {}",
                self.steps(),
                grid.steps()
            )));
        }
        if self.dim != control_box.dim() {
            return Err(Error::InvalidControl(format!(
                "control dimension {} does not match the model's {}",
                self.dim,
                control_box.dim()
            )));
        }
        if let Some(m) = (0..self.steps()).find(|&m| !control_box.contains(self.at(m))) {
            return Err(Error::InvalidControl(format!("value {:?} at interval {m} lies outside U", self.at(m))));
        }
        Ok(())
    }
}

/// Lifted particle states at every grid node.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    grid: TimeGrid,
    dim: usize,
    weights: Vec<f64>,
    positions: Vec<Vec<f64>>,
    masses: Vec<Vec<f64>>,
    /// Atom masses `wₖ yₖ` integrated directly as `ṁₖ = mₖ G`.
    atom_masses: Vec<Vec<f64>>,
}

impl TrajectoryBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn positions(&self, m: usize) -> &[f64] {
        &self.positions[m]
    }

    pub fn masses(&self, m: usize) -> &[f64] {
        &self.masses[m]
    }

    fn check_node(&self, m: usize) -> Result<()> {
        if m > self.grid.steps() {
            return Err(Error::NodeOutOfRange { index: m, last: self.grid.steps() });
        }
        Ok(())
    }

    pub fn ensemble(&self, m: usize) -> Result<LiftedEnsemble> {
        self.check_node(m)?;
        Ok(LiftedEnsemble::from_parts_unchecked(
            self.dim,
            self.weights.clone(),
            self.positions[m].clone(),
            self.masses[m].clone(),
        ))
    }

    /// `μ_{t_m} = β(ρ_{t_m})`.
    pub fn measure_at(&self, m: usize) -> Result<ParticleMeasure> {
        self.check_node(m)?;
        Ok(self.measure_unchecked(m))
    }

    pub(crate) fn measure_unchecked(&self, m: usize) -> ParticleMeasure {
        let weights = self.weights.iter().zip(&self.masses[m]).map(|(w, y)| w * y).collect();
        ParticleMeasure::from_raw(self.dim, self.positions[m].clone(), weights)
    }

    pub fn terminal_measure(&self) -> ParticleMeasure {
        self.measure_unchecked(self.grid.steps())
    }

    /// `(t_m, μ_{t_m}(ℝⁿ))` at every node.
    pub fn mass_curve(&self) -> Vec<(f64, f64)> {
        (0..=self.grid.steps()).map(|m| (self.grid.node(m), self.measure_unchecked(m).total_mass())).collect()
    }

    /// Largest gap between the projected masses `wₖ yₖ` and the directly integrated atom masses.
    pub fn projection_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (ys, ms) in self.masses.iter().zip(&self.atom_masses) {
            for ((w, y), m) in self.weights.iter().zip(ys).zip(ms) {
                worst = worst.max((w * y - m).abs());
            }
        }
        worst
    }

    pub fn support_radius(&self, m: usize) -> f64 {
        self.ensemble(m).map(|e| e.support_radius()).unwrap_or(f64::NAN)
    }

    /// Bound `R₀ + (C(1 + sup mass) + C sup y)·T` implied by `|F| ≤ C(1 + μ(ℝⁿ))`, `|G| ≤ C`.
    pub fn support_bound(&self, constant: f64) -> f64 {
        let sup_mass = self.mass_curve().into_iter().map(|(_, m)| m).fold(0.0, f64::max);
        let sup_y = self.masses.iter().flatten().copied().fold(0.0, f64::max);
        self.support_radius(0) + (constant * (1.0 + sup_mass) + constant * sup_y) * self.grid.horizon()
    }
}

/// `ρ₀ = ϑ ⊗ δ_c` after normalization: `wₖ = ϑₖ / ϑ(ℝⁿ)`, `yₖ = ϑ(ℝⁿ)`, so `β(ρ₀) = ϑ`.
pub fn discretize_initial(theta: &ParticleMeasure) -> Result<LiftedEnsemble> {
    let mass = theta.total_mass();
    if mass.is_nan() || mass <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let weights: Vec<f64> = theta.weights().iter().map(|w| w / mass).collect();
    // Normalization roundoff is pushed onto the largest weight so Σ wₖ = 1 holds tightly.
    let mut weights = weights;
    let drift = 1.0 - weights.iter().sum::<f64>();
    if let Some(k) = (0..weights.len()).max_by(|&a, &b| weights[a].total_cmp(&weights[b])) {
        weights[k] += drift;
    }
    LiftedEnsemble::new(theta.dim(), weights, theta.points().to_vec(), vec![mass; theta.len()])
}

/// Evaluates `F` and `G` at every particle position against a common `μ`.
pub(crate) fn field_and_source(
    model: &dyn Model,
    t: f64,
    u: &[f64],
    mu: &ParticleMeasure,
    positions: &[f64],
    field: &mut [f64],
    source: &mut [f64],
) {
    let n = model.state_dim();
    let work = |(k, (f, g)): (usize, (&mut [f64], &mut f64))| {
        let x = &positions[k * n..(k + 1) * n];
        model.field(t, u, mu, x, f);
        *g = model.source(t, u, mu, x);
    };
    if model.is_nonlocal() && source.len() >= PARALLEL_THRESHOLD {
        field.par_chunks_mut(n).zip(source.par_iter_mut()).enumerate().for_each(work);
    } else {
        field.chunks_mut(n).zip(source.iter_mut()).enumerate().for_each(work);
    }
}

/// Integrates the coupled particle system on `grid` under the control `u`.
pub fn integrate_forward(
    model: &dyn Model,
    u: &ControlSignal,
    initial: &LiftedEnsemble,
    grid: &TimeGrid,
    method: Integrator,
) -> Result<TrajectoryBundle> {
    let n = model.state_dim();
    if initial.dim() != n {
        return Err(Error::Dimension(format!("ensemble dimension {} vs model {}", initial.dim(), n)));
    }
    u.check(grid, model.control_box())?;
    let count = initial.len();
    let weights = initial.weights().to_vec();

    // State layout: [x (count·n) | y (count) | atom masses (count)].
    let mut state = Vec::with_capacity(count * (n + 2));
    state.extend_from_slice(initial.positions());
    state.extend_from_slice(initial.masses());
    state.extend(weights.iter().zip(initial.masses()).map(|(w, y)| w * y));

    let mut positions = Vec::with_capacity(grid.steps() + 1);
    let mut masses = Vec::with_capacity(grid.steps() + 1);
    let mut atom_masses = Vec::with_capacity(grid.steps() + 1);
    let mut record = |state: &[f64]| {
        positions.push(state[..count * n].to_vec());
        masses.push(state[count * n..count * (n + 1)].to_vec());
        atom_masses.push(state[count * (n + 1)..].to_vec());
    };
    record(&state);

    let mut stepper = Stepper::new(method, state.len());
    let mut source = vec![0.0; count];
    let h = grid.step_size();
    for m in 0..grid.steps() {
        let control = u.at(m);
        let mut rhs = |t: f64, z: &[f64], dz: &mut [f64]| {
            let (x, rest) = z.split_at(count * n);
            let (y, book) = rest.split_at(count);
            let mu = ParticleMeasure::from_raw(n, x.to_vec(), weights.iter().zip(y).map(|(w, y)| w * y).collect());
            let (dx, rest) = dz.split_at_mut(count * n);
            let (dy, dbook) = rest.split_at_mut(count);
            field_and_source(model, t, control, &mu, x, dx, &mut source);
            for k in 0..count {
                dy[k] = y[k] * source[k];
                dbook[k] = book[k] * source[k];
            }
        };
        stepper.step(grid.node(m), h, &mut state, &mut rhs);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: m });
        }
        let ys = &state[count * n..count * (n + 1)];
        if let Some(k) = (0..count).find(|&k| initial.masses()[k] > 0.0 && ys[k] <= 0.0) {
            return Err(Error::NonPositiveMass { step: m, particle: k });
        }
        record(&state);
    }
    Ok(TrajectoryBundle { grid: *grid, dim: n, weights, positions, masses, atom_masses })
}

/// Per-step residuals of the weak formulation
/// `d/dt ⟨μₜ, φ⟩ = ⟨μₜ, ∇φ·F + G φ⟩` with midpoint quadrature.
#[derive(Debug, Clone)]
pub struct WeakFormResidual {
    pub per_step: Vec<f64>,
    pub max: f64,
}

pub fn weak_form_residual<P, D>(
    traj: &TrajectoryBundle,
    model: &dyn Model,
    u: &ControlSignal,
    phi: P,
    grad_phi: D,
) -> Result<WeakFormResidual>
where
    P: Fn(&[f64]) -> f64,
    D: Fn(&[f64], &mut [f64]),
{
    let grid = traj.grid();
    if u.steps() != grid.steps() {
        return Err(Error::GridMismatch("control and trajectory grids differ".into()));
    }
    let n = traj.dim();
    let count = traj.particles();
    let h = grid.step_size();
    let mut field = vec![0.0; count * n];
    let mut source = vec![0.0; count];
    let mut grad = vec![0.0; n];
    let mut per_step = Vec::with_capacity(grid.steps());
    for m in 0..grid.steps() {
        let before = traj.measure_unchecked(m).integrate(&phi);
        let after = traj.measure_unchecked(m + 1).integrate(&phi);
        let x_mid: Vec<f64> = traj.positions(m).iter().zip(traj.positions(m + 1)).map(|(a, b)| 0.5 * (a + b)).collect();
        let y_mid: Vec<f64> = traj.masses(m).iter().zip(traj.masses(m + 1)).map(|(a, b)| 0.5 * (a + b)).collect();
        let mu_mid = ParticleMeasure::from_raw(
            n,
            x_mid.clone(),
            traj.weights().iter().zip(&y_mid).map(|(w, y)| w * y).collect(),
        );
        let t_mid = grid.node(m) + 0.5 * h;
        field_and_source(model, t_mid, u.at(m), &mu_mid, &x_mid, &mut field, &mut source);
        let mut rate = 0.0;
        for k in 0..count {
            let x = &x_mid[k * n..(k + 1) * n];
            grad_phi(x, &mut grad);
            let transport: f64 = grad.iter().zip(&field[k * n..(k + 1) * n]).map(|(g, f)| g * f).sum();
            rate += mu_mid.weights()[k] * (transport + source[k] * phi(x));
        }
        per_step.push(((after - before) / h - rate).abs());
    }
    let max = per_step.iter().copied().fold(0.0, f64::max);
    Ok(WeakFormResidual { per_step, max })
}

/// `(t, μₜ(ℝⁿ))` at every node.
pub fn mass_curve(traj: &TrajectoryBundle) -> Vec<(f64, f64)> {
    traj.mass_curve()
}

/// Discretizes `ϑ` and integrates forward.
pub fn simulate(
    model: &dyn Model,
    u: &ControlSignal,
    theta: &ParticleMeasure,
    grid: &TimeGrid,
    method: Integrator,
) -> Result<TrajectoryBundle> {
    integrate_forward(model, u, &discretize_initial(theta)?, grid, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InteractionKernel, LinearModel, OpinionDynamics, ScalarBenchmark, SourceKernel};
    use std::f64::consts::E;

    fn m1(atoms: &[(f64, f64)]) -> ParticleMeasure {
        ParticleMeasure::from_atoms_1d(atoms).unwrap()
    }

    #[test]
    fn discretize_examples() {
        let e = discretize_initial(&m1(&[(2.0, 1.0)])).unwrap();
        assert_eq!((e.weights(), e.positions(), e.masses()), (&[1.0][..], &[2.0][..], &[1.0][..]));
        let e = discretize_initial(&m1(&[(0.0, 0.5), (4.0, 0.5)])).unwrap();
        assert_eq!(e.weights(), &[0.5, 0.5]);
        assert_eq!(e.masses(), &[1.0, 1.0]);
        let e = discretize_initial(&m1(&[(1.5, 2.0)])).unwrap();
        assert_eq!((e.weights(), e.masses()), (&[1.0][..], &[2.0][..]));
        assert!(matches!(discretize_initial(&m1(&[(0.0, 0.0)])), Err(Error::ZeroMass)));
    }

    #[test]
    fn frozen_dynamics_stay_constant() {
        let model = LinearModel::constant_source(1, 0.0);
        let theta = m1(&[(0.3, 0.2), (-1.0, 0.8)]);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let traj = simulate(&model, &ControlSignal::constant(10, &[0.0]), &theta, &grid, Integrator::Rk4).unwrap();
        for m in 0..=10 {
            assert_eq!(traj.measure_at(m).unwrap(), theta);
        }
    }

    #[test]
    fn constant_source_gives_exponential_masses() {
        let model = LinearModel::constant_source(1, 0.7);
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let traj = simulate(&model, &ControlSignal::constant(100, &[0.0]), &m1(&[(0.0, 1.0)]), &grid, Integrator::Rk4)
            .unwrap();
        assert!((traj.masses(100)[0] - 0.7f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn scalar_benchmark_closed_form() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let u = ControlSignal::constant(50, &[-1.0]);
        let traj = simulate(&ScalarBenchmark::new(), &u, &m1(&[(2.0, 1.0)]), &grid, Integrator::Rk4).unwrap();
        assert!((traj.positions(50)[0] - 1.0).abs() < 1e-13);
        // RK4 local error on ẏ = y is about e h⁴ / 120 per unit time.
        assert!((traj.masses(50)[0] - E).abs() < 1e-8);
        let mu = traj.measure_at(50).unwrap();
        assert!((mu.total_mass() - E).abs() < 1e-8);
        assert!((mu.point(0)[0] - 1.0).abs() < 1e-13);
        for (t, mass) in traj.mass_curve() {
            assert!((mass - t.exp()).abs() < 1e-8);
        }
        assert!(traj.projection_defect() < 1e-12);
        assert!(matches!(traj.measure_at(51), Err(Error::NodeOutOfRange { .. })));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let theta = m1(&[(0.0, 1.0)]);
        let model = ScalarBenchmark::new();
        let short = ControlSignal::constant(3, &[0.0]);
        assert!(matches!(simulate(&model, &short, &theta, &grid, Integrator::Rk4), Err(Error::GridMismatch(_))));
        let outside = ControlSignal::constant(4, &[1.5]);
        assert!(matches!(simulate(&model, &outside, &theta, &grid, Integrator::Rk4), Err(Error::InvalidControl(_))));
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let model = LinearModel::new(1, vec![1e6], 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let err = simulate(&model, &ControlSignal::constant(100, &[0.0]), &m1(&[(1.0, 1.0)]), &grid, Integrator::Euler)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn overshooting_sink_violates_positivity() {
        let model = LinearModel::constant_source(1, -30.0);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let err = simulate(&model, &ControlSignal::constant(10, &[0.0]), &m1(&[(1.0, 1.0)]), &grid, Integrator::Euler)
            .unwrap_err();
        assert!(matches!(err, Error::NonPositiveMass { step: 0, particle: 0 }));
    }

    #[test]
    fn weak_form_mass_balance_and_frozen() {
        let frozen = LinearModel::constant_source(1, 0.0);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let u = ControlSignal::constant(20, &[0.0]);
        let theta = m1(&[(0.0, 0.5), (1.0, 0.5)]);
        let traj = simulate(&frozen, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let r = weak_form_residual(&traj, &frozen, &u, |x| x[0].sin(), |x, g| g[0] = x[0].cos()).unwrap();
        assert_eq!(r.max, 0.0);

        let opinion = OpinionDynamics::new(
            1,
            InteractionKernel::Gaussian { strength: 1.0, width: 1.0 },
            SourceKernel::Affinity { strength: 0.5, width: 1.0 },
        )
        .unwrap();
        let traj = simulate(&opinion, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let r = weak_form_residual(&traj, &opinion, &u, |_| 1.0, |_, g| g.fill(0.0)).unwrap();
        assert!(r.max < 1e-3, "{}", r.max);
    }

    #[test]
    fn support_stays_within_a_priori_bound() {
        let model = ScalarBenchmark::new();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let theta = m1(&[(-1.0, 0.3), (0.5, 0.7)]);
        for v in [-1.0, 0.0, 1.0] {
            let traj = simulate(&model, &ControlSignal::constant(100, &[v]), &theta, &grid, Integrator::Rk4).unwrap();
            let bound = traj.support_bound(model.sublinearity_constant().unwrap());
            for m in 0..=100 {
                assert!(traj.support_radius(m) <= bound);
            }
        }
    }
}
