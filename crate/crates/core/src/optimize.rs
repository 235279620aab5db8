//! Indirect optimization through the maximum principle.
//!
//! Both methods alternate a forward sweep, a backward costate sweep and a
//! control update. The method of successive approximations (MSA) moves each
//! interval towards the pointwise maximizer of the Hamiltonian over a finite
//! control grid; projected gradient descends the discretized cost using the
//! adjoint gradient.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{control_gradient, integrate_adjoint_backward, node_hamiltonians, pmp_residual, CostateBundle};
use crate::error::{Error, Result};
use crate::forward::{discretize_initial, integrate_forward, ControlSignal, TimeGrid, TrajectoryBundle};
use crate::integrate::Integrator;
use crate::measure::{LiftedEnsemble, ParticleMeasure};
use crate::model::Model;

/// Relative tolerance under which two Hamiltonian values count as a tie.
const TIE_TOL: f64 = 1e-12;

/// Boxes with more vertices than this skip the constant-candidate comparison.
const MAX_CANDIDATES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Msa,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub cost_tol: f64,
    /// Relaxation `λ ∈ (0, 1]` of the MSA update; halved while the cost fails to decrease.
    pub damping: f64,
    /// Points per control dimension of the grid the Hamiltonian is maximized over.
    pub grid_resolution: usize,
    /// Initial step of the projected-gradient line search.
    pub step: f64,
    pub armijo_c: f64,
    /// Smallest relaxation or step tried before declaring a stall.
    pub min_step: f64,
    pub integrator: Integrator,
    /// Compare constant box-vertex controls that satisfy the maximum condition.
    pub compare_candidates: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Msa,
            max_iters: 50,
            residual_tol: 1e-8,
            cost_tol: 1e-12,
            damping: 1.0,
            grid_resolution: 101,
            step: 1.0,
            armijo_c: 1e-4,
            min_step: 1e-10,
            integrator: Integrator::Rk4,
            compare_candidates: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("residual_tol", self.residual_tol),
            ("cost_tol", self.cost_tol),
            ("step", self.step),
            ("min_step", self.min_step),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("optimizer.{name} must be positive, got {v}")));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("optimizer.damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Config(format!("optimizer.armijo_c must lie in (0, 1), got {}", self.armijo_c)));
        }
        if self.grid_resolution < 2 {
            return Err(Error::Config("optimizer.grid_resolution must be at least 2".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("optimizer.max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Maximum condition met on the control grid.
    Converged,
    /// Cost change fell below `cost_tol`.
    CostStalled,
    /// No relaxation or step down to `min_step` decreased the cost.
    StepStalled,
    MaxIterations,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub residual: f64,
    /// Accepted relaxation (MSA) or step (gradient); absent on the last record.
    pub step: Option<f64>,
}

/// A constant control at a vertex of `U`, evaluated on its own forward–backward pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub control: Vec<f64>,
    pub cost: f64,
    pub residual: f64,
    pub extremal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub method: Method,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_cost: f64,
    pub final_residual: f64,
    #[serde(skip)]
    pub control: Option<ControlSignal>,
    pub final_control: Vec<f64>,
    pub control_dim: usize,
    pub candidates: Vec<Candidate>,
    /// The final control was replaced by a cheaper extremal candidate.
    pub adopted_candidate: bool,
    /// Every Hamiltonian on the grid vanished at the final iterate.
    pub degenerate: bool,
    pub wall_time_secs: f64,
}

impl OptimizationReport {
    pub fn final_control(&self) -> ControlSignal {
        match &self.control {
            Some(u) => u.clone(),
            None => {
                ControlSignal::new(self.control_dim, self.final_control.clone()).expect("report holds a valid control")
            }
        }
    }
}

/// Everything one forward–backward pass produces.
struct Sweep {
    traj: TrajectoryBundle,
    costates: CostateBundle,
    cost: f64,
    residual: f64,
}

struct Problem<'a> {
    model: &'a dyn Model,
    initial: LiftedEnsemble,
    grid: TimeGrid,
    config: &'a OptimizerConfig,
    u_grid: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    fn new(
        model: &'a dyn Model,
        theta: &ParticleMeasure,
        grid: &TimeGrid,
        config: &'a OptimizerConfig,
    ) -> Result<Self> {
        config.validate()?;
        model.cost().validate(model.state_dim())?;
        let u_grid = model.control_box().grid(config.grid_resolution);
        Ok(Self { model, initial: discretize_initial(theta)?, grid: *grid, config, u_grid })
    }

    fn forward(&self, u: &ControlSignal) -> Result<TrajectoryBundle> {
        integrate_forward(self.model, u, &self.initial, &self.grid, self.config.integrator)
    }

    fn cost(&self, u: &ControlSignal) -> Result<f64> {
        Ok(self.model.cost().value(&self.forward(u)?.terminal_measure()))
    }

    fn sweep(&self, u: &ControlSignal) -> Result<Sweep> {
        let traj = self.forward(u)?;
        let costates = integrate_adjoint_backward(self.model, u, &traj, self.config.integrator)?;
        let cost = self.model.cost().value(&traj.terminal_measure());
        let residual = pmp_residual(self.model, u, &traj, &costates, &self.u_grid)?;
        Ok(Sweep { traj, costates, cost, residual })
    }

    /// Per-interval maximizer of the node Hamiltonian; ties go to the first grid point.
    fn maximizers(&self, sweep: &Sweep) -> (ControlSignal, bool) {
        let per_node: Vec<(usize, bool)> = (0..self.grid.steps())
            .into_par_iter()
            .map(|m| {
                let values = node_hamiltonians(self.model, &self.u_grid, &sweep.traj, &sweep.costates, m);
                let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let index = values.iter().position(|v| *v >= best - TIE_TOL * scale).unwrap_or(0);
                (index, scale == 0.0)
            })
            .collect();
        let dim = self.model.control_dim();
        let mut values = Vec::with_capacity(self.grid.steps() * dim);
        for (index, _) in &per_node {
            values.extend_from_slice(&self.u_grid[*index]);
        }
        let degenerate = per_node.iter().all(|(_, zero)| *zero);
        (ControlSignal::new(dim, values).expect("grid points are finite"), degenerate)
    }

    fn relax(&self, u: &ControlSignal, target: &ControlSignal, lambda: f64) -> ControlSignal {
        let values = u.values().iter().zip(target.values()).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
        let mut next = ControlSignal::new(u.dim(), values).expect("convex combination stays finite");
        self.clip(&mut next);
        next
    }

    fn clip(&self, u: &mut ControlSignal) {
        let control_box = self.model.control_box();
        for m in 0..u.steps() {
            control_box.clip(u.at_mut(m));
        }
    }

    /// Halves `λ` from `config.damping` until the relaxed MSA update lowers the cost.
    fn msa_update(&self, u: &ControlSignal, sweep: &Sweep) -> Result<Option<(ControlSignal, f64)>> {
        let (target, _) = self.maximizers(sweep);
        let mut lambda = self.config.damping;
        while lambda >= self.config.min_step {
            let next = self.relax(u, &target, lambda);
            if self.cost(&next)? < sweep.cost {
                return Ok(Some((next, lambda)));
            }
            lambda *= 0.5;
        }
        Ok(None)
    }

    /// Armijo backtracking along `−g/h`, projected onto `U`.
    fn gradient_update(&self, u: &ControlSignal, sweep: &Sweep) -> Result<Option<(ControlSignal, f64)>> {
        let g = control_gradient(self.model, u, &sweep.traj, &sweep.costates)?;
        let h = self.grid.step_size();
        let mut alpha = self.config.step;
        while alpha >= self.config.min_step {
            let values = u.values().iter().zip(&g).map(|(v, gm)| v - alpha * gm / h).collect();
            let mut next = ControlSignal::new(u.dim(), values)?;
            self.clip(&mut next);
            let decrease: f64 = g.iter().zip(next.values()).zip(u.values()).map(|((gm, a), b)| gm * (a - b)).sum();
            if decrease == 0.0 {
                return Ok(None);
            }
            if self.cost(&next)? <= sweep.cost + self.config.armijo_c * decrease {
                return Ok(Some((next, alpha)));
            }
            alpha *= 0.5;
        }
        Ok(None)
    }

    fn candidates(&self) -> Result<Vec<Candidate>> {
        let vertices = self.model.control_box().vertices();
        if vertices.len() > MAX_CANDIDATES {
            return Ok(Vec::new());
        }
        vertices
            .into_par_iter()
            .map(|v| {
                let sweep = self.sweep(&ControlSignal::constant(self.grid.steps(), &v))?;
                Ok(Candidate {
                    control: v,
                    cost: sweep.cost,
                    residual: sweep.residual,
                    extremal: sweep.residual <= self.config.residual_tol,
                })
            })
            .collect()
    }
}

/// One MSA sweep: forward, backward, then `u_m ← (1−λ)u_m + λ argmax_v H(t_m, v)`
/// with `λ = config.damping`.
pub fn msa_sweep(
    model: &dyn Model,
    u: &ControlSignal,
    theta: &ParticleMeasure,
    grid: &TimeGrid,
    config: &OptimizerConfig,
) -> Result<ControlSignal> {
    let problem = Problem::new(model, theta, grid, config)?;
    let sweep = problem.sweep(u)?;
    let (target, _) = problem.maximizers(&sweep);
    Ok(problem.relax(u, &target, config.damping))
}

/// One projected-gradient step with Armijo backtracking. Returns the new
/// control and the accepted step, or `None` when no step decreased the cost.
pub fn projected_gradient_step(
    model: &dyn Model,
    u: &ControlSignal,
    theta: &ParticleMeasure,
    grid: &TimeGrid,
    config: &OptimizerConfig,
) -> Result<Option<(ControlSignal, f64)>> {
    if !model.control_differentiable() {
        return Err(Error::NotControlDifferentiable);
    }
    let problem = Problem::new(model, theta, grid, config)?;
    let sweep = problem.sweep(u)?;
    problem.gradient_update(u, &sweep)
}

/// Minimizes `ℓ(μ_T)` starting from the constant control at the center of `U`.
pub fn optimize(
    model: &dyn Model,
    theta: &ParticleMeasure,
    grid: &TimeGrid,
    config: &OptimizerConfig,
) -> Result<OptimizationReport> {
    let start = ControlSignal::constant(grid.steps(), &model.control_box().center());
    optimize_from(model, theta, grid, config, start)
}

pub fn optimize_from(
    model: &dyn Model,
    theta: &ParticleMeasure,
    grid: &TimeGrid,
    config: &OptimizerConfig,
    start: ControlSignal,
) -> Result<OptimizationReport> {
    let clock = Instant::now();
    let problem = Problem::new(model, theta, grid, config)?;
    start.check(grid, model.control_box())?;
    if config.method == Method::ProjectedGradient && !model.control_differentiable() {
        return Err(Error::NotControlDifferentiable);
    }

    let mut u = start;
    let mut iterations = Vec::new();
    let mut previous_cost: Option<f64> = None;
    let mut termination = Termination::MaxIterations;
    let mut sweep = problem.sweep(&u)?;
    for iter in 0..config.max_iters {
        let mut record = IterationRecord { iter, cost: sweep.cost, residual: sweep.residual, step: None };
        if sweep.residual <= config.residual_tol {
            termination = Termination::Converged;
            iterations.push(record);
            break;
        }
        if previous_cost.is_some_and(|c| (c - sweep.cost).abs() <= config.cost_tol) {
            termination = Termination::CostStalled;
            iterations.push(record);
            break;
        }
        let update = match config.method {
            Method::Msa => problem.msa_update(&u, &sweep)?,
            Method::ProjectedGradient => problem.gradient_update(&u, &sweep)?,
        };
        let Some((next, step)) = update else {
            termination = Termination::StepStalled;
            iterations.push(record);
            break;
        };
        record.step = Some(step);
        iterations.push(record);
        previous_cost = Some(sweep.cost);
        u = next;
        sweep = problem.sweep(&u)?;
    }
    if termination == Termination::MaxIterations {
        iterations.push(IterationRecord {
            iter: config.max_iters,
            cost: sweep.cost,
            residual: sweep.residual,
            step: None,
        });
    }

    let candidates = if config.compare_candidates { problem.candidates()? } else { Vec::new() };
    let mut adopted_candidate = false;
    if let Some(best) = candidates.iter().filter(|c| c.extremal).min_by(|a, b| a.cost.total_cmp(&b.cost)) {
        if best.cost < sweep.cost {
            u = ControlSignal::constant(grid.steps(), &best.control);
            sweep = problem.sweep(&u)?;
            adopted_candidate = true;
        }
    }
    let (_, degenerate) = problem.maximizers(&sweep);

    Ok(OptimizationReport {
        method: config.method,
        iterations,
        termination,
        final_cost: sweep.cost,
        final_residual: sweep.residual,
        final_control: u.values().to_vec(),
        control_dim: u.dim(),
        control: Some(u),
        candidates,
        adopted_candidate,
        degenerate,
        wall_time_secs: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extremality {
    Bang,
    Singular,
    NonExtremal,
    Unsupported,
}

/// Switching function `σ(t_m) = ∂H/∂u` at the interval start nodes, for
/// scalar controls with `H` affine in `u`. `None` otherwise.
pub fn switching_function(model: &dyn Model, traj: &TrajectoryBundle, costates: &CostateBundle) -> Option<Vec<f64>> {
    let control_box = model.control_box();
    if control_box.dim() != 1 {
        return None;
    }
    let (lo, hi) = (control_box.lower()[0], control_box.upper()[0]);
    if hi <= lo {
        return None;
    }
    let probes = vec![vec![lo], vec![0.5 * (lo + hi)], vec![hi]];
    let mut sigma = Vec::with_capacity(traj.grid().steps());
    for m in 0..traj.grid().steps() {
        let h = node_hamiltonians(model, &probes, traj, costates, m);
        let scale = h.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if (h[1] - 0.5 * (h[0] + h[2])).abs() > 1e-9 * scale {
            return None;
        }
        sigma.push((h[2] - h[0]) / (hi - lo));
    }
    Some(sigma)
}

/// Classifies `u` by its switching function: bang when `|σ| > tol` everywhere
/// and `u` sits at the bound `σ` points to, singular when `|σ| ≤ tol` on some
/// intervals and the rest are bang-consistent, non-extremal otherwise.
pub fn classify_extremal(
    model: &dyn Model,
    u: &ControlSignal,
    traj: &TrajectoryBundle,
    costates: &CostateBundle,
    tol: f64,
) -> Extremality {
    let Some(sigma) = switching_function(model, traj, costates) else {
        return Extremality::Unsupported;
    };
    if u.dim() != 1 || u.steps() != sigma.len() {
        return Extremality::Unsupported;
    }
    let control_box = model.control_box();
    let (lo, hi) = (control_box.lower()[0], control_box.upper()[0]);
    let at_bound = |v: f64, b: f64| (v - b).abs() <= 1e-12 * b.abs().max(1.0);
    let mut singular = false;
    for (m, s) in sigma.iter().enumerate() {
        let v = u.at(m)[0];
        if s.abs() <= tol {
            singular = true;
        } else if !(if *s > 0.0 { at_bound(v, hi) } else { at_bound(v, lo) }) {
            return Extremality::NonExtremal;
        }
    }
    if singular {
        Extremality::Singular
    } else {
        Extremality::Bang
    }
}
