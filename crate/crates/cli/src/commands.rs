//! The `simulate`, `check` and `optimize` subcommands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mfpmp::adjoint::{gradient_check, hamiltonian_version_gap, integrate_adjoint_backward};
use mfpmp::forward::{discretize_initial, integrate_forward, weak_form_residual};
use mfpmp::measure::check_beta_lipschitz;
use mfpmp::model::check::{
    check_flat_derivative, check_lifted_derivative, check_model_derivatives, cost_functional, FLAT_STEPS,
};
use mfpmp::model::SourceFunctional;
use mfpmp::optimize::optimize_from;
use mfpmp::{io, ControlSignal, LiftedEnsemble, Model, ParticleMeasure, TimeGrid, TrajectoryBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ControlConfig, RunConfig};
use crate::error::CliError;

/// Exit status of a finished command.
pub type ExitCode = i32;

/// Non-convergence of `optimize` within `max_iters`.
pub const EXIT_NOT_CONVERGED: ExitCode = 4;
/// At least one validator of `check` failed.
pub const EXIT_CHECK_FAILED: ExitCode = 1;

/// A loaded configuration with command-line overrides applied.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut config = RunConfig::load(config_path)?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        if let Some(out) = out {
            config.output_dir = out;
        }
        let config = config.resolved()?;
        Ok(Self { out: config.output_dir.clone(), config })
    }

    fn prepare_output(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("config.toml"), self.config.to_toml()?)?;
        Ok(())
    }

    fn write(
        &self,
        name: &str,
        write: impl FnOnce(std::io::BufWriter<fs::File>) -> mfpmp::Result<()>,
    ) -> Result<(), CliError> {
        io::to_file(&self.out.join(name), write).map_err(|e| match e {
            mfpmp::Error::Io(io) => CliError::Output(io),
            other => CliError::Numerical(other),
        })
    }

    fn write_state_files(&self, traj: &TrajectoryBundle, u: &ControlSignal) -> Result<(), CliError> {
        self.write("trajectory.csv", |f| io::write_trajectory(traj, f))?;
        self.write("moments.csv", |f| io::write_moments(traj, f))?;
        self.write("mass.csv", |f| io::write_mass_curve(traj, f))?;
        self.write("control.csv", |f| io::write_control(u, traj.grid().step_size(), f))
    }
}

struct Setup {
    model: Box<dyn Model>,
    theta: ParticleMeasure,
    grid: TimeGrid,
    u: ControlSignal,
}

fn setup(config: &RunConfig) -> Result<Setup, CliError> {
    let model = config.build_model()?;
    let theta = config.build_initial()?;
    if theta.dim() != model.state_dim() {
        return Err(CliError::Config(format!(
            "initial measure lives in dimension {} but the model in {}",
            theta.dim(),
            model.state_dim()
        )));
    }
    let grid = config.build_grid()?;
    let u = config.build_control(model.as_ref(), &grid)?;
    Ok(Setup { model, theta, grid, u })
}

/// Forward solve under the configured control; writes trajectory, moments and mass curve.
pub fn cmd_simulate(run: &Run) -> Result<ExitCode, CliError> {
    let s = setup(&run.config)?;
    run.prepare_output()?;
    let initial = discretize_initial(&s.theta)?;
    let traj = integrate_forward(s.model.as_ref(), &s.u, &initial, &s.grid, run.config.time.integrator)?;
    run.write_state_files(&traj, &s.u)?;
    let (mass, mean, _) = traj.terminal_measure().moments();
    println!("final mass {mass}  mean {mean:?}");
    println!("wrote {}", run.out.display());
    Ok(0)
}

/// Runs the optimizer; writes the report, final control and final trajectory files.
pub fn cmd_optimize(run: &Run) -> Result<ExitCode, CliError> {
    let s = setup(&run.config)?;
    run.prepare_output()?;
    let start = match run.config.control {
        ControlConfig::Optimize => ControlSignal::constant(s.grid.steps(), &s.model.control_box().center()),
        _ => s.u.clone(),
    };
    let report = optimize_from(s.model.as_ref(), &s.theta, &s.grid, &run.config.optimizer, start)?;
    let u = report.final_control();
    let integrator = run.config.optimizer.integrator;
    let initial = discretize_initial(&s.theta)?;
    let traj = integrate_forward(s.model.as_ref(), &u, &initial, &s.grid, integrator)?;
    let costates = integrate_adjoint_backward(s.model.as_ref(), &u, &traj, integrator)?;
    let u_grid = s.model.control_box().grid(run.config.optimizer.grid_resolution);

    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Output(e.into()))?;
    fs::write(run.out.join("report.json"), json)?;
    run.write_state_files(&traj, &u)?;
    run.write("costates.csv", |f| io::write_costates(&costates, f))?;
    run.write("adjoint.csv", |f| io::write_adjoint_summary(s.model.as_ref(), &u, &traj, &costates, &u_grid, f))?;

    println!("final cost {}", report.final_cost);
    println!("final residual {}", report.final_residual);
    println!("termination {:?} after {} iterations", report.termination, report.iterations.len());
    for c in &report.candidates {
        println!(
            "candidate u = {:?}: cost {} residual {} {}",
            c.control,
            c.cost,
            c.residual,
            if c.extremal { "extremal" } else { "not extremal" }
        );
    }
    println!("wrote {}", run.out.display());
    Ok(if report.termination.converged() { 0 } else { EXIT_NOT_CONVERGED })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Derivatives,
    Gradient,
    WeakForm,
    HamiltonianEquivalence,
    LipschitzBeta,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "derivatives" => Ok(Suite::Derivatives),
            "gradient" => Ok(Suite::Gradient),
            "weak-form" => Ok(Suite::WeakForm),
            "hamiltonian-equivalence" => Ok(Suite::HamiltonianEquivalence),
            "lipschitz-beta" => Ok(Suite::LipschitzBeta),
            other => Err(format!(
                "unknown suite '{other}' (expected derivatives, gradient, weak-form, hamiltonian-equivalence or lipschitz-beta)"
            )),
        }
    }
}

/// One line of the `check` table.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(name: impl Into<String>, worst: f64, tolerance: f64) -> Self {
        Self { name: name.into(), worst, tolerance, passed: worst <= tolerance }
    }
}

impl fmt::Display for CheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tolerance = if self.tolerance.is_finite() { format!("{:.3e}", self.tolerance) } else { "-".into() };
        write!(
            f,
            "{:<42} {:>12.3e} {:>12}  {}",
            self.name,
            self.worst,
            tolerance,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

/// Runs one validator suite and prints its table; exit 0 iff every row passes.
pub fn cmd_check(run: &Run, suite: Suite) -> Result<ExitCode, CliError> {
    let rows = check_rows(&run.config, suite)?;
    run.prepare_output()?;
    println!("{:<42} {:>12} {:>12}  result", "check", "worst", "tolerance");
    for row in &rows {
        println!("{row}");
    }
    Ok(if rows.iter().all(|r| r.passed) { 0 } else { EXIT_CHECK_FAILED })
}

pub fn check_rows(config: &RunConfig, suite: Suite) -> Result<Vec<CheckRow>, CliError> {
    let s = setup(config)?;
    let model = s.model.as_ref();
    let integrator = config.time.integrator;
    let check = &config.check;
    let rows = match suite {
        Suite::Derivatives => {
            let sample = check.sample_config(config.time.horizon, config.seed);
            let report = check_model_derivatives(model, &sample);
            let mut rows: Vec<CheckRow> =
                report.checks.iter().map(|c| CheckRow::new(c.name, c.max_rel_error, c.tolerance)).collect();
            rows.extend(functional_rows(model, config)?);
            rows
        }
        Suite::Gradient => {
            let initial = discretize_initial(&s.theta)?;
            let g = gradient_check(model, &s.u, &initial, integrator, &s.grid, check.gradient_step)?;
            vec![CheckRow::new("adjoint gradient vs central differences", g.rel_error, check.gradient_tol)]
        }
        Suite::WeakForm => weak_form_rows(&s, integrator)?,
        Suite::HamiltonianEquivalence => {
            let initial = discretize_initial(&s.theta)?;
            let traj = integrate_forward(model, &s.u, &initial, &s.grid, integrator)?;
            let costates = integrate_adjoint_backward(model, &s.u, &traj, integrator)?;
            let u_grid = model.control_box().grid(config.optimizer.grid_resolution);
            let gap = hamiltonian_version_gap(model, &traj, &costates, &u_grid)?;
            vec![CheckRow::new("|H_v1 - H_v2| relative", gap, check.hamiltonian_tol)]
        }
        Suite::LipschitzBeta => {
            let report = check_beta_lipschitz(&check.beta_config(model.state_dim(), config.seed))?;
            vec![
                CheckRow::new("flat(beta diff) / (2b W2), worst", report.worst_ratio, 1.0),
                CheckRow::new(format!("violations in {} cases", report.cases), report.violations as f64, 0.0),
            ]
        }
    };
    Ok(rows)
}

fn random_measure(rng: &mut ChaCha8Rng, dim: usize, atoms: usize, radius: f64, max_mass: f64) -> ParticleMeasure {
    let atoms = atoms.max(1);
    let points = (0..atoms * dim).map(|_| rng.gen_range(-radius..=radius)).collect();
    let weights = (0..atoms).map(|_| rng.gen_range(0.05..=1.0) * max_mass / atoms as f64).collect();
    ParticleMeasure::new(dim, points, weights).expect("sampled measure is valid")
}

/// Directional flat-derivative and lifted-derivative checks of `G` and `ℓ`.
fn functional_rows(model: &dyn Model, config: &RunConfig) -> Result<Vec<CheckRow>, CliError> {
    let check = &config.check;
    let n = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let cost = cost_functional(model.cost(), n);
    let (mut flat_g, mut flat_l, mut lifted_g, mut lifted_l) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let tol = mfpmp::model::check::FLAT_CHECK_TOL;
    for _ in 0..check.samples.max(1) {
        let mu = random_measure(&mut rng, n, check.atoms, check.radius, check.max_mass);
        let mu_prime = random_measure(&mut rng, n, check.atoms, check.radius, check.max_mass);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-check.radius..=check.radius)).collect();
        let t = rng.gen_range(0.0..=config.time.horizon);
        let source = SourceFunctional { model, t, u: model.control_box().center(), x };
        let relative = |r: &mfpmp::model::check::FlatDerivativeReport| r.discrepancy / r.tolerance * tol;
        flat_g = flat_g.max(relative(&check_flat_derivative(&source, &mu, &mu_prime, &FLAT_STEPS)?));
        flat_l = flat_l.max(relative(&check_flat_derivative(&cost, &mu, &mu_prime, &FLAT_STEPS)?));

        let ensemble = discretize_initial(&mu)?;
        let e = LiftedEnsemble::new(
            n,
            ensemble.weights().to_vec(),
            ensemble.positions().to_vec(),
            (0..ensemble.len()).map(|_| rng.gen_range(0.1..=check.max_mass)).collect(),
        )?;
        let g = check_lifted_derivative(&source, &e);
        lifted_g = lifted_g.max(g.max_flat_error.max(g.max_intrinsic_error));
        let l = check_lifted_derivative(&cost, &e);
        lifted_l = lifted_l.max(l.max_flat_error.max(l.max_intrinsic_error));
    }
    Ok(vec![
        CheckRow::new("flat derivative of G", flat_g, tol),
        CheckRow::new("flat derivative of cost", flat_l, tol),
        CheckRow::new("lifted derivative of G", lifted_g, tol),
        CheckRow::new("lifted derivative of cost", lifted_l, tol),
    ])
}

/// Weak-form residual at `M` and `2M` steps; it must shrink quadratically
/// unless it already vanishes.
fn weak_form_rows(s: &Setup, integrator: mfpmp::Integrator) -> Result<Vec<CheckRow>, CliError> {
    let model = s.model.as_ref();
    let phi = |x: &[f64]| (-0.25 * x.iter().map(|v| v * v).sum::<f64>()).exp();
    let grad_phi = |x: &[f64], out: &mut [f64]| {
        let p = phi(x);
        for (o, v) in out.iter_mut().zip(x) {
            *o = -0.5 * v * p;
        }
    };
    let initial = discretize_initial(&s.theta)?;
    let mut residuals = Vec::new();
    for steps in [s.grid.steps(), 2 * s.grid.steps()] {
        let grid = TimeGrid::new(s.grid.horizon(), steps)?;
        // Refining keeps the control piecewise constant on the coarse intervals.
        let values = (0..steps).flat_map(|m| s.u.at(m * s.grid.steps() / steps).to_vec()).collect::<Vec<f64>>();
        let u = ControlSignal::new(s.u.dim(), values)?;
        let traj = integrate_forward(model, &u, &initial, &grid, integrator)?;
        residuals.push(weak_form_residual(&traj, model, &u, phi, grad_phi)?.max);
    }
    let (coarse, fine) = (residuals[0], residuals[1]);
    let exact = coarse <= 1e-12;
    let ratio = if exact { 4.0 } else { coarse / fine };
    let mut rows = vec![
        CheckRow::new(format!("weak-form residual at M = {}", s.grid.steps()), coarse, f64::INFINITY),
        CheckRow::new(format!("weak-form residual at M = {}", 2 * s.grid.steps()), fine, f64::INFINITY),
    ];
    rows.push(CheckRow {
        name: "refinement ratio, expected 4".into(),
        worst: ratio,
        tolerance: 4.0,
        passed: (3.0..=5.0).contains(&ratio),
    });
    Ok(rows)
}
