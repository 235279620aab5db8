//! Finite-difference validators for model callbacks and functionals on measures.
//!
//! Flat derivatives are probed with mass perturbations `μ + ε δ_{x′}` (valid
//! directions on the cone of nonnegative measures) and a one-step Richardson
//! extrapolation; intrinsic and spatial derivatives by central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cost, CostFunctional, MeasureFunctional, Model};
use crate::error::Result;
use crate::measure::{ExactSolver, LiftedEnsemble, ParticleMeasure, SignedParticleMeasure};

/// Tolerance for spatial and control derivatives.
pub const SPATIAL_TOL: f64 = 1e-5;
/// Tolerance for flat and intrinsic derivatives.
pub const MEASURE_TOL: f64 = 1e-4;
/// Relative tolerance of the directional and lifted derivative checks.
pub const FLAT_CHECK_TOL: f64 = 1e-6;

/// Default interpolation steps for [`check_flat_derivative`].
pub const FLAT_STEPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

const MASS_STEP: f64 = 1e-4;
const SPATIAL_STEP: f64 = 1e-6;
const NESTED_STEP: f64 = 1e-4;

/// Sampling region for Monte-Carlo checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub samples: usize,
    /// Atoms per sampled measure.
    pub atoms: usize,
    /// Positions are drawn from `[-radius, radius]ⁿ`.
    pub radius: f64,
    /// Upper bound on the total mass of sampled measures.
    pub max_mass: f64,
    /// Times are drawn from `[0, horizon]`.
    pub horizon: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { samples: 20, atoms: 5, radius: 2.0, max_mass: 2.0, horizon: 1.0, seed: 0 }
    }
}

pub(crate) struct Sampler<'a> {
    cfg: &'a SampleConfig,
    rng: ChaCha8Rng,
}

pub(crate) struct Sample {
    pub t: f64,
    pub u: Vec<f64>,
    pub mu: ParticleMeasure,
    pub x: Vec<f64>,
    pub xp: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(cfg: &'a SampleConfig) -> Self {
        Self { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed) }
    }

    fn point(&mut self, dim: usize) -> Vec<f64> {
        let r = self.cfg.radius;
        (0..dim).map(|_| self.rng.gen_range(-r..=r)).collect()
    }

    fn measure(&mut self, dim: usize) -> ParticleMeasure {
        let atoms = self.cfg.atoms.max(1);
        let points = (0..atoms).flat_map(|_| self.point(dim)).collect();
        let cap = self.cfg.max_mass / atoms as f64;
        let weights = (0..atoms).map(|_| self.rng.gen_range(0.0..=cap)).collect();
        ParticleMeasure::new(dim, points, weights).expect("sampled measure is valid")
    }

    pub fn sample(&mut self, model: &dyn Model) -> Sample {
        let n = model.state_dim();
        let b = model.control_box();
        let u = b
            .lower()
            .iter()
            .zip(b.upper())
            .map(|(&lo, &hi)| if lo == hi { lo } else { self.rng.gen_range(lo..=hi) })
            .collect();
        let t = self.rng.gen_range(0.0..=self.cfg.horizon.max(0.0));
        Sample { t, u, mu: self.measure(n), x: self.point(n), xp: self.point(n) }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn rel_error(numeric: &[f64], analytic: &[f64]) -> f64 {
    max_abs_diff(numeric, analytic) / max_abs(analytic).max(1.0)
}

/// Richardson-extrapolated `lim_{ε→0} [Q(μ + ε δ_x) − Q(μ)] / ε`.
fn mass_derivative<Q: Fn(&ParticleMeasure) -> f64>(q: &Q, mu: &ParticleMeasure, x: &[f64], scale: f64) -> f64 {
    let base = q(mu);
    let quotient = |eps: f64| {
        let bumped = mu.with_atom(x, eps * scale).expect("nonnegative bump");
        (q(&bumped) - base) / eps
    };
    2.0 * quotient(MASS_STEP / 2.0) - quotient(MASS_STEP)
}

/// Central-difference Jacobian of `f : ℝᵈ → ℝʳ` at `z`, row-major `r × d`.
fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, z: &[f64], step: f64) -> Vec<f64> {
    let d = z.len();
    let rows = f(z).len();
    let mut out = vec![0.0; rows * d];
    let mut zp = z.to_vec();
    for j in 0..d {
        zp[j] = z[j] + step;
        let plus = f(&zp);
        zp[j] = z[j] - step;
        let minus = f(&zp);
        zp[j] = z[j];
        for i in 0..rows {
            out[i * d + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    out
}

/// Outcome of a directional flat-derivative check.
#[derive(Debug, Clone, Serialize)]
pub struct FlatDerivativeReport {
    /// `∫ δQ/δμ(μ, x) d(μ′ − μ)(x)`.
    pub claimed: f64,
    /// `(t, [Q(μ + t(μ′ − μ)) − Q(μ)] / t)` for each step.
    pub quotients: Vec<(f64, f64)>,
    pub extrapolated: f64,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the difference quotients of `Q` along `μ′ − μ` with the claimed flat derivative.
pub fn check_flat_derivative(
    q: &dyn MeasureFunctional,
    mu: &ParticleMeasure,
    mu_prime: &ParticleMeasure,
    t_steps: &[f64],
) -> Result<FlatDerivativeReport> {
    let base = q.value(mu);
    let claimed = mu_prime.integrate(|x| q.flat(mu, x)) - mu.integrate(|x| q.flat(mu, x));
    let mut steps: Vec<f64> = t_steps.iter().copied().filter(|t| *t > 0.0 && *t <= 1.0).collect();
    steps.sort_by(|a, b| b.total_cmp(a));
    let mut quotients = Vec::with_capacity(steps.len());
    for &t in &steps {
        let moved = mu.interpolate(mu_prime, t)?;
        quotients.push((t, (q.value(&moved) - base) / t));
    }
    let extrapolated = match quotients.as_slice() {
        [] => f64::NAN,
        [(_, d)] => *d,
        [.., (t1, d1), (t2, d2)] => (t1 * d2 - t2 * d1) / (t1 - t2),
    };
    let discrepancy = (extrapolated - claimed).abs();
    let tolerance = FLAT_CHECK_TOL * (1.0 + base.abs());
    Ok(FlatDerivativeReport {
        claimed,
        quotients,
        extrapolated,
        discrepancy,
        tolerance,
        passed: discrepancy <= tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LiftedEntry {
    pub particle: usize,
    pub flat_numeric: f64,
    pub flat_claimed: f64,
    pub intrinsic_numeric: Vec<f64>,
    pub intrinsic_claimed: Vec<f64>,
}

/// Outcome of the pullback derivative check for `Q̂ = Q ∘ β`.
#[derive(Debug, Clone, Serialize)]
pub struct LiftedDerivativeReport {
    pub entries: Vec<LiftedEntry>,
    pub max_flat_error: f64,
    pub max_intrinsic_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Verifies `δQ̂/δρ(ρ, x, y) = y δQ/δμ(β(ρ), x)` and
/// `∇_ρQ̂(ρ, x, y) = [y ∇_μQ(β(ρ), x), δQ/δμ(β(ρ), x)]` at every particle of `e`
/// by finite differences of `Q̂` itself.
pub fn check_lifted_derivative(q: &dyn MeasureFunctional, e: &LiftedEnsemble) -> LiftedDerivativeReport {
    let n = e.dim();
    let projected = e.barycentric_projection();
    let lifted = |m: &ParticleMeasure| q.value(m);
    // Numerical flat derivative of Q̂ at the lifted point z = (x, y).
    let flat_lifted = |z: &[f64]| mass_derivative(&lifted, &projected, &z[..n], z[n]);

    let mut entries = Vec::with_capacity(e.len());
    let (mut max_flat, mut max_intr) = (0.0f64, 0.0f64);
    for k in 0..e.len() {
        let x = e.position(k);
        let y = e.masses()[k];
        let mut z = x.to_vec();
        z.push(y);

        let flat_numeric = flat_lifted(&z);
        let flat_claimed = y * q.flat(&projected, x);

        let intrinsic_numeric = jacobian(|z| vec![flat_lifted(z)], &z, NESTED_STEP);
        let mut grad = vec![0.0; n];
        q.intrinsic(&projected, x, &mut grad);
        let mut intrinsic_claimed: Vec<f64> = grad.iter().map(|g| y * g).collect();
        intrinsic_claimed.push(q.flat(&projected, x));

        max_flat = max_flat.max((flat_numeric - flat_claimed).abs() / (1.0 + flat_claimed.abs()));
        max_intr =
            max_intr.max(max_abs_diff(&intrinsic_numeric, &intrinsic_claimed) / (1.0 + max_abs(&intrinsic_claimed)));
        entries.push(LiftedEntry { particle: k, flat_numeric, flat_claimed, intrinsic_numeric, intrinsic_claimed });
    }
    LiftedDerivativeReport {
        entries,
        max_flat_error: max_flat,
        max_intrinsic_error: max_intr,
        tolerance: FLAT_CHECK_TOL,
        passed: max_flat <= FLAT_CHECK_TOL && max_intr <= FLAT_CHECK_TOL,
    }
}

/// One derivative callback against its finite-difference counterpart.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport {
    pub samples: usize,
    pub checks: Vec<DerivativeCheck>,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Checks every derivative callback of `model` (and its cost) at sampled points.
pub fn check_model_derivatives(model: &dyn Model, cfg: &SampleConfig) -> DerivativeReport {
    let n = model.state_dim();
    let m = model.control_dim();
    let mut sampler = Sampler::new(cfg);
    let mut worst = [0.0f64; 10];
    let field = |t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64]| {
        let mut out = vec![0.0; n];
        model.field(t, u, mu, x, &mut out);
        out
    };
    let cost = model.cost();
    for _ in 0..cfg.samples {
        let Sample { t, u, mu, x, xp } = sampler.sample(model);

        let mut an = vec![0.0; n * n];
        model.field_dx(t, &u, &mu, &x, &mut an);
        worst[0] = worst[0].max(rel_error(&jacobian(|z| field(t, &u, &mu, z), &x, SPATIAL_STEP), &an));

        let mut an = vec![0.0; n];
        model.source_dx(t, &u, &mu, &x, &mut an);
        let num = jacobian(|z| vec![model.source(t, &u, &mu, z)], &x, SPATIAL_STEP);
        worst[1] = worst[1].max(rel_error(&num, &an));

        let mut an = vec![0.0; n];
        model.field_flat(t, &u, &mu, &x, &xp, &mut an);
        let num: Vec<f64> =
            (0..n).map(|i| mass_derivative(&|m: &ParticleMeasure| field(t, &u, m, &x)[i], &mu, &xp, 1.0)).collect();
        worst[2] = worst[2].max(rel_error(&num, &an));

        let an = model.source_flat(t, &u, &mu, &x, &xp);
        let num = mass_derivative(&|m: &ParticleMeasure| model.source(t, &u, m, &x), &mu, &xp, 1.0);
        worst[3] = worst[3].max(rel_error(&[num], &[an]));

        let mut an = vec![0.0; n * n];
        model.field_intrinsic(t, &u, &mu, &x, &xp, &mut an);
        let num = jacobian(
            |z| {
                let mut out = vec![0.0; n];
                model.field_flat(t, &u, &mu, &x, z, &mut out);
                out
            },
            &xp,
            SPATIAL_STEP,
        );
        worst[4] = worst[4].max(rel_error(&num, &an));

        let mut an = vec![0.0; n];
        model.source_intrinsic(t, &u, &mu, &x, &xp, &mut an);
        let num = jacobian(|z| vec![model.source_flat(t, &u, &mu, &x, z)], &xp, SPATIAL_STEP);
        worst[5] = worst[5].max(rel_error(&num, &an));

        if model.control_differentiable() {
            let mut an = vec![0.0; n * m];
            model.field_du(t, &u, &mu, &x, &mut an);
            worst[6] = worst[6].max(rel_error(&jacobian(|v| field(t, v, &mu, &x), &u, SPATIAL_STEP), &an));

            let mut an = vec![0.0; m];
            model.source_du(t, &u, &mu, &x, &mut an);
            let num = jacobian(|v| vec![model.source(t, v, &mu, &x)], &u, SPATIAL_STEP);
            worst[7] = worst[7].max(rel_error(&num, &an));
        }

        let an = cost.flat(&mu, &xp);
        let num = mass_derivative(&|m: &ParticleMeasure| cost.value(m), &mu, &xp, 1.0);
        worst[8] = worst[8].max(rel_error(&[num], &[an]));

        let mut an = vec![0.0; n];
        cost.intrinsic(&mu, &xp, &mut an);
        let num = jacobian(|z| vec![cost.flat(&mu, z)], &xp, SPATIAL_STEP);
        worst[9] = worst[9].max(rel_error(&num, &an));
    }
    let names: [(&'static str, f64); 10] = [
        ("D_x F", SPATIAL_TOL),
        ("grad_x G", SPATIAL_TOL),
        ("dF/dmu (flat)", MEASURE_TOL),
        ("dG/dmu (flat)", MEASURE_TOL),
        ("D_mu F (intrinsic)", MEASURE_TOL),
        ("grad_mu G (intrinsic)", MEASURE_TOL),
        ("grad_u F", SPATIAL_TOL),
        ("grad_u G", SPATIAL_TOL),
        ("dl/dmu (flat)", MEASURE_TOL),
        ("grad_mu l (intrinsic)", MEASURE_TOL),
    ];
    let checks = names
        .iter()
        .zip(worst)
        .enumerate()
        .filter(|(i, _)| model.control_differentiable() || !(6..8).contains(i))
        .map(|(_, (&(name, tolerance), err))| DerivativeCheck {
            name,
            max_rel_error: err,
            tolerance,
            passed: err <= tolerance,
        })
        .collect();
    DerivativeReport { samples: cfg.samples, checks }
}

/// Sampled growth and Lipschitz estimates for `F` and `G`.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    /// `sup |F| / (1 + μ(ℝⁿ))`.
    pub field_growth: f64,
    /// `sup |G|`.
    pub source_bound: f64,
    pub field_lipschitz_x: f64,
    pub source_lipschitz_x: f64,
    /// Ratios against the flat norm `‖μ − μ′‖_K`.
    pub field_lipschitz_mu: f64,
    pub source_lipschitz_mu: f64,
    pub declared_constant: Option<f64>,
    pub violations: Vec<String>,
}

/// Monte-Carlo estimates of the sublinearity and local Lipschitz constants of a model.
///
/// Uniformity of the constants in `(t, u)` cannot be certified by sampling;
/// the report only states what was observed.
pub fn check_assumptions(model: &dyn Model, cfg: &SampleConfig) -> Result<AssumptionReport> {
    let n = model.state_dim();
    let mut sampler = Sampler::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let solver = ExactSolver::default();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut report = AssumptionReport {
        samples: cfg.samples,
        field_growth: 0.0,
        source_bound: 0.0,
        field_lipschitz_x: 0.0,
        source_lipschitz_x: 0.0,
        field_lipschitz_mu: 0.0,
        source_lipschitz_mu: 0.0,
        declared_constant: model.sublinearity_constant(),
        violations: Vec::new(),
    };
    let mut f = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    for _ in 0..cfg.samples {
        let Sample { t, u, mu, x, .. } = sampler.sample(model);
        model.field(t, &u, &mu, &x, &mut f);
        let g = model.source(t, &u, &mu, &x);
        report.field_growth = report.field_growth.max(norm(&f) / (1.0 + mu.total_mass()));
        report.source_bound = report.source_bound.max(g.abs());

        let step = 0.1 * cfg.radius.max(1e-3);
        let x2: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-step..=step)).collect();
        let dx: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| a - b).collect();
        let dist = norm(&dx);
        if dist > 0.0 {
            model.field(t, &u, &mu, &x2, &mut f2);
            let df: Vec<f64> = f.iter().zip(&f2).map(|(a, b)| a - b).collect();
            report.field_lipschitz_x = report.field_lipschitz_x.max(norm(&df) / dist);
            report.source_lipschitz_x = report.source_lipschitz_x.max((g - model.source(t, &u, &mu, &x2)).abs() / dist);
        }

        let points: Vec<f64> = mu.points().iter().map(|v| v + rng.gen_range(-step..=step)).collect();
        let weights: Vec<f64> = mu.weights().iter().map(|w| w * rng.gen_range(0.9..=1.1)).collect();
        let moved = ParticleMeasure::new(n, points, weights)?;
        let gap = solver.flat_norm(&SignedParticleMeasure::difference(&mu, &moved)?)?;
        if gap > 0.0 {
            model.field(t, &u, &moved, &x, &mut f2);
            let df: Vec<f64> = f.iter().zip(&f2).map(|(a, b)| a - b).collect();
            report.field_lipschitz_mu = report.field_lipschitz_mu.max(norm(&df) / gap);
            report.source_lipschitz_mu =
                report.source_lipschitz_mu.max((g - model.source(t, &u, &moved, &x)).abs() / gap);
        }
    }
    if let Some(c) = report.declared_constant {
        if report.field_growth > c * (1.0 + 1e-12) {
            report.violations.push(format!("|F| / (1 + mass) reached {} > C = {c}", report.field_growth));
        }
        if report.source_bound > c * (1.0 + 1e-12) {
            report.violations.push(format!("|G| reached {} > C = {c}", report.source_bound));
        }
    }
    Ok(report)
}

/// Convenience: the model's terminal cost as a [`MeasureFunctional`].
pub fn cost_functional(cost: &Cost, dim: usize) -> CostFunctional<'_> {
    CostFunctional { cost, dim }
}
