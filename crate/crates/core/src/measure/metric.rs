//! Exact W₂ and Kantorovich–Rubinstein (flat) distances between discrete measures.
//!
//! Both are solved exactly: W₂ by the monotone coupling in one dimension and a
//! transportation LP otherwise; the flat norm by its finite dual LP over the
//! values of a bounded 1-Lipschitz test function at the support points.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::{ParticleMeasure, SignedParticleMeasure};
use crate::error::{Error, Result};

pub const DEFAULT_SIZE_CAP: usize = 200;

/// Absolute tolerance on the mass balance required by W₂.
pub const MASS_BALANCE_TOL: f64 = 1e-9;

/// Exact solver with a cap on the number of support points per measure.
#[derive(Debug, Clone, Copy)]
pub struct ExactSolver {
    pub size_cap: usize,
}

impl Default for ExactSolver {
    fn default() -> Self {
        Self { size_cap: DEFAULT_SIZE_CAP }
    }
}

/// W₂ with the default size cap.
pub fn w2_distance(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<f64> {
    ExactSolver::default().w2_distance(a, b)
}

/// Flat norm with the default size cap.
pub fn flat_norm(d: &SignedParticleMeasure) -> Result<f64> {
    ExactSolver::default().flat_norm(d)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    sq_dist(x, y).sqrt()
}

impl ExactSolver {
    pub fn new(size_cap: usize) -> Self {
        Self { size_cap }
    }

    fn check_size(&self, size: usize) -> Result<()> {
        if size > self.size_cap {
            return Err(Error::TooLarge { size, cap: self.size_cap });
        }
        Ok(())
    }

    /// L²-Kantorovich distance between measures of equal positive mass.
    pub fn w2_distance(&self, a: &ParticleMeasure, b: &ParticleMeasure) -> Result<f64> {
        if a.dim() != b.dim() {
            return Err(Error::Dimension("W2 between measures of different dimension".into()));
        }
        let (ma, mb) = (a.total_mass(), b.total_mass());
        if (ma - mb).abs() > MASS_BALANCE_TOL || ma <= 0.0 {
            return Err(Error::Unbalanced(ma, mb));
        }
        self.check_size(a.len().max(b.len()))?;
        let cost = if a.dim() == 1 { monotone_cost(a, ma, b, mb) } else { transport_lp_cost(a, ma, b, mb)? };
        Ok((ma * cost.max(0.0)).sqrt())
    }

    /// `sup { ⟨d, φ⟩ : |φ| ≤ 1, Lip(φ) ≤ 1 }`.
    pub fn flat_norm(&self, d: &SignedParticleMeasure) -> Result<f64> {
        let d = d.pruned(0.0);
        self.check_size(d.len())?;
        match d.len() {
            0 => return Ok(0.0),
            1 => return Ok(d.weights()[0].abs()),
            _ => {}
        }
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = d.weights().iter().map(|&c| problem.add_var(c, (-1.0, 1.0))).collect();
        let n = d.len();
        let mut pairs = Vec::new();
        if d.dim() == 1 {
            // Adjacent constraints imply all pairwise ones on the line.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| d.point(i)[0].total_cmp(&d.point(j)[0]));
            pairs.extend(order.windows(2).map(|w| (w[0], w[1])));
        } else {
            for i in 0..n {
                for j in i + 1..n {
                    pairs.push((i, j));
                }
            }
        }
        for (i, j) in pairs {
            let gap = dist(d.point(i), d.point(j));
            problem.add_constraint([(vars[i], 1.0), (vars[j], -1.0)], ComparisonOp::Le, gap);
            problem.add_constraint([(vars[j], 1.0), (vars[i], -1.0)], ComparisonOp::Le, gap);
        }
        let solution = problem.solve().map_err(|e| Error::LinearProgram(e.to_string()))?;
        // Objective re-evaluated from the clamped vertex to avoid solver drift.
        let value: f64 = vars.iter().zip(d.weights()).map(|(v, c)| c * solution[*v].clamp(-1.0, 1.0)).sum();
        Ok(value.max(0.0))
    }
}

/// `∫|x − y|² dπ` of the monotone coupling between `a/ma` and `b/mb` on the line.
fn monotone_cost(a: &ParticleMeasure, ma: f64, b: &ParticleMeasure, mb: f64) -> f64 {
    let sorted = |m: &ParticleMeasure, mass: f64| {
        let mut atoms: Vec<(f64, f64)> = m.atoms().filter(|(_, w)| *w > 0.0).map(|(x, w)| (x[0], w / mass)).collect();
        atoms.sort_by(|p, q| p.0.total_cmp(&q.0));
        atoms
    };
    let (xs, ys) = (sorted(a, ma), sorted(b, mb));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (xs.first().map_or(0.0, |p| p.1), ys.first().map_or(0.0, |p| p.1));
    let mut cost = 0.0;
    while i < xs.len() && j < ys.len() {
        let t = ra.min(rb);
        cost += t * (xs[i].0 - ys[j].0).powi(2);
        ra -= t;
        rb -= t;
        if ra <= rb {
            i += 1;
            ra = xs.get(i).map_or(0.0, |p| p.1);
        } else {
            j += 1;
            rb = ys.get(j).map_or(0.0, |p| p.1);
        }
    }
    cost
}

fn transport_lp_cost(a: &ParticleMeasure, ma: f64, b: &ParticleMeasure, mb: f64) -> Result<f64> {
    let src: Vec<(&[f64], f64)> = a.atoms().filter(|(_, w)| *w > 0.0).map(|(x, w)| (x, w / ma)).collect();
    let dst: Vec<(&[f64], f64)> = b.atoms().filter(|(_, w)| *w > 0.0).map(|(x, w)| (x, w / mb)).collect();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let plan: Vec<Vec<_>> = src
        .iter()
        .map(|(x, _)| dst.iter().map(|(y, _)| problem.add_var(sq_dist(x, y), (0.0, f64::INFINITY))).collect())
        .collect();
    for (row, (_, w)) in plan.iter().zip(&src) {
        let terms: Vec<_> = row.iter().map(|v| (*v, 1.0)).collect();
        problem.add_constraint(terms.as_slice(), ComparisonOp::Eq, *w);
    }
    // The last column constraint is implied by the others.
    for (j, (_, w)) in dst.iter().enumerate().take(dst.len().saturating_sub(1)) {
        let terms: Vec<_> = plan.iter().map(|row| (row[j], 1.0)).collect();
        problem.add_constraint(terms.as_slice(), ComparisonOp::Eq, *w);
    }
    let solution = problem.solve().map_err(|e| Error::LinearProgram(e.to_string()))?;
    let mut cost = 0.0;
    for (row, (x, _)) in plan.iter().zip(&src) {
        for (v, (y, _)) in row.iter().zip(&dst) {
            cost += solution[*v].max(0.0) * sq_dist(x, y);
        }
    }
    Ok(cost)
}
