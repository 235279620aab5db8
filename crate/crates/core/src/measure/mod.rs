//! Finite measures represented by weighted point masses.
//!
//! Positions are stored row-major in a flat buffer (`dim` entries per atom).
//! Coincident atoms are never merged implicitly; call [`ParticleMeasure::merged`]
//! when a canonical form is needed.

mod lipschitz;
mod metric;

pub use lipschitz::{check_beta_lipschitz, BetaLipschitzConfig, BetaLipschitzReport, LIPSCHITZ_SLACK};
pub use metric::{flat_norm, w2_distance, ExactSolver, DEFAULT_SIZE_CAP};

use crate::error::{Error, Result};

/// Tolerance under which two support points are treated as the same atom.
pub const MERGE_TOL: f64 = 1e-12;

/// Nonnegative measure `Σ cₖ δ_{xₖ}` on `ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Signed measure `Σ cₖ δ_{xₖ}`; used for differences and adjoint measures.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedParticleMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

fn check_layout(dim: usize, points: &[f64], weights: &[f64]) -> Result<()> {
    if dim == 0 {
        return Err(Error::Dimension("measure dimension must be positive".into()));
    }
    if points.len() != dim * weights.len() {
        return Err(Error::Dimension(format!(
            "{} coordinates for {} atoms of dimension {dim}",
            points.len(),
            weights.len()
        )));
    }
    if let Some(v) = points.iter().chain(weights).find(|v| !v.is_finite()) {
        return Err(Error::InvalidMeasure(format!("non-finite entry {v}")));
    }
    Ok(())
}

fn merge_atoms(dim: usize, points: &[f64], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out_points: Vec<f64> = Vec::with_capacity(points.len());
    let mut out_weights: Vec<f64> = Vec::with_capacity(weights.len());
    for (x, &w) in points.chunks_exact(dim).zip(weights) {
        let hit = out_points.chunks_exact(dim).position(|p| p.iter().zip(x).all(|(a, b)| (a - b).abs() <= MERGE_TOL));
        match hit {
            Some(j) => out_weights[j] += w,
            None => {
                out_points.extend_from_slice(x);
                out_weights.push(w);
            }
        }
    }
    (out_points, out_weights)
}

macro_rules! atom_accessors {
    ($ty:ty) => {
        impl $ty {
            pub fn dim(&self) -> usize {
                self.dim
            }

            pub fn len(&self) -> usize {
                self.weights.len()
            }

            pub fn is_empty(&self) -> bool {
                self.weights.is_empty()
            }

            pub fn point(&self, k: usize) -> &[f64] {
                &self.points[k * self.dim..(k + 1) * self.dim]
            }

            pub fn points(&self) -> &[f64] {
                &self.points
            }

            pub fn weights(&self) -> &[f64] {
                &self.weights
            }

            /// Iterates over `(position, weight)` pairs.
            pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
                self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
            }

            /// `Σ weights`.
            pub fn total_mass(&self) -> f64 {
                self.weights.iter().sum()
            }

            /// Pairing `⟨m, φ⟩ = Σ cₖ φ(xₖ)`.
            pub fn integrate<F: Fn(&[f64]) -> f64>(&self, phi: F) -> f64 {
                self.atoms().map(|(x, w)| w * phi(x)).sum()
            }
        }
    };
}

atom_accessors!(ParticleMeasure);
atom_accessors!(SignedParticleMeasure);

impl ParticleMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_layout(dim, &points, &weights)?;
        if let Some(w) = weights.iter().find(|w| **w < 0.0) {
            return Err(Error::InvalidMeasure(format!("negative weight {w}")));
        }
        Ok(Self { dim, points, weights })
    }

    /// One-dimensional measure from `(position, weight)` pairs.
    pub fn from_atoms_1d(atoms: &[(f64, f64)]) -> Result<Self> {
        let (points, weights) = atoms.iter().copied().unzip();
        Self::new(1, points, weights)
    }

    pub fn dirac(point: &[f64], mass: f64) -> Result<Self> {
        Self::new(point.len(), point.to_vec(), vec![mass])
    }

    /// Solver-internal constructor; intermediate Runge–Kutta stages may carry
    /// slightly negative masses that must not abort the step.
    pub(crate) fn from_raw(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(points.len(), dim * weights.len());
        Self { dim, points, weights }
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, points: Vec::new(), weights: Vec::new() }
    }

    /// `F♯m`: atoms mapped through `map`, weights unchanged.
    pub fn pushforward<F: Fn(&[f64]) -> Vec<f64>>(&self, map: F) -> Result<Self> {
        let mut points = Vec::with_capacity(self.points.len());
        for x in self.points.chunks_exact(self.dim) {
            let y = map(x);
            if y.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "pushforward map returned {} coordinates, expected {}",
                    y.len(),
                    self.dim
                )));
            }
            points.extend(y);
        }
        Self::new(self.dim, points, self.weights.clone())
    }

    /// `(1 − s)·self + s·other` as a multiset union, `s ∈ [0, 1]`.
    pub fn interpolate(&self, other: &Self, s: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension("interpolating measures of different dimension".into()));
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let weights = self.weights.iter().map(|w| (1.0 - s) * w).chain(other.weights.iter().map(|w| s * w)).collect();
        Self::new(self.dim, points, weights)
    }

    /// Adds an atom of mass `mass` at `point`.
    pub fn with_atom(&self, point: &[f64], mass: f64) -> Result<Self> {
        let mut points = self.points.clone();
        points.extend_from_slice(point);
        let mut weights = self.weights.clone();
        weights.push(mass);
        Self::new(self.dim, points, weights)
    }

    /// Canonical form: atoms closer than [`MERGE_TOL`] (per coordinate) merged.
    pub fn merged(&self) -> Self {
        let (points, weights) = merge_atoms(self.dim, &self.points, &self.weights);
        Self { dim: self.dim, points, weights }
    }

    /// Total mass and first/second moments: `(mass, Σ cₖ xₖ / mass, Σ cₖ |xₖ|²)`.
    pub fn moments(&self) -> (f64, Vec<f64>, f64) {
        let mass = self.total_mass();
        let mut mean = vec![0.0; self.dim];
        let mut second = 0.0;
        for (x, w) in self.atoms() {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += w * xi;
            }
            second += w * x.iter().map(|v| v * v).sum::<f64>();
        }
        if mass > 0.0 {
            mean.iter_mut().for_each(|m| *m /= mass);
        }
        (mass, mean, second)
    }
}

impl SignedParticleMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_layout(dim, &points, &weights)?;
        Ok(Self { dim, points, weights })
    }

    /// `a − b`.
    pub fn difference(a: &ParticleMeasure, b: &ParticleMeasure) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::Dimension("difference of measures of different dimension".into()));
        }
        let mut points = a.points.clone();
        points.extend_from_slice(&b.points);
        let weights = a.weights.iter().copied().chain(b.weights.iter().map(|w| -w)).collect();
        Ok(Self { dim: a.dim, points, weights })
    }

    /// Total variation `Σ |cₖ|` of the merged representation.
    pub fn total_variation(&self) -> f64 {
        self.merged().weights.iter().map(|w| w.abs()).sum()
    }

    pub fn merged(&self) -> Self {
        let (points, weights) = merge_atoms(self.dim, &self.points, &self.weights);
        Self { dim: self.dim, points, weights }
    }

    /// Merged representation with atoms of weight below `tol` in magnitude dropped.
    pub fn pruned(&self, tol: f64) -> Self {
        let merged = self.merged();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (x, w) in merged.atoms() {
            if w.abs() > tol {
                points.extend_from_slice(x);
                weights.push(w);
            }
        }
        Self { dim: self.dim, points, weights }
    }
}

impl From<ParticleMeasure> for SignedParticleMeasure {
    fn from(m: ParticleMeasure) -> Self {
        Self { dim: m.dim, points: m.points, weights: m.weights }
    }
}

/// Tolerance on `Σ wₖ = 1` for lifted ensembles.
pub const PROBABILITY_TOL: f64 = 1e-12;

/// Probability measure `Σ wₖ δ_{(xₖ, yₖ)}` on `ℝⁿ × ℝ⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedEnsemble {
    dim: usize,
    weights: Vec<f64>,
    positions: Vec<f64>,
    masses: Vec<f64>,
}

impl LiftedEnsemble {
    pub fn new(dim: usize, weights: Vec<f64>, positions: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        check_layout(dim, &positions, &weights)?;
        if masses.len() != weights.len() {
            return Err(Error::Dimension(format!("{} masses for {} particles", masses.len(), weights.len())));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidMeasure("negative base weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::InvalidMeasure(format!("base weights sum to {total}, expected 1")));
        }
        if let Some(y) = masses.iter().find(|y| !y.is_finite() || **y < 0.0) {
            return Err(Error::InvalidMeasure(format!("mass multiplier {y} outside [0, ∞)")));
        }
        Ok(Self { dim, weights, positions, masses })
    }

    /// Builds an ensemble without re-validating; used on solver output whose
    /// invariants are maintained by construction.
    pub(crate) fn from_parts_unchecked(dim: usize, weights: Vec<f64>, positions: Vec<f64>, masses: Vec<f64>) -> Self {
        Self { dim, weights, positions, masses }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `β(ρ) = Σ wₖ yₖ δ_{xₖ}`.
    pub fn barycentric_projection(&self) -> ParticleMeasure {
        ParticleMeasure {
            dim: self.dim,
            points: self.positions.clone(),
            weights: self.weights.iter().zip(&self.masses).map(|(w, y)| w * y).collect(),
        }
    }

    /// The ensemble as a probability measure on `ℝⁿ⁺¹` (points `(xₖ, yₖ)`, weights `wₖ`).
    pub fn product_measure(&self) -> ParticleMeasure {
        let mut points = Vec::with_capacity(self.len() * (self.dim + 1));
        for (x, y) in self.positions.chunks_exact(self.dim).zip(&self.masses) {
            points.extend_from_slice(x);
            points.push(*y);
        }
        ParticleMeasure { dim: self.dim + 1, points, weights: self.weights.clone() }
    }

    /// `max_k |(xₖ, yₖ)|`.
    pub fn support_radius(&self) -> f64 {
        self.positions
            .chunks_exact(self.dim)
            .zip(&self.masses)
            .map(|(x, y)| (x.iter().map(|v| v * v).sum::<f64>() + y * y).sqrt())
            .fold(0.0, f64::max)
    }

    /// Same ensemble with every mass multiplied by `alpha ≥ 0`.
    pub fn scale_masses(&self, alpha: f64) -> Result<Self> {
        Self::new(
            self.dim,
            self.weights.clone(),
            self.positions.clone(),
            self.masses.iter().map(|y| alpha * y).collect(),
        )
    }
}

/// `Σ weights`.
pub fn total_mass(m: &ParticleMeasure) -> f64 {
    m.total_mass()
}

/// `β(ρ)`.
pub fn barycentric_projection(e: &LiftedEnsemble) -> ParticleMeasure {
    e.barycentric_projection()
}

/// `max_k |(xₖ, yₖ)|`.
pub fn support_radius(e: &LiftedEnsemble) -> f64 {
    e.support_radius()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(atoms: &[(f64, f64)]) -> ParticleMeasure {
        ParticleMeasure::from_atoms_1d(atoms).unwrap()
    }

    #[test]
    fn total_mass_examples() {
        assert_eq!(total_mass(&m1(&[(0.0, 1.0)])), 1.0);
        assert_eq!(total_mass(&m1(&[(0.0, 0.5), (4.0, 0.5)])), 1.0);
        assert_eq!(total_mass(&m1(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])), 0.0);
    }

    #[test]
    fn integrate_examples() {
        assert_eq!(m1(&[(2.0, 1.0)]).integrate(|x| x[0] * x[0]), 4.0);
        let half = m1(&[(0.0, 0.5), (4.0, 0.5)]);
        assert_eq!(half.integrate(|x| x[0] * x[0]), 8.0);
        assert_eq!(half.integrate(|x| (x[0] - 2.0).powi(2)), 4.0);
    }

    #[test]
    fn pushforward_examples() {
        let shifted = m1(&[(0.0, 1.0)]).pushforward(|x| vec![x[0] + 3.0]).unwrap();
        assert_eq!(shifted, m1(&[(3.0, 1.0)]));
        let scaled = m1(&[(0.0, 0.5), (1.0, 0.5)]).pushforward(|x| vec![2.0 * x[0]]).unwrap();
        assert_eq!(scaled, m1(&[(0.0, 0.5), (2.0, 0.5)]));
        let m = m1(&[(0.3, 0.2), (-1.0, 0.7)]);
        assert_eq!(m.pushforward(|x| x.to_vec()).unwrap(), m);
    }

    #[test]
    fn pushforward_keeps_coincident_images() {
        let m = m1(&[(-1.0, 0.5), (1.0, 0.5)]).pushforward(|x| vec![x[0] * x[0]]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.merged().len(), 1);
        assert_eq!(m.merged().weights(), &[1.0]);
    }

    #[test]
    fn barycentric_projection_examples() {
        let e = LiftedEnsemble::new(1, vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert_eq!(e.barycentric_projection(), m1(&[(0.0, 1.0)]));

        let e = LiftedEnsemble::new(1, vec![0.5, 0.5], vec![0.0, 1.0], vec![2.0, 4.0]).unwrap();
        assert_eq!(e.barycentric_projection(), m1(&[(0.0, 1.0), (1.0, 2.0)]));

        let e = LiftedEnsemble::new(1, vec![0.25, 0.75], vec![-1.0, 3.0], vec![3.0, 3.0]).unwrap();
        assert_eq!(e.barycentric_projection(), m1(&[(-1.0, 0.75), (3.0, 2.25)]));
    }

    #[test]
    fn support_radius_examples() {
        let e = LiftedEnsemble::new(1, vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert_eq!(e.support_radius(), 1.0);
        let e = LiftedEnsemble::new(1, vec![1.0], vec![3.0], vec![4.0]).unwrap();
        assert_eq!(e.support_radius(), 5.0);
        let e = LiftedEnsemble::new(1, vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(e.support_radius(), 2f64.sqrt());
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(ParticleMeasure::new(1, vec![0.0], vec![-1.0]).is_err());
        assert!(ParticleMeasure::new(2, vec![0.0], vec![1.0]).is_err());
        assert!(ParticleMeasure::new(1, vec![f64::NAN], vec![1.0]).is_err());
        assert!(LiftedEnsemble::new(1, vec![0.5], vec![0.0], vec![1.0]).is_err());
        assert!(LiftedEnsemble::new(1, vec![1.0], vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn difference_merges_to_zero() {
        let a = m1(&[(0.0, 0.5), (1.0, 0.5)]);
        let d = SignedParticleMeasure::difference(&a, &a).unwrap();
        assert_eq!(d.total_mass(), 0.0);
        assert_eq!(d.total_variation(), 0.0);
        assert!(d.pruned(0.0).is_empty());
    }
}
