//! Dynamics and cost interface for controlled balance laws.
//!
//! Matrix-valued callbacks write row-major into `out`:
//! `D_xF` and `D_μF` are `n × n` with `out[i*n + j] = ∂Fᵢ/∂(x or x′)ⱼ`,
//! `∇_uF` is `n × m` with `out[i*m + j] = ∂Fᵢ/∂uⱼ`.
//!
//! For the nonlocal derivatives the second spatial argument `x′` is the
//! location of the measure perturbation: `δF/δμ(t, u, μ, x, x′)` is the
//! response of `F(·, x)` to adding mass at `x′`.

mod benchmark;
pub mod check;
mod linear;
mod opinion;

pub use benchmark::ScalarBenchmark;
pub use linear::LinearModel;
pub use opinion::{InteractionKernel, OpinionDynamics, SourceKernel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleMeasure;

/// A controlled nonlocal balance law `∂ₜμ + ∇·(Fμ) = Gμ` with terminal cost `ℓ`.
///
/// Callbacks must be pure; the solvers evaluate them concurrently.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    /// State dimension `n`.
    fn state_dim(&self) -> usize;

    fn control_box(&self) -> &ControlBox;

    fn control_dim(&self) -> usize {
        self.control_box().dim()
    }

    fn field(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]);

    fn source(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64]) -> f64;

    fn field_dx(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]);

    fn source_dx(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]);

    fn field_flat(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]);

    fn source_flat(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], xp: &[f64]) -> f64;

    fn field_intrinsic(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]);

    fn source_intrinsic(&self, t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]);

    /// `false` when F and G do not depend on μ; lets solvers skip the O(N²) coupling.
    fn is_nonlocal(&self) -> bool {
        true
    }

    /// Whether [`Model::field_du`] and [`Model::source_du`] are implemented.
    fn control_differentiable(&self) -> bool {
        false
    }

    fn field_du(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn source_du(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn cost(&self) -> &Cost;

    /// Declared constant `C` with `|F| ≤ C(1 + μ(ℝⁿ))` and `|G| ≤ C` on the sampled region.
    fn sublinearity_constant(&self) -> Option<f64> {
        None
    }
}

/// Admissible control set `U = Π [lowerᵢ, upperᵢ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config(format!(
                "control bounds must be nonempty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite()) || a > b {
                return Err(Error::Config(format!("control bound {i}: [{a}, {b}] is not a box")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The box `[-r, r]ᵐ`.
    pub fn symmetric(dim: usize, r: f64) -> Self {
        Self { lower: vec![-r; dim], upper: vec![r; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim() && u.iter().zip(&self.lower).zip(&self.upper).all(|((v, a), b)| a <= v && v <= b)
    }

    pub fn clip(&self, u: &mut [f64]) {
        for ((v, a), b) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*a, *b);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Largest `|uᵢ|` over the box, in max norm.
    pub fn max_abs(&self) -> f64 {
        self.lower.iter().chain(&self.upper).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Tensor grid with `resolution` points per dimension, in lexicographic order.
    /// Degenerate intervals contribute a single point.
    pub fn grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&a, &b)| {
                if a == b || resolution < 2 {
                    vec![a]
                } else {
                    (0..resolution)
                        .map(|i| if i + 1 == resolution { b } else { a + (b - a) * i as f64 / (resolution - 1) as f64 })
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// Box vertices in lexicographic order (duplicates removed for degenerate sides).
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        self.grid(2)
    }
}

/// Terminal cost `ℓ(μ)` with its flat and intrinsic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Cost {
    /// `ℓ ≡ 0`.
    Zero,
    /// `ℓ(μ) = scale · ½ ∫ |x − target|² dμ(x)`.
    Quadratic { target: Vec<f64>, scale: f64 },
    /// `ℓ(μ) = scale · ½ |∫ x dμ(x) − target|²`.
    CenterOfMass { target: Vec<f64>, scale: f64 },
}

impl Cost {
    pub fn quadratic(target: Vec<f64>) -> Self {
        Cost::Quadratic { target, scale: 1.0 }
    }

    /// Same cost multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        match self {
            Cost::Zero => Cost::Zero,
            Cost::Quadratic { target, scale } => Cost::Quadratic { target: target.clone(), scale: alpha * scale },
            Cost::CenterOfMass { target, scale } => Cost::CenterOfMass { target: target.clone(), scale: alpha * scale },
        }
    }

    pub fn value(&self, mu: &ParticleMeasure) -> f64 {
        match self {
            Cost::Zero => 0.0,
            Cost::Quadratic { target, scale } => {
                scale * 0.5 * mu.integrate(|x| x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum())
            }
            Cost::CenterOfMass { target, scale } => {
                let m1 = first_moment(mu);
                scale * 0.5 * m1.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
        }
    }

    /// `δℓ/δμ(μ, x)`.
    pub fn flat(&self, mu: &ParticleMeasure, x: &[f64]) -> f64 {
        match self {
            Cost::Zero => 0.0,
            Cost::Quadratic { target, scale } => {
                scale * 0.5 * x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            Cost::CenterOfMass { target, scale } => {
                let m1 = first_moment(mu);
                scale * m1.iter().zip(target).zip(x).map(|((m, c), xi)| (m - c) * xi).sum::<f64>()
            }
        }
    }

    /// `∇_μℓ(μ, x)`.
    pub fn intrinsic(&self, mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
        match self {
            Cost::Zero => out.fill(0.0),
            Cost::Quadratic { target, scale } => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(target) {
                    *o = scale * (a - b);
                }
            }
            Cost::CenterOfMass { target, scale } => {
                let m1 = first_moment(mu);
                for ((o, m), c) in out.iter_mut().zip(&m1).zip(target) {
                    *o = scale * (m - c);
                }
            }
        }
    }

    /// Checks the target dimension against the state dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Cost::Zero => Ok(()),
            Cost::Quadratic { target, .. } | Cost::CenterOfMass { target, .. } if target.len() == dim => Ok(()),
            _ => Err(Error::Config(format!("cost target must have {dim} components"))),
        }
    }
}

fn first_moment(mu: &ParticleMeasure) -> Vec<f64> {
    let mut m1 = vec![0.0; mu.dim()];
    for (x, w) in mu.atoms() {
        for (m, xi) in m1.iter_mut().zip(x) {
            *m += w * xi;
        }
    }
    m1
}

/// A scalar functional on measures together with its claimed derivatives.
pub trait MeasureFunctional {
    fn dim(&self) -> usize;
    fn value(&self, mu: &ParticleMeasure) -> f64;
    /// `δQ/δμ(μ, x)`.
    fn flat(&self, mu: &ParticleMeasure, x: &[f64]) -> f64;
    /// `∇_μQ(μ, x)`.
    fn intrinsic(&self, mu: &ParticleMeasure, x: &[f64], out: &mut [f64]);
}

/// The terminal cost of a model, viewed as a functional.
pub struct CostFunctional<'a> {
    pub cost: &'a Cost,
    pub dim: usize,
}

impl MeasureFunctional for CostFunctional<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, mu: &ParticleMeasure) -> f64 {
        self.cost.value(mu)
    }
    fn flat(&self, mu: &ParticleMeasure, x: &[f64]) -> f64 {
        self.cost.flat(mu, x)
    }
    fn intrinsic(&self, mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
        self.cost.intrinsic(mu, x, out)
    }
}

/// `μ ↦ G(t, u, μ, x)` at a frozen `(t, u, x)`.
pub struct SourceFunctional<'a> {
    pub model: &'a dyn Model,
    pub t: f64,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
}

impl MeasureFunctional for SourceFunctional<'_> {
    fn dim(&self) -> usize {
        self.model.state_dim()
    }
    fn value(&self, mu: &ParticleMeasure) -> f64 {
        self.model.source(self.t, &self.u, mu, &self.x)
    }
    fn flat(&self, mu: &ParticleMeasure, xp: &[f64]) -> f64 {
        self.model.source_flat(self.t, &self.u, mu, &self.x, xp)
    }
    fn intrinsic(&self, mu: &ParticleMeasure, xp: &[f64], out: &mut [f64]) {
        self.model.source_intrinsic(self.t, &self.u, mu, &self.x, xp, out)
    }
}

/// `μ ↦ Fᵢ(t, u, μ, x)` at a frozen `(t, u, x)` and component `i`.
pub struct FieldComponentFunctional<'a> {
    pub model: &'a dyn Model,
    pub t: f64,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub component: usize,
}

impl MeasureFunctional for FieldComponentFunctional<'_> {
    fn dim(&self) -> usize {
        self.model.state_dim()
    }
    fn value(&self, mu: &ParticleMeasure) -> f64 {
        let mut out = vec![0.0; self.dim()];
        self.model.field(self.t, &self.u, mu, &self.x, &mut out);
        out[self.component]
    }
    fn flat(&self, mu: &ParticleMeasure, xp: &[f64]) -> f64 {
        let mut out = vec![0.0; self.dim()];
        self.model.field_flat(self.t, &self.u, mu, &self.x, xp, &mut out);
        out[self.component]
    }
    fn intrinsic(&self, mu: &ParticleMeasure, xp: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut jac = vec![0.0; n * n];
        self.model.field_intrinsic(self.t, &self.u, mu, &self.x, xp, &mut jac);
        out.copy_from_slice(&jac[self.component * n..(self.component + 1) * n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_lexicographic_and_hits_bounds() {
        let b = ControlBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g = b.grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-1.0, 0.0]);
        assert_eq!(g[1], vec![-1.0, 1.0]);
        assert_eq!(g[8], vec![1.0, 2.0]);
        let singleton = ControlBox::new(vec![0.5], vec![0.5]).unwrap();
        assert_eq!(singleton.grid(101), vec![vec![0.5]]);
        assert_eq!(b.vertices().len(), 4);
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(ControlBox::new(vec![1.0], vec![-1.0]).is_err());
        assert!(ControlBox::new(vec![], vec![]).is_err());
    }

    #[test]
    fn center_of_mass_cost_derivatives() {
        let mu = ParticleMeasure::from_atoms_1d(&[(1.0, 0.5), (3.0, 0.5)]).unwrap();
        let cost = Cost::CenterOfMass { target: vec![0.0], scale: 1.0 };
        assert_eq!(cost.value(&mu), 2.0);
        assert_eq!(cost.flat(&mu, &[3.0]), 6.0);
        let mut g = [0.0];
        cost.intrinsic(&mu, &[3.0], &mut g);
        assert_eq!(g, [2.0]);
    }
}
