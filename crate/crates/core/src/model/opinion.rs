//! Mean-field opinion dynamics with pairwise interaction and influence exchange:
//!
//! ```text
//! F(μ, x) = ∫ ψ(y − x) dμ(y),    G(μ, x) = ∫ S(x, x₁) dμ(x₁)
//! ```
//!
//! Both kernels act on the displacement `d = y − x`, so `S(x, x₁) = s(x₁ − x)`.
//! A kernel with `s(−d) = −s(d)` is skew-symmetric and conserves total mass.

use serde::{Deserialize, Serialize};

use super::{ControlBox, Cost, Model};
use crate::error::{Error, Result};
use crate::measure::ParticleMeasure;

/// Interaction kernel `ψ : ℝⁿ → ℝⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InteractionKernel {
    Zero,
    /// `ψ(d) = a d`.
    Linear {
        strength: f64,
    },
    /// `ψ(d) = a d exp(−|d|²/σ²)`; a mollified bounded-confidence attraction.
    Gaussian {
        strength: f64,
        width: f64,
    },
}

/// Influence kernel `s : ℝⁿ → ℝ` applied to `x₁ − x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceKernel {
    Zero,
    /// `s(d) = c Σᵢ dᵢ`; skew-symmetric.
    Difference {
        strength: f64,
    },
    /// `s(d) = c (Σᵢ dᵢ) exp(−|d|²/σ²)`; skew-symmetric.
    GaussianDifference {
        strength: f64,
        width: f64,
    },
    /// `s(d) = c exp(−|d|²/σ²)`; symmetric, changes total mass.
    Affinity {
        strength: f64,
        width: f64,
    },
}

fn norm_sq(d: &[f64]) -> f64 {
    d.iter().map(|v| v * v).sum()
}

impl InteractionKernel {
    fn eval(&self, d: &[f64], out: &mut [f64]) {
        match *self {
            InteractionKernel::Zero => out.fill(0.0),
            InteractionKernel::Linear { strength } => {
                for (o, v) in out.iter_mut().zip(d) {
                    *o = strength * v;
                }
            }
            InteractionKernel::Gaussian { strength, width } => {
                let e = (-norm_sq(d) / (width * width)).exp();
                for (o, v) in out.iter_mut().zip(d) {
                    *o = strength * v * e;
                }
            }
        }
    }

    /// Jacobian `Dψ(d)`, row-major.
    fn jacobian(&self, d: &[f64], out: &mut [f64]) {
        let n = d.len();
        out.fill(0.0);
        match *self {
            InteractionKernel::Zero => {}
            InteractionKernel::Linear { strength } => {
                for i in 0..n {
                    out[i * n + i] = strength;
                }
            }
            InteractionKernel::Gaussian { strength, width } => {
                let w2 = width * width;
                let e = (-norm_sq(d) / w2).exp();
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[i * n + j] = strength * e * (delta - 2.0 * d[i] * d[j] / w2);
                    }
                }
            }
        }
    }

    /// `sup |ψ|`, when finite.
    fn bound(&self) -> Option<f64> {
        match *self {
            InteractionKernel::Zero => Some(0.0),
            InteractionKernel::Linear { strength } => (strength == 0.0).then_some(0.0),
            InteractionKernel::Gaussian { strength, width } => {
                Some(strength.abs() * width / 2f64.sqrt() * (-0.5f64).exp())
            }
        }
    }
}

impl SourceKernel {
    fn eval(&self, d: &[f64]) -> f64 {
        match *self {
            SourceKernel::Zero => 0.0,
            SourceKernel::Difference { strength } => strength * d.iter().sum::<f64>(),
            SourceKernel::GaussianDifference { strength, width } => {
                strength * d.iter().sum::<f64>() * (-norm_sq(d) / (width * width)).exp()
            }
            SourceKernel::Affinity { strength, width } => strength * (-norm_sq(d) / (width * width)).exp(),
        }
    }

    fn gradient(&self, d: &[f64], out: &mut [f64]) {
        match *self {
            SourceKernel::Zero => out.fill(0.0),
            SourceKernel::Difference { strength } => out.fill(strength),
            SourceKernel::GaussianDifference { strength, width } => {
                let w2 = width * width;
                let e = (-norm_sq(d) / w2).exp();
                let s: f64 = d.iter().sum();
                for (o, v) in out.iter_mut().zip(d) {
                    *o = strength * e * (1.0 - 2.0 * s * v / w2);
                }
            }
            SourceKernel::Affinity { strength, width } => {
                let w2 = width * width;
                let e = (-norm_sq(d) / w2).exp();
                for (o, v) in out.iter_mut().zip(d) {
                    *o = -2.0 * strength * e * v / w2;
                }
            }
        }
    }

    pub fn is_skew_symmetric(&self) -> bool {
        !matches!(self, SourceKernel::Affinity { strength, .. } if *strength != 0.0)
    }
}

/// Opinion dynamics with optional additive control drift `F + u`.
#[derive(Debug, Clone)]
pub struct OpinionDynamics {
    dim: usize,
    interaction: InteractionKernel,
    influence: SourceKernel,
    controlled: bool,
    control_box: ControlBox,
    cost: Cost,
    declared_bound: Option<f64>,
}

impl OpinionDynamics {
    pub fn new(dim: usize, interaction: InteractionKernel, influence: SourceKernel) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("state dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            interaction,
            influence,
            controlled: false,
            control_box: ControlBox::symmetric(1, 0.0),
            cost: Cost::Zero,
            declared_bound: None,
        })
    }

    /// Adds the control as a drift `F(μ, x) + u`, `u ∈ U ⊂ ℝⁿ`.
    pub fn with_control(mut self, control_box: ControlBox) -> Result<Self> {
        if control_box.dim() != self.dim {
            return Err(Error::Dimension("control drift must match the state dimension".into()));
        }
        self.controlled = true;
        self.control_box = control_box;
        Ok(self)
    }

    pub fn with_cost(mut self, cost: Cost) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_declared_bound(mut self, bound: f64) -> Self {
        self.declared_bound = Some(bound);
        self
    }

    pub fn interaction(&self) -> InteractionKernel {
        self.interaction
    }

    pub fn influence(&self) -> SourceKernel {
        self.influence
    }

    fn displacement(x: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(y).zip(x) {
            *o = a - b;
        }
    }
}

impl Model for OpinionDynamics {
    fn name(&self) -> &str {
        "opinion"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    fn field(&self, _t: f64, u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        let mut d = vec![0.0; n];
        let mut psi = vec![0.0; n];
        out.fill(0.0);
        for (y, w) in mu.atoms() {
            Self::displacement(x, y, &mut d);
            self.interaction.eval(&d, &mut psi);
            for (o, p) in out.iter_mut().zip(&psi) {
                *o += w * p;
            }
        }
        if self.controlled {
            for (o, v) in out.iter_mut().zip(u) {
                *o += v;
            }
        }
    }

    fn source(&self, _t: f64, _u: &[f64], mu: &ParticleMeasure, x: &[f64]) -> f64 {
        let mut d = vec![0.0; self.dim];
        let mut acc = 0.0;
        for (y, w) in mu.atoms() {
            Self::displacement(x, y, &mut d);
            acc += w * self.influence.eval(&d);
        }
        acc
    }

    fn field_dx(&self, _t: f64, _u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        let mut d = vec![0.0; n];
        let mut jac = vec![0.0; n * n];
        out.fill(0.0);
        for (y, w) in mu.atoms() {
            Self::displacement(x, y, &mut d);
            self.interaction.jacobian(&d, &mut jac);
            for (o, j) in out.iter_mut().zip(&jac) {
                *o -= w * j;
            }
        }
    }

    fn source_dx(&self, _t: f64, _u: &[f64], mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        let mut d = vec![0.0; n];
        let mut grad = vec![0.0; n];
        out.fill(0.0);
        for (y, w) in mu.atoms() {
            Self::displacement(x, y, &mut d);
            self.influence.gradient(&d, &mut grad);
            for (o, g) in out.iter_mut().zip(&grad) {
                *o -= w * g;
            }
        }
    }

    fn field_flat(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]) {
        let mut d = vec![0.0; self.dim];
        Self::displacement(x, xp, &mut d);
        self.interaction.eval(&d, out);
    }

    fn source_flat(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, x: &[f64], xp: &[f64]) -> f64 {
        let mut d = vec![0.0; self.dim];
        Self::displacement(x, xp, &mut d);
        self.influence.eval(&d)
    }

    fn field_intrinsic(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]) {
        let mut d = vec![0.0; self.dim];
        Self::displacement(x, xp, &mut d);
        self.interaction.jacobian(&d, out);
    }

    fn source_intrinsic(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, x: &[f64], xp: &[f64], out: &mut [f64]) {
        let mut d = vec![0.0; self.dim];
        Self::displacement(x, xp, &mut d);
        self.influence.gradient(&d, out);
    }

    fn control_differentiable(&self) -> bool {
        true
    }

    fn field_du(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if self.controlled {
            for i in 0..self.dim {
                out[i * self.dim + i] = 1.0;
            }
        }
    }

    fn cost(&self) -> &Cost {
        &self.cost
    }

    fn sublinearity_constant(&self) -> Option<f64> {
        self.declared_bound.or_else(|| {
            let psi = self.interaction.bound()?;
            let drift = if self.controlled { self.control_box.max_abs() * (self.dim as f64).sqrt() } else { 0.0 };
            matches!(self.influence, SourceKernel::Zero).then_some(psi.max(drift))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(atoms: &[(f64, f64)]) -> ParticleMeasure {
        ParticleMeasure::from_atoms_1d(atoms).unwrap()
    }

    #[test]
    fn single_particle_attraction() {
        let model = OpinionDynamics::new(1, InteractionKernel::Linear { strength: 1.0 }, SourceKernel::Zero).unwrap();
        let mut f = [0.0];
        model.field(0.0, &[0.0], &m1(&[(1.0, 1.0)]), &[0.0], &mut f);
        assert_eq!(f, [1.0]);
    }

    #[test]
    fn difference_influence_is_mean_displacement() {
        let model =
            OpinionDynamics::new(1, InteractionKernel::Zero, SourceKernel::Difference { strength: 1.0 }).unwrap();
        let mu = m1(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(model.source(0.0, &[0.0], &mu, &[0.0]), 1.0);
        // Pairwise interaction: δG/δμ(μ, x, x′) = S(x, x′).
        for xp in [-1.0, 0.0, 0.7, 3.0] {
            assert_eq!(model.source_flat(0.0, &[0.0], &mu, &[0.0], &[xp]), xp);
        }
    }

    #[test]
    fn gaussian_kernel_bound_matches_grid_maximum() {
        let k = InteractionKernel::Gaussian { strength: 1.5, width: 0.8 };
        let mut out = [0.0];
        let sampled = (0..20001)
            .map(|i| {
                k.eval(&[-5.0 + i as f64 * 5e-4], &mut out);
                out[0].abs()
            })
            .fold(0.0, f64::max);
        assert!((sampled - k.bound().unwrap()).abs() < 1e-6);
    }
}
