use super::{ControlBox, Cost, Model};
use crate::measure::ParticleMeasure;

/// Scalar transport with a control-driven sink:
/// `∂ₜμ + u ∂ₓμ = −u μ`, `|u| ≤ 1`, `ℓ(μ) = ½ ∫ x² dμ`.
#[derive(Debug, Clone)]
pub struct ScalarBenchmark {
    control_box: ControlBox,
    cost: Cost,
}

impl Default for ScalarBenchmark {
    fn default() -> Self {
        Self::new()
    }
}

impl ScalarBenchmark {
    pub fn new() -> Self {
        Self { control_box: ControlBox::symmetric(1, 1.0), cost: Cost::quadratic(vec![0.0]) }
    }

    pub fn with_cost(mut self, cost: Cost) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_control_box(mut self, control_box: ControlBox) -> Self {
        self.control_box = control_box;
        self
    }
}

impl Model for ScalarBenchmark {
    fn name(&self) -> &str {
        "scalar-benchmark"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    fn field(&self, _t: f64, u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }

    fn source(&self, _t: f64, u: &[f64], _mu: &ParticleMeasure, _x: &[f64]) -> f64 {
        -u[0]
    }

    fn field_dx(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn source_dx(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn field_flat(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn source_flat(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64]) -> f64 {
        0.0
    }

    fn field_intrinsic(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn source_intrinsic(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn is_nonlocal(&self) -> bool {
        false
    }

    fn control_differentiable(&self) -> bool {
        true
    }

    fn field_du(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn source_du(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out[0] = -1.0;
    }

    fn cost(&self) -> &Cost {
        &self.cost
    }

    fn sublinearity_constant(&self) -> Option<f64> {
        Some(self.control_box.max_abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_values() {
        let m = ScalarBenchmark::new();
        let mu = ParticleMeasure::from_atoms_1d(&[(1.0, 2.0)]).unwrap();
        let mut f = [0.0];
        m.field(0.3, &[0.5], &mu, &[7.0], &mut f);
        assert_eq!(f, [0.5]);
        assert_eq!(m.source(0.3, &[0.5], &mu, &[7.0]), -0.5);
        assert_eq!(m.cost().flat(&mu, &[2.0]), 2.0);
        let mut g = [0.0];
        m.cost().intrinsic(&mu, &[2.0], &mut g);
        assert_eq!(g, [2.0]);
        assert_eq!(m.source_flat(0.0, &[1.0], &mu, &[0.0], &[1.0]), 0.0);
        assert_eq!(m.cost().value(&mu), 1.0);
    }
}
