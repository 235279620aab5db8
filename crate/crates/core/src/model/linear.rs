use super::{ControlBox, Cost, Model};
use crate::error::{Error, Result};
use crate::measure::ParticleMeasure;

/// Local linear dynamics `F = A x (+ u)`, `G ≡ c`.
///
/// With `controlled` the control enters additively in the drift (`m = n`).
#[derive(Debug, Clone)]
pub struct LinearModel {
    dim: usize,
    matrix: Vec<f64>,
    rate: f64,
    controlled: bool,
    control_box: ControlBox,
    cost: Cost,
}

impl LinearModel {
    /// `matrix` is row-major `n × n`.
    pub fn new(dim: usize, matrix: Vec<f64>, rate: f64) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::Dimension(format!("drift matrix needs {} entries", dim * dim)));
        }
        Ok(Self { dim, matrix, rate, controlled: false, control_box: ControlBox::symmetric(1, 0.0), cost: Cost::Zero })
    }

    /// `F ≡ 0`, `G ≡ c`.
    pub fn constant_source(dim: usize, rate: f64) -> Self {
        Self::new(dim, vec![0.0; dim * dim], rate).expect("square zero matrix")
    }

    pub fn with_control(mut self, control_box: ControlBox) -> Result<Self> {
        if control_box.dim() != self.dim {
            return Err(Error::Dimension("additive control must match the state dimension".into()));
        }
        self.controlled = true;
        self.control_box = control_box;
        Ok(self)
    }

    pub fn with_cost(mut self, cost: Cost) -> Self {
        self.cost = cost;
        self
    }
}

impl Model for LinearModel {
    fn name(&self) -> &str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    fn field(&self, _t: f64, u: &[f64], _mu: &ParticleMeasure, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..n).map(|j| self.matrix[i * n + j] * x[j]).sum::<f64>();
            if self.controlled {
                *o += u[i];
            }
        }
    }

    fn source(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64]) -> f64 {
        self.rate
    }

    fn field_dx(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }

    fn source_dx(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn field_flat(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn source_flat(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64]) -> f64 {
        0.0
    }

    fn field_intrinsic(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn source_intrinsic(&self, _t: f64, _u: &[f64], _mu: &ParticleMeasure, _x: &[f64], _xp: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn is_nonlocal(&self) -> bool {
        false
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
}
