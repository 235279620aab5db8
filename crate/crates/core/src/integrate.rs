//! Explicit one-step schemes shared by the forward and backward sweeps.

use serde::{Deserialize, Serialize};

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

impl Integrator {
    pub fn order(self) -> u32 {
        match self {
            Integrator::Euler => 1,
            Integrator::Rk4 => 4,
        }
    }
}

impl std::str::FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(format!("unknown integrator '{other}' (expected euler or rk4)")),
        }
    }
}

/// Scratch space for stepping an ODE `ż = f(t, z)` of fixed size.
pub(crate) struct Stepper {
    method: Integrator,
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Stepper {
    pub fn new(method: Integrator, size: usize) -> Self {
        Self { method, k: std::array::from_fn(|_| vec![0.0; size]), stage: vec![0.0; size] }
    }

    /// Advances `state` from `t` to `t + h` (`h` may be negative).
    ///
    /// `rhs(t, z, dz)` is called at stage times `t`, `t + h/2`, `t + h/2`, `t + h`.
    pub fn step<F>(&mut self, t: f64, h: f64, state: &mut [f64], rhs: &mut F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let [k1, k2, k3, k4] = &mut self.k;
        match self.method {
            Integrator::Euler => {
                rhs(t, state, k1);
                for (z, d) in state.iter_mut().zip(k1.iter()) {
                    *z += h * d;
                }
            }
            Integrator::Rk4 => {
                let stage = &mut self.stage;
                rhs(t, state, k1);
                for ((s, z), d) in stage.iter_mut().zip(state.iter()).zip(k1.iter()) {
                    *s = z + 0.5 * h * d;
                }
                rhs(t + 0.5 * h, stage, k2);
                for ((s, z), d) in stage.iter_mut().zip(state.iter()).zip(k2.iter()) {
                    *s = z + 0.5 * h * d;
                }
                rhs(t + 0.5 * h, stage, k3);
                for ((s, z), d) in stage.iter_mut().zip(state.iter()).zip(k3.iter()) {
                    *s = z + h * d;
                }
                rhs(t + h, stage, k4);
                for (i, z) in state.iter_mut().enumerate() {
                    *z += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
    }
}
