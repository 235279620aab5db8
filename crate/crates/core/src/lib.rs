//! Particle methods for controlled nonlocal balance laws
//!
//! ```text
//! ∂ₜμ + ∇·(F(t, u, μ, x) μ) = G(t, u, μ, x) μ,    μ₀ = ϑ
//! ```
//!
//! on the cone of nonnegative compactly supported measures, together with a
//! Pontryagin-type optimizer for `ℓ(μ_T) → min` over piecewise-constant
//! controls `u(t) ∈ U`.
//!
//! A measure is lifted to a probability measure on `ℝⁿ × ℝ⁺` whose particles
//! carry a position `x` and a mass multiplier `y`; the balance law becomes a
//! continuity equation for the lifted particles and the original measure is
//! recovered by the barycentric projection `Σ wₖ yₖ δ_{xₖ}`.
//!
//! * [`measure`] – particle measures, barycentric projection, W₂ and flat metrics.
//! * [`model`] – the [`Model`] trait, built-in models and derivative checkers.
//! * [`forward`] – characteristic integration of the state.
//! * [`adjoint`] – backward costates, Hamiltonians and control gradients.
//! * [`optimize`] – successive approximations, projected gradient, extremal classification.
//! * [`io`] – CSV emission and loading.

pub mod adjoint;
pub mod error;
pub mod forward;
pub mod integrate;
pub mod io;
pub mod measure;
pub mod model;
pub mod optimize;

pub use adjoint::{AdjointMeasures, CostateBundle};
pub use error::{Error, Result};
pub use forward::{ControlSignal, TimeGrid, TrajectoryBundle};
pub use integrate::Integrator;
pub use measure::{LiftedEnsemble, ParticleMeasure, SignedParticleMeasure};
pub use model::{ControlBox, Cost, Model};
pub use optimize::{OptimizationReport, OptimizerConfig};
