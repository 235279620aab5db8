//! Deterministic fixtures shared by the benchmarks.

use mfpmp::model::{InteractionKernel, OpinionDynamics, SourceKernel};
use mfpmp::{ControlBox, ControlSignal, Cost, ParticleMeasure, SignedParticleMeasure, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` atoms in `[-2, 2]ᵈ` with weights summing to one.
pub fn cloud(dim: usize, count: usize, seed: u64) -> ParticleMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    ParticleMeasure::new(dim, points, raw.iter().map(|w| w / total).collect()).expect("valid cloud")
}

/// Planar opinion model with drift control and a center-of-mass target.
pub fn opinion_model() -> OpinionDynamics {
    OpinionDynamics::new(
        2,
        InteractionKernel::Gaussian { strength: 1.0, width: 1.5 },
        SourceKernel::GaussianDifference { strength: 0.5, width: 2.0 },
    )
    .expect("valid kernels")
    .with_control(ControlBox::symmetric(2, 1.0))
    .expect("matching control dimension")
    .with_cost(Cost::CenterOfMass { target: vec![1.0, -0.5], scale: 1.0 })
}

pub fn unit_grid(steps: usize) -> TimeGrid {
    TimeGrid::new(1.0, steps).expect("positive horizon and steps")
}

pub fn rotating_control(steps: usize) -> ControlSignal {
    let values = (0..steps)
        .flat_map(|m| {
            let t = (m as f64 + 0.5) / steps as f64;
            [0.5 * (3.0 * t).cos(), 0.5 * (3.0 * t).sin()]
        })
        .collect();
    ControlSignal::new(2, values).expect("two components per step")
}

/// Difference of two random clouds with unequal total mass.
pub fn signed_pair(dim: usize, count: usize) -> SignedParticleMeasure {
    let a = cloud(dim, count, 1);
    let b = cloud(dim, count, 2).pushforward(|x| x.iter().map(|v| 0.5 * v).collect()).expect("same dimension");
    let b = ParticleMeasure::new(dim, b.points().to_vec(), b.weights().iter().map(|w| 0.8 * w).collect())
        .expect("scaled weights stay nonnegative");
    SignedParticleMeasure::difference(&a, &b).expect("same dimension")
}
