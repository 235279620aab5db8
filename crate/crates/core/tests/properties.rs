//! Property tests for the measure primitives and the costate sweep.

use mfpmp::adjoint::integrate_adjoint_backward;
use mfpmp::forward::simulate;
use mfpmp::measure::{flat_norm, w2_distance};
use mfpmp::model::ScalarBenchmark;
use mfpmp::{ControlSignal, Cost, Integrator, LiftedEnsemble, ParticleMeasure, SignedParticleMeasure, TimeGrid};
use proptest::prelude::*;

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// `(positions, raw weights)` for `1..=max` particles in dimension `dim`.
fn atoms(dim: usize, max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max)
        .prop_flat_map(move |k| (prop::collection::vec(-3.0..3.0f64, k * dim), prop::collection::vec(0.05..1.0f64, k)))
}

fn ensemble(dim: usize, max: usize) -> impl Strategy<Value = LiftedEnsemble> {
    (1..=max).prop_flat_map(move |k| {
        (
            prop::collection::vec(-3.0..3.0f64, k * dim),
            prop::collection::vec(0.05..1.0f64, k),
            prop::collection::vec(0.0..4.0f64, k),
        )
            .prop_map(move |(x, w, y)| LiftedEnsemble::new(dim, normalized(&w), x, y).unwrap())
    })
}

fn probability(dim: usize, max: usize) -> impl Strategy<Value = ParticleMeasure> {
    atoms(dim, max).prop_map(move |(x, w)| ParticleMeasure::new(dim, x, normalized(&w)).unwrap())
}

fn test_integrals(mu: &ParticleMeasure) -> [f64; 3] {
    [
        mu.integrate(|_| 1.0),
        mu.integrate(|x| x.iter().map(|v| v.sin()).sum()),
        mu.integrate(|x| x.iter().map(|v| v * v).sum()),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn projection_is_homogeneous_in_the_masses(e in ensemble(2, 6), alpha in 0.0..5.0f64) {
        let scaled = e.scale_masses(alpha).unwrap().barycentric_projection();
        let base = e.barycentric_projection();
        for (s, b) in test_integrals(&scaled).iter().zip(test_integrals(&base)) {
            prop_assert!(close(*s, alpha * b, 1e-12));
        }
    }

    #[test]
    fn projection_commutes_with_mixtures(a in ensemble(1, 5), b in ensemble(1, 5), s in 0.0..=1.0f64) {
        let weights: Vec<f64> = a.weights().iter().map(|w| s * w)
            .chain(b.weights().iter().map(|w| (1.0 - s) * w))
            .collect();
        let positions = [a.positions(), b.positions()].concat();
        let masses = [a.masses(), b.masses()].concat();
        let mixed = LiftedEnsemble::new(1, weights, positions, masses).unwrap().barycentric_projection();
        let (ia, ib) = (test_integrals(&a.barycentric_projection()), test_integrals(&b.barycentric_projection()));
        for (k, m) in test_integrals(&mixed).iter().enumerate() {
            prop_assert!(close(*m, s * ia[k] + (1.0 - s) * ib[k], 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_a_metric(a in probability(2, 4), b in probability(2, 4), c in probability(2, 4)) {
        let ab = w2_distance(&a, &b).unwrap();
        let ba = w2_distance(&b, &a).unwrap();
        let bc = w2_distance(&b, &c).unwrap();
        let ac = w2_distance(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(w2_distance(&a, &a).unwrap() <= 1e-7);
        prop_assert!(close(ab, ba, 1e-8));
        prop_assert!(ac <= ab + bc + 1e-8);
    }

    #[test]
    fn w2_on_the_line_matches_a_shift(a in probability(1, 5), shift in -2.0..2.0f64) {
        // Translation is the optimal plan between a measure and its shift.
        let moved = a.pushforward(|x| vec![x[0] + shift]).unwrap();
        prop_assert!(close(w2_distance(&a, &moved).unwrap(), shift.abs(), 1e-8));
    }

    #[test]
    fn flat_norm_is_between_mass_gap_and_total_variation(
        (xa, wa) in atoms(2, 4),
        (xb, wb) in atoms(2, 4),
    ) {
        let a = ParticleMeasure::new(2, xa, wa).unwrap();
        let b = ParticleMeasure::new(2, xb, wb).unwrap();
        let d = SignedParticleMeasure::difference(&a, &b).unwrap();
        let flat = flat_norm(&d).unwrap();
        let gap = (a.total_mass() - b.total_mass()).abs();
        prop_assert!(flat <= d.total_variation() + 1e-9);
        prop_assert!(flat + 1e-9 >= gap);
    }

    #[test]
    fn costates_scale_with_the_cost(
        (x, w) in atoms(1, 3),
        a in -1.0..=1.0f64,
        alpha in 0.1..10.0f64,
    ) {
        let theta = ParticleMeasure::new(1, x, w).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let u = ControlSignal::constant(grid.steps(), &[a]);
        let cost = Cost::quadratic(vec![0.5]);
        let base = ScalarBenchmark::new().with_cost(cost.clone());
        let scaled = ScalarBenchmark::new().with_cost(cost.scaled(alpha));
        let traj = simulate(&base, &u, &theta, &grid, Integrator::Rk4).unwrap();
        let co = integrate_adjoint_backward(&base, &u, &traj, Integrator::Rk4).unwrap();
        let co_scaled = integrate_adjoint_backward(&scaled, &u, &traj, Integrator::Rk4).unwrap();
        for m in 0..=grid.steps() {
            for (s, b) in co_scaled.p(m).iter().zip(co.p(m)).chain(co_scaled.q(m).iter().zip(co.q(m))) {
                prop_assert!(close(*s, alpha * b, 1e-12));
            }
        }
    }
}
