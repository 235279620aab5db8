//! Randomized check that the barycentric projection is `2b`-Lipschitz from
//! `W₂` on ensembles with masses in `[0, b]` to the flat norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{flat_norm, w2_distance, LiftedEnsemble, SignedParticleMeasure};
use crate::error::Result;

/// Slack added to the Lipschitz bound for LP roundoff.
pub const LIPSCHITZ_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaLipschitzConfig {
    pub pairs: usize,
    pub mass_bounds: Vec<f64>,
    pub dim: usize,
    /// Particle counts are drawn from `1..=max_particles`.
    pub max_particles: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for BetaLipschitzConfig {
    fn default() -> Self {
        Self { pairs: 200, mass_bounds: vec![1.0, 2.0, 4.0], dim: 1, max_particles: 6, radius: 2.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaLipschitzReport {
    pub cases: usize,
    pub violations: usize,
    /// Largest `flat / (2b W₂)` over cases with `W₂ > 0`.
    pub worst_ratio: f64,
}

impl BetaLipschitzReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn random_ensemble(rng: &mut ChaCha8Rng, cfg: &BetaLipschitzConfig, bound: f64) -> LiftedEnsemble {
    let count = rng.gen_range(1..=cfg.max_particles.max(1));
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift = 1.0 - weights.iter().sum::<f64>();
    weights[0] += drift;
    let positions = (0..count * cfg.dim).map(|_| rng.gen_range(-cfg.radius..=cfg.radius)).collect();
    let masses = (0..count).map(|_| rng.gen_range(0.0..=bound)).collect();
    LiftedEnsemble::new(cfg.dim, weights, positions, masses).expect("sampled ensemble is valid")
}

/// Tests `‖β(e) − β(e′)‖_flat ≤ 2b W₂(e, e′) + slack` on `pairs` random pairs
/// for every bound `b`.
pub fn check_beta_lipschitz(cfg: &BetaLipschitzConfig) -> Result<BetaLipschitzReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = BetaLipschitzReport { cases: 0, violations: 0, worst_ratio: 0.0 };
    for &b in &cfg.mass_bounds {
        for _ in 0..cfg.pairs {
            let e = random_ensemble(&mut rng, cfg, b);
            let f = random_ensemble(&mut rng, cfg, b);
            let w2 = w2_distance(&e.product_measure(), &f.product_measure())?;
            let diff = SignedParticleMeasure::difference(&e.barycentric_projection(), &f.barycentric_projection())?;
            let flat = flat_norm(&diff)?;
            report.cases += 1;
            if flat > 2.0 * b * w2 + LIPSCHITZ_SLACK {
                report.violations += 1;
            }
            if w2 > 0.0 {
                report.worst_ratio = report.worst_ratio.max(flat / (2.0 * b * w2));
            }
        }
    }
    Ok(report)
}
