//! Run configuration: one TOML file, echoed back fully resolved next to the outputs.

use std::path::{Path, PathBuf};

use mfpmp::measure::BetaLipschitzConfig;
use mfpmp::model::check::SampleConfig;
use mfpmp::model::{InteractionKernel, LinearModel, OpinionDynamics, ScalarBenchmark, SourceKernel};
use mfpmp::{io, ControlBox, ControlSignal, Cost, Integrator, Model, OptimizerConfig, ParticleMeasure, TimeGrid};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub check: CheckConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    /// `F = u`, `G = −u` on the line with `|u| ≤ control_bound`.
    ScalarBenchmark {
        #[serde(default = "unit")]
        control_bound: f64,
        #[serde(default = "origin_quadratic")]
        cost: Cost,
    },
    Opinion {
        #[serde(default = "one")]
        dim: usize,
        interaction: InteractionKernel,
        influence: SourceKernel,
        /// Additive drift control `|uᵢ| ≤ control_bound`; `0` leaves the model uncontrolled.
        #[serde(default)]
        control_bound: f64,
        #[serde(default = "zero_cost")]
        cost: Cost,
    },
    /// `F = Ax (+ u)`, `G ≡ rate`.
    Linear {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default)]
        matrix: Vec<f64>,
        #[serde(default)]
        rate: f64,
        #[serde(default)]
        control_bound: f64,
        #[serde(default = "zero_cost")]
        cost: Cost,
    },
}

fn unit() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

fn origin_quadratic() -> Cost {
    Cost::quadratic(vec![0.0])
}

fn zero_cost() -> Cost {
    Cost::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialConfig {
    /// Rows `[x_0, .., x_{n-1}, weight]`.
    Atoms { atoms: Vec<Vec<f64>> },
    /// A measure CSV with header `x_0,..,weight`.
    Csv { path: PathBuf },
    /// `count` i.i.d. draws from the normalized weights of a CSV, each carrying
    /// `total_mass / count`.
    Sample { path: PathBuf, count: usize, total_mass: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
    pub integrator: Integrator,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 100, integrator: Integrator::Rk4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlConfig {
    /// Empty `value` means the center of the control box.
    Constant {
        #[serde(default)]
        value: Vec<f64>,
    },
    /// A control CSV with header `t,u_0,..`.
    Csv { path: PathBuf },
    /// Start from the box center and let `optimize` choose.
    Optimize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig::Constant { value: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub samples: usize,
    pub atoms: usize,
    pub radius: f64,
    pub max_mass: f64,
    /// Finite-difference step of the gradient check.
    pub gradient_step: f64,
    pub gradient_tol: f64,
    pub hamiltonian_tol: f64,
    pub beta_pairs: usize,
    pub beta_mass_bounds: Vec<f64>,
    pub beta_particles: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            atoms: 5,
            radius: 2.0,
            max_mass: 2.0,
            gradient_step: 1e-5,
            gradient_tol: 1e-4,
            hamiltonian_tol: 1e-12,
            beta_pairs: 200,
            beta_mass_bounds: vec![1.0, 2.0, 4.0],
            beta_particles: 6,
        }
    }
}

impl CheckConfig {
    pub fn sample_config(&self, horizon: f64, seed: u64) -> SampleConfig {
        SampleConfig {
            samples: self.samples,
            atoms: self.atoms,
            radius: self.radius,
            max_mass: self.max_mass,
            horizon,
            seed,
        }
    }

    pub fn beta_config(&self, dim: usize, seed: u64) -> BetaLipschitzConfig {
        BetaLipschitzConfig {
            pairs: self.beta_pairs,
            mass_bounds: self.beta_mass_bounds.clone(),
            dim,
            max_particles: self.beta_particles,
            radius: self.radius,
            seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.anchor_paths(base);
        Ok(config)
    }

    /// Makes every referenced file path absolute relative to `base`.
    fn anchor_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = std::path::absolute(base.join(&*p)).unwrap_or_else(|_| base.join(&*p));
            }
        };
        match &mut self.initial {
            InitialConfig::Csv { path } | InitialConfig::Sample { path, .. } => anchor(path),
            InitialConfig::Atoms { .. } => {}
        }
        if let ControlConfig::Csv { path } = &mut self.control {
            anchor(path);
        }
    }

    pub fn build_model(&self) -> Result<Box<dyn Model>, CliError> {
        let model: Box<dyn Model> = match &self.model {
            ModelConfig::ScalarBenchmark { control_bound, cost } => {
                check_bound(*control_bound, false)?;
                Box::new(
                    ScalarBenchmark::new()
                        .with_control_box(ControlBox::symmetric(1, *control_bound))
                        .with_cost(cost.clone()),
                )
            }
            ModelConfig::Opinion { dim, interaction, influence, control_bound, cost } => {
                check_bound(*control_bound, true)?;
                let mut model = OpinionDynamics::new(*dim, *interaction, *influence)?.with_cost(cost.clone());
                if *control_bound > 0.0 {
                    model = model.with_control(ControlBox::symmetric(*dim, *control_bound))?;
                }
                Box::new(model)
            }
            ModelConfig::Linear { dim, matrix, rate, control_bound, cost } => {
                check_bound(*control_bound, true)?;
                let matrix = if matrix.is_empty() { vec![0.0; dim * dim] } else { matrix.clone() };
                let mut model = LinearModel::new(*dim, matrix, *rate)?.with_cost(cost.clone());
                if *control_bound > 0.0 {
                    model = model.with_control(ControlBox::symmetric(*dim, *control_bound))?;
                }
                Box::new(model)
            }
        };
        model.cost().validate(model.state_dim())?;
        Ok(model)
    }

    pub fn build_initial(&self) -> Result<ParticleMeasure, CliError> {
        match &self.initial {
            InitialConfig::Atoms { atoms } => {
                let width = atoms.first().map(Vec::len).unwrap_or(0);
                if width < 2 || atoms.iter().any(|row| row.len() != width) {
                    return Err(CliError::Config(
                        "initial.atoms rows must all have the form [x_0, .., x_{n-1}, weight]".into(),
                    ));
                }
                let points = atoms.iter().flat_map(|row| row[..width - 1].iter().copied()).collect();
                let weights = atoms.iter().map(|row| row[width - 1]).collect();
                Ok(ParticleMeasure::new(width - 1, points, weights)?)
            }
            InitialConfig::Csv { path } => load_measure(path),
            InitialConfig::Sample { path, count, total_mass } => {
                let density = load_measure(path)?;
                if *count == 0 || total_mass.is_nan() || *total_mass <= 0.0 {
                    return Err(CliError::Config("initial.count and initial.total_mass must be positive".into()));
                }
                let index = WeightedIndex::new(density.weights())
                    .map_err(|e| CliError::Config(format!("cannot sample from {}: {e}", path.display())))?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut points = Vec::with_capacity(count * density.dim());
                for _ in 0..*count {
                    points.extend_from_slice(density.point(index.sample(&mut rng)));
                }
                Ok(ParticleMeasure::new(density.dim(), points, vec![total_mass / *count as f64; *count])?)
            }
        }
    }

    pub fn build_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.time.horizon, self.time.steps).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn build_control(&self, model: &dyn Model, grid: &TimeGrid) -> Result<ControlSignal, CliError> {
        let u = match &self.control {
            ControlConfig::Constant { value } if value.is_empty() => {
                ControlSignal::constant(grid.steps(), &model.control_box().center())
            }
            ControlConfig::Constant { value } => ControlSignal::constant(grid.steps(), value),
            ControlConfig::Optimize => ControlSignal::constant(grid.steps(), &model.control_box().center()),
            ControlConfig::Csv { path } => {
                let file = std::fs::File::open(path)
                    .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
                io::read_control(file)?
            }
        };
        u.check(grid, model.control_box())?;
        Ok(u)
    }

    /// The configuration with every default written out and the constant
    /// control filled in.
    pub fn resolved(&self) -> Result<Self, CliError> {
        let mut resolved = self.clone();
        if let ControlConfig::Constant { value } = &mut resolved.control {
            if value.is_empty() {
                *value = self.build_model()?.control_box().center();
            }
        }
        Ok(resolved)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }
}

fn check_bound(bound: f64, zero_allowed: bool) -> Result<(), CliError> {
    if !bound.is_finite() || bound < 0.0 || (!zero_allowed && bound == 0.0) {
        return Err(CliError::Config(format!(
            "control_bound must be {} and finite, got {bound}",
            if zero_allowed { "nonnegative" } else { "positive" }
        )));
    }
    Ok(())
}

fn load_measure(path: &Path) -> Result<ParticleMeasure, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("initial measure file {} does not exist", path.display())));
    }
    Ok(io::load_measure(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kind = "scalar-benchmark"

[initial]
kind = "atoms"
atoms = [[2.0, 1.0]]
"#;

    #[test]
    fn defaults_expand_and_echo_round_trips() {
        let config: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(config.time, TimeConfig::default());
        let resolved = config.resolved().unwrap();
        assert_eq!(resolved.control, ControlConfig::Constant { value: vec![0.0] });
        let echoed = resolved.to_toml().unwrap();
        let reread: RunConfig = toml::from_str(&echoed).unwrap();
        assert_eq!(reread, resolved);
        assert_eq!(reread.to_toml().unwrap(), echoed);
    }

    #[test]
    fn builds_benchmark_pieces() {
        let config: RunConfig = toml::from_str(MINIMAL).unwrap();
        let model = config.build_model().unwrap();
        assert_eq!(model.name(), "scalar-benchmark");
        let theta = config.build_initial().unwrap();
        assert_eq!(theta.weights(), &[1.0]);
        let grid = config.build_grid().unwrap();
        assert_eq!(config.build_control(model.as_ref(), &grid).unwrap().steps(), 100);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = MINIMAL.replace("[[2.0, 1.0]]", "[[2.0, 1.0], [1.0]]");
        let config: RunConfig = toml::from_str(&bad).unwrap();
        assert!(matches!(config.build_initial(), Err(CliError::Config(_))));
        assert!(toml::from_str::<RunConfig>(&format!("{MINIMAL}\n[time]\nhorizonn = 2.0\n")).is_err());
        let config: RunConfig = toml::from_str(&format!("{MINIMAL}\n[time]\nsteps = 0\n")).unwrap();
        assert!(config.build_grid().is_err());
    }

    #[test]
    fn density_sampling_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("density.csv");
        std::fs::write(&path, "x_0,weight\n-1,1\n0,2\n1,1\n").unwrap();
        let text = format!(
            "seed = 7\n[model]\nkind = \"scalar-benchmark\"\n[initial]\nkind = \"sample\"\npath = \"{}\"\ncount = 50\ntotal_mass = 2.0\n",
            path.display()
        );
        let config: RunConfig = toml::from_str(&text).unwrap();
        let a = config.build_initial().unwrap();
        let b = config.build_initial().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert!((a.total_mass() - 2.0).abs() < 1e-12);
    }
}
