//! Experiment configuration (TOML) and built-in presets.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{validate_wavenumbers, NoiseSpec};
use crate::grid::Grid1D;
use crate::sequential::{FrequencySchedule, InnerModel, MapOptions};
use crate::vb_gaussian::GaussianHyper;
use crate::vb_laplace::LaplaceHyper;

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// A function on the unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileSpec {
    /// `0.5 exp(-300(x-0.4)²) + 0.5 exp(-300(x-0.6)²)`.
    TwoBumps,
    Zero,
    Constant(f64),
    /// Linear interpolation of `(x, value)` rows, constant beyond the end points.
    Csv(PathBuf),
}

pub fn two_bumps(x: f64) -> f64 {
    0.5 * (-300.0 * (x - 0.4).powi(2)).exp() + 0.5 * (-300.0 * (x - 0.6).powi(2)).exp()
}

impl ProfileSpec {
    pub fn sample(&self, grid: &Grid1D) -> Result<DVector<f64>> {
        match self {
            ProfileSpec::TwoBumps => Ok(grid.sample(two_bumps)),
            ProfileSpec::Zero => Ok(DVector::zeros(grid.n_nodes())),
            ProfileSpec::Constant(c) => Ok(DVector::from_element(grid.n_nodes(), *c)),
            ProfileSpec::Csv(path) => {
                let table = read_profile_csv(path)?;
                Ok(grid.sample(|x| interpolate_table(&table, x)))
            }
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            ProfileSpec::Csv(p) => Some(p),
            _ => None,
        }
    }

    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            ProfileSpec::Csv(p) => Some(p),
            _ => None,
        }
    }
}

fn read_profile_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut table = Vec::new();
    for row in reader.deserialize() {
        let (x, v): (f64, f64) = row?;
        if !(x.is_finite() && v.is_finite()) {
            return Err(config_error(format!("non-finite entry in profile {}", path.display())));
        }
        table.push((x, v));
    }
    if table.is_empty() {
        return Err(config_error(format!("profile {} has no rows", path.display())));
    }
    table.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(table)
}

fn interpolate_table(table: &[(f64, f64)], x: f64) -> f64 {
    let first = table[0];
    let last = table[table.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = table.partition_point(|(xi, _)| *xi <= x);
    let (x0, v0) = table[i - 1];
    let (x1, v1) = table[i];
    if x1 == x0 {
        v1
    } else {
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WavenumberSpec {
    List(Vec<f64>),
    /// `start, start + step, …` with `count` entries.
    Range {
        start: f64,
        step: f64,
        count: usize,
    },
}

impl WavenumberSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            WavenumberSpec::List(v) => v.clone(),
            WavenumberSpec::Range { start, step, count } => (0..*count).map(|j| start + step * j as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Nodes of the grid used to generate synthetic data.
    pub gen_nodes: usize,
    /// Nodes of the inversion grid.
    pub inv_nodes: usize,
    pub truth: ProfileSpec,
    pub q: ProfileSpec,
    pub wavenumbers: WavenumberSpec,
    /// Measurement coordinates in `[0, 1]`, snapped to the nearest node of each grid.
    pub meas_points: Vec<f64>,
    /// Data file written by `generate-data`; synthetic data is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Exponent `p` of `(Id - Δ)^{-p}`.
    pub order: u32,
    /// Eigenvalue ratio threshold selecting the intrinsic dimension.
    pub threshold: f64,
    pub initial_mean: ProfileSpec,
}

/// Noise block. Relative levels are multiplied by `max|d†|` of each wavenumber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian { sigma: f64 },
    RelativeGaussian { level: f64 },
    Impulsive { rate: f64, magnitude: f64 },
    RelativeImpulsive { rate: f64, level: f64 },
}

impl NoiseConfig {
    /// Noise spec and whether its amplitude is relative to the data magnitude.
    pub fn spec(&self) -> (NoiseSpec, bool) {
        match *self {
            NoiseConfig::Gaussian { sigma } => (NoiseSpec::Gaussian { sigma }, false),
            NoiseConfig::RelativeGaussian { level } => (NoiseSpec::Gaussian { sigma: level }, true),
            NoiseConfig::Impulsive { rate, magnitude } => (NoiseSpec::Impulsive { rate, magnitude }, false),
            NoiseConfig::RelativeImpulsive { rate, level } => (NoiseSpec::Impulsive { rate, magnitude: level }, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Gaussian,
    Laplace,
    Sequential,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Gaussian => "gaussian",
            Model::Laplace => "laplace",
            Model::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequentialConfig {
    pub inner_model: InnerModel,
    pub inner_sweeps: usize,
    pub warm_start: bool,
    /// Gradient steps of the MAP refinement; 0 disables it.
    pub map_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_step_size: Option<f64>,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        Self {
            inner_model: InnerModel::Gaussian,
            inner_sweeps: FrequencySchedule::DEFAULT_INNER_SWEEPS,
            warm_start: true,
            map_steps: 0,
            map_step_size: None,
        }
    }
}

impl SequentialConfig {
    pub fn map_options(&self) -> Option<MapOptions> {
        (self.map_steps > 0).then_some(MapOptions {
            steps: self.map_steps,
            step_size: self.map_step_size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub model: Model,
    pub tol: f64,
    pub max_sweeps: usize,
    #[serde(default)]
    pub gaussian: GaussianHyper,
    #[serde(default)]
    pub laplace: LaplaceHyper,
    #[serde(default)]
    pub sequential: SequentialConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub prior: PriorConfig,
    pub noise: NoiseConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error(e.to_string()))
    }

    /// Parses a file, resolves relative paths against its directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_toml_str(&fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for profile in [
            &mut self.problem.truth,
            &mut self.problem.q,
            &mut self.prior.initial_mean,
        ] {
            if let Some(p) = profile.path_mut() {
                resolve(p);
            }
        }
        if let Some(p) = self.problem.data.as_mut() {
            resolve(p);
        }
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        self.problem.wavenumbers.values()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.gen_nodes < 3 || p.inv_nodes < 3 {
            return Err(config_error("grids need at least 3 nodes"));
        }
        let kappas = self.wavenumbers();
        if kappas.is_empty() {
            return Err(config_error("wavenumber schedule is empty"));
        }
        validate_wavenumbers(&kappas).map_err(|e| config_error(e.to_string()))?;
        if p.meas_points.is_empty() {
            return Err(config_error("no measurement points"));
        }
        if p.meas_points.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(config_error("measurement points must lie in [0, 1]"));
        }
        for profile in [&p.truth, &p.q, &self.prior.initial_mean] {
            if let Some(path) = profile.path() {
                if !path.exists() {
                    return Err(config_error(format!("profile file {} does not exist", path.display())));
                }
            }
        }
        if let Some(path) = &p.data {
            if !path.exists() {
                return Err(config_error(format!("data file {} does not exist", path.display())));
            }
        }
        if self.prior.order == 0 {
            return Err(config_error("prior order must be at least 1"));
        }
        if !(self.prior.threshold > 0.0 && self.prior.threshold < 1.0) {
            return Err(config_error("eigenvalue threshold must lie in (0, 1)"));
        }
        self.noise
            .spec()
            .0
            .validate()
            .map_err(|e| config_error(e.to_string()))?;
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(config_error(format!("tol must be positive, got {}", s.tol)));
        }
        if s.max_sweeps == 0 {
            return Err(config_error("max_sweeps must be at least 1"));
        }
        s.gaussian.validate().map_err(|e| config_error(e.to_string()))?;
        s.laplace.validate().map_err(|e| config_error(e.to_string()))?;
        if s.sequential.inner_sweeps == 0 {
            return Err(config_error("inner_sweeps must be at least 1"));
        }
        if s.model == Model::Sequential && s.sequential.map_steps > 0 && s.sequential.inner_model == InnerModel::Laplace
        {
            return Err(config_error(
                "MAP refinement is only available with the gaussian inner model",
            ));
        }
        if let Some(step) = s.sequential.map_step_size {
            if !(step > 0.0) {
                return Err(config_error("map_step_size must be positive"));
            }
        }
        Ok(())
    }
}

/// Names of the built-in configurations.
pub const PRESETS: [&str; 5] = [
    "isp-gaussian",
    "isp-laplace",
    "isp-sequential",
    "isp-small",
    "isp-small-laplace",
];

pub fn preset_description(name: &str) -> Option<&'static str> {
    Some(match name {
        "isp-gaussian" => "1D inverse source problem, 1000/600 nodes, 100 wavenumbers, Gaussian noise σ = 1e-3",
        "isp-laplace" => "as isp-gaussian with impulsive noise (r = 0.5, ε = 0.1) and the Laplace model",
        "isp-sequential" => "frequency marching over κ = 1..20, 5% relative Gaussian noise, p = 2 prior",
        "isp-small" => "reduced isp-gaussian: 200/120 nodes, 40 wavenumbers",
        "isp-small-laplace" => "reduced isp-laplace: 200/120 nodes, 40 wavenumbers",
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        problem: ProblemConfig {
            gen_nodes: 1000,
            inv_nodes: 600,
            truth: ProfileSpec::TwoBumps,
            q: ProfileSpec::Zero,
            wavenumbers: WavenumberSpec::Range {
                start: 0.5,
                step: 0.5,
                count: 100,
            },
            meas_points: vec![0.0, 1.0],
            data: None,
        },
        prior: PriorConfig {
            order: 1,
            threshold: 1e-3,
            initial_mean: ProfileSpec::Zero,
        },
        noise: NoiseConfig::Gaussian { sigma: 1e-3 },
        solver: SolverConfig {
            model: Model::Gaussian,
            tol: 1e-4,
            max_sweeps: 200,
            gaussian: GaussianHyper::default(),
            laplace: LaplaceHyper::default(),
            sequential: SequentialConfig::default(),
        },
        output: OutputConfig {
            dir: PathBuf::from("out"),
            seed: 1,
        },
    };
    let impulsive = NoiseConfig::Impulsive {
        rate: 0.5,
        magnitude: 0.1,
    };
    let small = |mut c: ExperimentConfig| {
        c.problem.gen_nodes = 200;
        c.problem.inv_nodes = 120;
        c.problem.wavenumbers = WavenumberSpec::Range {
            start: 0.5,
            step: 0.5,
            count: 40,
        };
        c
    };
    let config = match name {
        "isp-gaussian" => base,
        "isp-laplace" => {
            let mut c = base;
            c.noise = impulsive;
            c.solver.model = Model::Laplace;
            c
        }
        "isp-sequential" => {
            let mut c = base;
            c.problem.wavenumbers = WavenumberSpec::Range {
                start: 1.0,
                step: 1.0,
                count: 20,
            };
            c.prior.order = 2;
            c.noise = NoiseConfig::RelativeGaussian { level: 0.05 };
            c.solver.model = Model::Sequential;
            c
        }
        "isp-small" => small(base),
        "isp-small-laplace" => {
            let mut c = small(base);
            c.noise = impulsive;
            c.solver.model = Model::Laplace;
            c
        }
        other => {
            return Err(config_error(format!(
                "unknown preset '{other}' (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            assert!(preset_description(name).is_some());
            let text = c.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c, "{name}");
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn default_wavenumbers() {
        let k = preset("isp-gaussian").unwrap().wavenumbers();
        assert_eq!(k.len(), 100);
        assert_eq!(k[0], 0.5);
        assert_eq!(k[99], 50.0);
    }

    #[test]
    fn parses_hand_written_config() {
        let text = r#"
[problem]
gen_nodes = 101
inv_nodes = 61
truth = "two-bumps"
q = { constant = 0.1 }
wavenumbers = [1.0, 2.0, 4.0]
meas_points = [0.0, 0.5, 1.0]

[prior]
order = 2
threshold = 1e-2
initial_mean = "zero"

[noise]
kind = "relative-impulsive"
rate = 0.2
level = 0.05

[solver]
model = "sequential"
tol = 1e-5
max_sweeps = 50

[solver.sequential]
inner_model = "laplace"
inner_sweeps = 4
warm_start = false
map_steps = 0

[output]
dir = "runs/a"
seed = 7
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.problem.q, ProfileSpec::Constant(0.1));
        assert_eq!(c.wavenumbers(), vec![1.0, 2.0, 4.0]);
        assert_eq!(c.solver.gaussian, GaussianHyper::default());
        assert_eq!(c.solver.sequential.inner_sweeps, 4);
        assert!(c.solver.sequential.map_options().is_none());
        let (spec, relative) = c.noise.spec();
        assert!(relative);
        assert_eq!(
            spec,
            NoiseSpec::Impulsive {
                rate: 0.2,
                magnitude: 0.05
            }
        );
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_invalid_configs() {
        let good = preset("isp-small").unwrap();
        let text = good
            .to_toml_string()
            .unwrap()
            .replace("[output]", "[output]\ncolour = 3");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());

        let mut c = good.clone();
        c.solver.tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.problem.wavenumbers = WavenumberSpec::List(vec![]);
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.problem.wavenumbers = WavenumberSpec::List(vec![2.0, 1.0]);
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.problem.truth = ProfileSpec::Csv(PathBuf::from("/definitely/missing.csv"));
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.noise = NoiseConfig::Impulsive {
            rate: 1.5,
            magnitude: 0.1,
        };
        assert!(c.validate().is_err());
        let mut c = good;
        c.solver.model = Model::Sequential;
        c.solver.sequential.inner_model = InnerModel::Laplace;
        c.solver.sequential.map_steps = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_profile_is_interpolated_and_paths_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("truth.csv")).unwrap();
        writeln!(f, "x,value\n1.0,2.0\n0.0,0.0").unwrap();
        let mut c = preset("isp-small").unwrap();
        c.problem.truth = ProfileSpec::Csv(PathBuf::from("truth.csv"));
        let cfg_path = dir.path().join("exp.toml");
        fs::write(&cfg_path, c.to_toml_string().unwrap()).unwrap();
        let loaded = ExperimentConfig::load(&cfg_path).unwrap();
        let grid = Grid1D::unit(11).unwrap();
        let v = loaded.problem.truth.sample(&grid).unwrap();
        for i in 0..11 {
            assert!((v[i] - 2.0 * grid.node(i)).abs() < 1e-14);
        }
    }

    #[test]
    fn table_interpolation_clamps() {
        let t = vec![(0.2, 1.0), (0.4, 3.0)];
        assert_eq!(interpolate_table(&t, 0.0), 1.0);
        assert_eq!(interpolate_table(&t, 1.0), 3.0);
        assert!((interpolate_table(&t, 0.3) - 2.0).abs() < 1e-15);
    }
}
