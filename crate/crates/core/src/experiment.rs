//! Experiment orchestration: synthetic data on the generation grid,
//! inversion on the inversion grid, report files.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::config::{ExperimentConfig, Model};
use crate::error::{invalid, Error, Result};
use crate::factors::{GaussianFactor, ModalOperator};
use crate::forward::{
    add_noise_scaled, assemble_forward_stack, data_magnitude_scale, observation_layout, HelmholtzProblem, ObsLabel,
    SyntheticData,
};
use crate::grid::Grid1D;
use crate::io::{fmt_f64, read_data_csv, rows_to_synthetic, write_columns, write_data_csv, DataRow};
use crate::prior::{select_intrinsic_dim, EigenSystem, TruncatedPrior};
use crate::report::{band_coverage, credible_band, relative_error_linf};
use crate::sequential::{
    run_sequential, FinalState, FrequencyData, FrequencyRecord, FrequencySchedule, SequentialOptions,
};
use crate::vb_gaussian::GaussianVb;
use crate::vb_laplace::LaplaceVb;

/// Number of standard deviations spanned by the credible band on each side.
pub const BAND_FACTOR: f64 = 2.0;

/// Observed data with its row layout on the generation grid.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub layout: Vec<ObsLabel>,
    /// Measurement coordinate of each row.
    pub x: Vec<f64>,
    pub synthetic: SyntheticData,
}

impl ExperimentData {
    pub fn rows(&self) -> Vec<DataRow> {
        (0..self.layout.len())
            .map(|i| DataRow {
                kappa: self.layout[i].kappa,
                x: self.x[i],
                part: self.layout[i].part,
                clean: self.synthetic.clean[i],
                noisy: self.synthetic.noisy[i],
                corrupted: self.synthetic.corrupted[i],
            })
            .collect()
    }

    /// Rows belonging to `kappa`, in order.
    pub fn rows_for(&self, kappa: f64) -> Vec<usize> {
        (0..self.layout.len())
            .filter(|&i| self.layout[i].kappa == kappa)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    NotConverged,
    /// Fixed-sweep frequency marching finished.
    Completed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged | Status::Completed => 0,
            Status::NotConverged => 2,
        }
    }
}

/// Per-sweep diagnostics of the reported factor set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traces {
    pub rel_error: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub elbo: Vec<f64>,
    pub rel_change: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// Fully resolved configuration.
    pub config: ExperimentConfig,
    pub seed: u64,
    pub model: Model,
    pub grid: Grid1D,
    pub k: usize,
    pub n_data: usize,
    pub truth: DVector<f64>,
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub traces: Traces,
    /// Weight means per sweep (Laplace model).
    pub weight_trace: Vec<DVector<f64>>,
    /// Per-wavenumber records (sequential model).
    pub frequencies: Vec<FrequencyRecord>,
    /// `sqrt(1/E[τ])` for Gaussian noise models.
    pub sigma_hat: Option<f64>,
    pub lambda: f64,
    /// `E[τ]` (Gaussian) or the noise scale `τ` (Laplace).
    pub tau: f64,
    pub final_rel_error: f64,
    pub coverage: f64,
    /// Sweeps of the reported factor set.
    pub iterations: usize,
    pub status: Status,
    pub elapsed_secs: f64,
    pub data: ExperimentData,
}

fn measurement_nodes(grid: &Grid1D, points: &[f64]) -> Vec<usize> {
    points.iter().map(|&x| grid.nearest_node(x)).collect()
}

fn build_problem(config: &ExperimentConfig, n_nodes: usize) -> Result<HelmholtzProblem> {
    let grid = Grid1D::unit(n_nodes)?;
    let q = config.problem.q.sample(&grid)?;
    HelmholtzProblem::new(
        grid,
        q,
        config.wavenumbers(),
        measurement_nodes(&grid, &config.problem.meas_points),
    )
}

/// Synthetic data on the generation grid, or the configured data file.
pub fn prepare_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    match &config.problem.data {
        Some(path) => load_data(config, path),
        None => generate(config),
    }
}

/// Noise-corrupted measurements of the configured truth on the generation grid.
pub fn generate(config: &ExperimentConfig) -> Result<ExperimentData> {
    config.validate()?;
    let problem = build_problem(config, config.problem.gen_nodes)?;
    let stack = assemble_forward_stack(&problem)?;
    let truth = config.problem.truth.sample(problem.grid())?;
    let clean = stack.apply(&truth);
    let (spec, relative) = config.noise.spec();
    let mut scales = DVector::from_element(clean.len(), 1.0);
    if relative {
        for &kappa in problem.wavenumbers() {
            let rows = stack.rows_for(kappa);
            let block = DVector::from_iterator(rows.len(), rows.iter().map(|&r| clean[r]));
            let scale = data_magnitude_scale(&block)?;
            for r in rows {
                scales[r] = scale;
            }
        }
    }
    let synthetic = add_noise_scaled(&clean, &spec, &scales, config.output.seed)?;
    let layout = stack.layout().to_vec();
    let x = layout.iter().map(|l| problem.grid().node(l.point)).collect();
    Ok(ExperimentData { layout, x, synthetic })
}

fn load_data(config: &ExperimentConfig, path: &Path) -> Result<ExperimentData> {
    let rows = read_data_csv(path)?;
    let problem = build_problem(config, config.problem.inv_nodes)?;
    let expected = observation_layout(&problem);
    if rows.len() != expected.len() {
        return Err(Error::DimensionMismatch {
            what: "data file rows",
            expected: expected.len(),
            got: rows.len(),
        });
    }
    let tol = problem.grid().spacing();
    for (i, (row, label)) in rows.iter().zip(&expected).enumerate() {
        let x = problem.grid().node(label.point);
        if row.kappa != label.kappa || row.part != label.part || (row.x - x).abs() > tol {
            return Err(invalid(format!(
                "data row {i} ({}, {}, {}) does not match the configured layout ({}, {x}, {})",
                row.kappa,
                row.x,
                row.part.as_str(),
                label.kappa,
                label.part.as_str()
            )));
        }
    }
    Ok(ExperimentData {
        layout: expected,
        x: rows.iter().map(|r| r.x).collect(),
        synthetic: rows_to_synthetic(&rows),
    })
}

fn rel_error_trace(means: &[DVector<f64>], truth: &DVector<f64>) -> Result<Vec<f64>> {
    means.iter().map(|m| relative_error_linf(m, truth)).collect()
}

/// Runs the configured experiment in memory. Sequential checkpoints go to
/// `checkpoint_dir` when given.
pub fn execute(config: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let data = prepare_data(config)?;

    let problem = build_problem(config, config.problem.inv_nodes)?;
    let grid = *problem.grid();
    let truth = config.problem.truth.sample(&grid)?;
    let eigsys = Arc::new(EigenSystem::full(&grid, config.prior.order)?);
    let k = select_intrinsic_dim(eigsys.eigvals().as_slice(), config.prior.threshold)?.k;
    let prior = TruncatedPrior::new(eigsys, k, config.prior.initial_mean.sample(&grid)?)?;
    let solver = &config.solver;
    let d = &data.synthetic.noisy;

    let mut weight_trace = Vec::new();
    let mut frequencies = Vec::new();
    let (u, traces, sigma_hat, lambda, tau, iterations, status): (
        GaussianFactor,
        Traces,
        Option<f64>,
        f64,
        f64,
        usize,
        Status,
    ) = match solver.model {
        Model::Gaussian => {
            let stack = assemble_forward_stack(&problem)?;
            let op = ModalOperator::new(&stack, prior.eigsys())?;
            let st = GaussianVb::new(&op, d, &prior, solver.gaussian)?.run(solver.tol, solver.max_sweeps)?;
            let traces = Traces {
                rel_error: rel_error_trace(&st.mean_trace, &truth)?,
                lambda: st.lambda_trace.clone(),
                tau: st.tau_trace.clone(),
                elbo: st.elbo_trace.clone(),
                rel_change: st.rel_change_trace.clone(),
            };
            let status = if st.converged {
                Status::Converged
            } else {
                Status::NotConverged
            };
            (
                st.u.clone(),
                traces,
                Some(st.sigma_hat()),
                st.lambda.mean(),
                st.tau.mean(),
                st.iteration,
                status,
            )
        }
        Model::Laplace => {
            let stack = assemble_forward_stack(&problem)?;
            let op = ModalOperator::new(&stack, prior.eigsys())?;
            let st = LaplaceVb::new(&op, d, &prior, solver.laplace)?.run(solver.tol, solver.max_sweeps)?;
            let traces = Traces {
                rel_error: rel_error_trace(&st.mean_trace, &truth)?,
                lambda: st.lambda_trace.clone(),
                tau: st.tau_trace.clone(),
                elbo: st.elbo_trace.clone(),
                rel_change: st.rel_change_trace.clone(),
            };
            weight_trace = st.weight_trace.clone();
            let status = if st.converged {
                Status::Converged
            } else {
                Status::NotConverged
            };
            (
                st.u.clone(),
                traces,
                None,
                st.lambda.mean(),
                st.tau,
                st.iteration,
                status,
            )
        }
        Model::Sequential => {
            let seq = &solver.sequential;
            let schedule = FrequencySchedule::new(config.wavenumbers(), seq.inner_sweeps, seq.inner_model)?;
            let per_freq: Vec<FrequencyData> = schedule
                .wavenumbers()
                .iter()
                .map(|&kappa| {
                    let rows = data.rows_for(kappa);
                    FrequencyData {
                        kappa,
                        data: DVector::from_iterator(rows.len(), rows.iter().map(|&r| d[r])),
                    }
                })
                .collect();
            let opts = SequentialOptions {
                tol: solver.tol,
                gaussian: solver.gaussian,
                laplace: solver.laplace,
                warm_start: seq.warm_start,
                map: seq.map_options(),
                truth: Some(truth.clone()),
                checkpoint_dir: checkpoint_dir.map(Path::to_path_buf),
            };
            let result = run_sequential(&problem, &schedule, &per_freq, &prior, &opts)?;
            frequencies = result.per_frequency;
            match result.final_state {
                FinalState::Gaussian(st) => {
                    let traces = Traces {
                        rel_error: rel_error_trace(&st.mean_trace, &truth)?,
                        lambda: st.lambda_trace.clone(),
                        tau: st.tau_trace.clone(),
                        elbo: st.elbo_trace.clone(),
                        rel_change: st.rel_change_trace.clone(),
                    };
                    let sh = st.sigma_hat();
                    (
                        st.u,
                        traces,
                        Some(sh),
                        st.lambda.mean(),
                        st.tau.mean(),
                        st.iteration,
                        Status::Completed,
                    )
                }
                FinalState::Laplace(st) => {
                    let traces = Traces {
                        rel_error: rel_error_trace(&st.mean_trace, &truth)?,
                        lambda: st.lambda_trace.clone(),
                        tau: st.tau_trace.clone(),
                        elbo: st.elbo_trace.clone(),
                        rel_change: st.rel_change_trace.clone(),
                    };
                    weight_trace = st.weight_trace.clone();
                    (
                        st.u,
                        traces,
                        None,
                        st.lambda.mean(),
                        st.tau,
                        st.iteration,
                        Status::Completed,
                    )
                }
            }
        }
    };

    let mean = u.mean().clone();
    let std = u.pointwise_std();
    let (lower, upper) = credible_band(&u, BAND_FACTOR);
    let final_rel_error = relative_error_linf(&mean, &truth)?;
    let coverage = band_coverage(&truth, &lower, &upper)?;
    Ok(RunReport {
        config: config.clone(),
        seed: config.output.seed,
        model: solver.model,
        grid,
        k,
        n_data: d.len(),
        truth,
        mean,
        std,
        lower,
        upper,
        traces,
        weight_trace,
        frequencies,
        sigma_hat,
        lambda,
        tau,
        final_rel_error,
        coverage,
        iterations,
        status,
        elapsed_secs: start.elapsed().as_secs_f64(),
        data,
    })
}

/// Runs the experiment and writes all report files to `config.output.dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir)?;
    let checkpoints = dir.join("checkpoints");
    let checkpoint_dir = if config.solver.model == Model::Sequential {
        fs::create_dir_all(&checkpoints)?;
        Some(checkpoints.as_path())
    } else {
        None
    };
    let report = execute(config, checkpoint_dir)?;
    write_report(&report, &dir)?;
    Ok(report)
}

/// Writes `data.csv` for the configured experiment.
pub fn write_data(data: &ExperimentData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_data_csv(&dir.join("data.csv"), &data.rows())
}

#[derive(Serialize)]
struct Summary<'a> {
    model: Model,
    status: Status,
    seed: u64,
    iterations: usize,
    intrinsic_dim: usize,
    n_data: usize,
    final_rel_error: f64,
    coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_hat: Option<f64>,
    lambda: f64,
    tau: f64,
    elapsed_secs: f64,
    config: &'a ExperimentConfig,
}

/// CSV files (`data`, `estimate`, `trace`, and `weights` or `frequencies`
/// when present) plus `summary.toml`. Timing appears only in the summary.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_data(&report.data, dir)?;

    let x = report.grid.nodes();
    write_columns(
        &dir.join("estimate.csv"),
        &["x", "truth", "mean", "std", "lower", "upper"],
        &[
            x.as_slice(),
            report.truth.as_slice(),
            report.mean.as_slice(),
            report.std.as_slice(),
            report.lower.as_slice(),
            report.upper.as_slice(),
        ],
    )?;

    let t = &report.traces;
    let sweep: Vec<f64> = (1..=t.rel_error.len()).map(|i| i as f64).collect();
    write_columns(
        &dir.join("trace.csv"),
        &["sweep", "rel_error", "lambda", "tau", "elbo", "rel_change"],
        &[&sweep, &t.rel_error, &t.lambda, &t.tau, &t.elbo, &t.rel_change],
    )?;

    if !report.weight_trace.is_empty() {
        write_weights(report, &dir.join("weights.csv"))?;
    }
    if !report.frequencies.is_empty() {
        write_frequencies(&report.frequencies, &dir.join("frequencies.csv"))?;
    }

    let summary = Summary {
        model: report.model,
        status: report.status,
        seed: report.seed,
        iterations: report.iterations,
        intrinsic_dim: report.k,
        n_data: report.n_data,
        final_rel_error: report.final_rel_error,
        coverage: report.coverage,
        sigma_hat: report.sigma_hat,
        lambda: report.lambda,
        tau: report.tau,
        elapsed_secs: report.elapsed_secs,
        config: &report.config,
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("summary.toml"), text)?;
    Ok(())
}

/// One row per data entry, one `w_<sweep>` column per sweep.
fn write_weights(report: &RunReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["kappa".to_string(), "x".into(), "part".into(), "corrupted".into()];
    header.extend((1..=report.weight_trace.len()).map(|s| format!("w_{s}")));
    w.write_record(&header)?;
    let data = &report.data;
    for i in 0..data.layout.len() {
        let mut row = vec![
            fmt_f64(data.layout[i].kappa),
            fmt_f64(data.x[i]),
            data.layout[i].part.as_str().to_string(),
            u8::from(data.synthetic.corrupted[i]).to_string(),
        ];
        row.extend(report.weight_trace.iter().map(|wt| fmt_f64(wt[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_frequencies(records: &[FrequencyRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "kappa", "rel_error", "lambda", "tau", "sweeps", "converged"])?;
    for r in records {
        w.write_record([
            r.index.to_string(),
            fmt_f64(r.kappa),
            r.rel_error.map_or_else(String::new, fmt_f64),
            fmt_f64(r.lambda_mean),
            fmt_f64(r.tau),
            r.sweeps.to_string(),
            u8::from(r.converged).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
