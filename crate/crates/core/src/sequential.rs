//! Frequency marching: each wavenumber is inverted with the previous
//! conditional mean as the prior mean, and the factor set of the last
//! wavenumber is kept for uncertainty quantification.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factors::{GammaFactor, ModalOperator};
use crate::forward::{assemble_forward_stack, validate_wavenumbers, ForwardStack, HelmholtzProblem};
use crate::prior::{c0_lambda_inverse_quadratic, TruncatedPrior};
use crate::report::relative_error_linf;
use crate::vb_gaussian::{GaussianHyper, GaussianVb, MeanRefiner, VbState};
use crate::vb_laplace::{LaplaceHyper, LaplaceVb, LaplaceVbState};

pub use crate::grid::project_between_grids;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerModel {
    Gaussian,
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySchedule {
    wavenumbers: Vec<f64>,
    inner_sweeps: usize,
    inner_model: InnerModel,
}

impl FrequencySchedule {
    pub const DEFAULT_INNER_SWEEPS: usize = 3;

    pub fn new(wavenumbers: Vec<f64>, inner_sweeps: usize, inner_model: InnerModel) -> Result<Self> {
        validate_wavenumbers(&wavenumbers)?;
        if inner_sweeps == 0 {
            return Err(invalid("inner_sweeps must be at least 1"));
        }
        Ok(Self {
            wavenumbers,
            inner_sweeps,
            inner_model,
        })
    }

    /// Three sweeps per wavenumber.
    pub fn with_defaults(wavenumbers: Vec<f64>, inner_model: InnerModel) -> Result<Self> {
        Self::new(wavenumbers, Self::DEFAULT_INNER_SWEEPS, inner_model)
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn inner_sweeps(&self) -> usize {
        self.inner_sweeps
    }

    pub fn inner_model(&self) -> InnerModel {
        self.inner_model
    }

    pub fn len(&self) -> usize {
        self.wavenumbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavenumbers.is_empty()
    }
}

/// Single-frequency data vector tagged with its wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyData {
    pub kappa: f64,
    pub data: DVector<f64>,
}

/// Gradient-descent refinement of the posterior mean on the MAP objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    pub steps: usize,
    /// `None` selects [`default_map_step_size`].
    pub step_size: Option<f64>,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequentialOptions {
    /// Early exit of the inner sweeps when the largest relative change drops below `tol`.
    pub tol: f64,
    pub gaussian: GaussianHyper,
    pub laplace: LaplaceHyper,
    /// Start each frequency's hyperparameter factors from the previous frequency's.
    pub warm_start: bool,
    /// Mean refinement after every `u`-update (Gaussian inner model only).
    pub map: Option<MapOptions>,
    /// Truth on the inversion grid, used to record relative errors.
    pub truth: Option<DVector<f64>>,
    /// Directory for per-frequency checkpoint files.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for SequentialOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            gaussian: GaussianHyper::default(),
            laplace: LaplaceHyper::default(),
            warm_start: true,
            map: None,
            truth: None,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub index: usize,
    pub kappa: f64,
    /// Conditional mean estimate on the inversion grid.
    pub mean: DVector<f64>,
    pub rel_error: Option<f64>,
    pub lambda_mean: f64,
    /// `E[τ]` for the Gaussian model, the noise scale `τ` for the Laplace model.
    pub tau: f64,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub enum FinalState {
    Gaussian(VbState),
    Laplace(LaplaceVbState),
}

impl FinalState {
    pub fn u(&self) -> &crate::factors::GaussianFactor {
        match self {
            FinalState::Gaussian(s) => &s.u,
            FinalState::Laplace(s) => &s.u,
        }
    }

    pub fn lambda(&self) -> &GammaFactor {
        match self {
            FinalState::Gaussian(s) => &s.lambda,
            FinalState::Laplace(s) => &s.lambda,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequentialResult {
    pub per_frequency: Vec<FrequencyRecord>,
    pub final_state: FinalState,
    /// Prior used at the last wavenumber (mean = previous conditional mean).
    pub final_prior: TruncatedPrior,
}

/// Hyperparameter factors carried from one wavenumber to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum CarriedHyper {
    Gaussian { lambda: GammaFactor, tau: GammaFactor },
    Laplace { lambda: GammaFactor, tau: f64 },
}

/// Everything needed to continue a schedule after frequency `records.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub records: Vec<FrequencyRecord>,
    pub hyper: CarriedHyper,
}

impl Checkpoint {
    pub fn file_name(index: usize) -> String {
        format!("checkpoint_{index:04}.json")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// `J(u) = (τ/2)‖H u − d‖² + ‖u − ū‖²_{C0^K(λ)}`.
#[allow(clippy::too_many_arguments)]
pub fn map_objective(
    u: &DVector<f64>,
    stack: &ForwardStack,
    d: &DVector<f64>,
    u_prev: &DVector<f64>,
    lambda: f64,
    tau: f64,
    prior: &TruncatedPrior,
) -> Result<f64> {
    check_map_inputs(u, stack, d, u_prev, lambda, tau, prior)?;
    let r = stack.apply(u) - d;
    let value = 0.5 * tau * r.norm_squared() + c0_lambda_inverse_quadratic(&(u - u_prev), prior, lambda)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("MAP objective"))
    }
}

/// Gradient of [`map_objective`] with respect to the nodal values of `u`.
#[allow(clippy::too_many_arguments)]
pub fn map_gradient(
    u: &DVector<f64>,
    stack: &ForwardStack,
    d: &DVector<f64>,
    u_prev: &DVector<f64>,
    lambda: f64,
    tau: f64,
    prior: &TruncatedPrior,
) -> Result<DVector<f64>> {
    check_map_inputs(u, stack, d, u_prev, lambda, tau, prior)?;
    let r = stack.apply(u) - d;
    let es = prior.eigsys();
    let h = prior.grid().spacing();
    let c = es.to_modal(&(u - u_prev));
    let prior_grad = es.from_modal(&prior.modal_precisions(lambda).component_mul(&c)) * (2.0 * h);
    Ok(stack.matrix().tr_mul(&r) * tau + prior_grad)
}

/// `1 / (τ ‖H‖² + 2h max_j C0^K(λ)^{-1}_jj)`, with `‖H‖²` from 20 power iterations.
pub fn default_map_step_size(stack: &ForwardStack, prior: &TruncatedPrior, lambda: f64, tau: f64) -> Result<f64> {
    let hth_norm = power_iteration_norm_sq(stack, 20);
    let prior_curv = 2.0 * prior.grid().spacing() * prior.modal_precisions(lambda).max();
    let lipschitz = tau * hth_norm + prior_curv;
    if lipschitz > 0.0 && lipschitz.is_finite() {
        Ok(1.0 / lipschitz)
    } else {
        Err(Error::NonFinite("MAP step size"))
    }
}

fn power_iteration_norm_sq(stack: &ForwardStack, steps: usize) -> f64 {
    let h = stack.matrix();
    let mut v = DVector::from_element(h.ncols(), 1.0);
    let mut estimate = 0.0;
    for _ in 0..steps {
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let w = h.tr_mul(&(h * &v));
        estimate = v.dot(&w);
        v = w;
    }
    estimate
}

/// Outcome of [`map_gradient_descent_traced`].
#[derive(Debug, Clone)]
pub struct MapDescent {
    /// Iterate with the lowest objective.
    pub u: DVector<f64>,
    pub objective: f64,
    pub step_size: f64,
    /// Objective of the best iterate after each step.
    pub best_trace: Vec<f64>,
}

/// Fixed-step gradient descent on [`map_objective`]; returns the best iterate.
#[allow(clippy::too_many_arguments)]
pub fn map_gradient_descent(
    u_init: &DVector<f64>,
    stack: &ForwardStack,
    d: &DVector<f64>,
    u_prev: &DVector<f64>,
    lambda: f64,
    tau: f64,
    prior: &TruncatedPrior,
    steps: usize,
    step_size: Option<f64>,
) -> Result<DVector<f64>> {
    map_gradient_descent_traced(u_init, stack, d, u_prev, lambda, tau, prior, steps, step_size).map(|r| r.u)
}

#[allow(clippy::too_many_arguments)]
pub fn map_gradient_descent_traced(
    u_init: &DVector<f64>,
    stack: &ForwardStack,
    d: &DVector<f64>,
    u_prev: &DVector<f64>,
    lambda: f64,
    tau: f64,
    prior: &TruncatedPrior,
    steps: usize,
    step_size: Option<f64>,
) -> Result<MapDescent> {
    let step = match step_size {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(invalid(format!("step size must be positive, got {s}"))),
        None => default_map_step_size(stack, prior, lambda, tau)?,
    };
    let mut u = u_init.clone();
    let mut best = u.clone();
    let mut best_j = map_objective(&u, stack, d, u_prev, lambda, tau, prior)?;
    let mut best_trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let g = map_gradient(&u, stack, d, u_prev, lambda, tau, prior)?;
        u.axpy(-step, &g, 1.0);
        let j = map_objective(&u, stack, d, u_prev, lambda, tau, prior)?;
        if j < best_j {
            best_j = j;
            best.copy_from(&u);
        }
        best_trace.push(best_j);
    }
    Ok(MapDescent {
        u: best,
        objective: best_j,
        step_size: step,
        best_trace,
    })
}

fn check_map_inputs(
    u: &DVector<f64>,
    stack: &ForwardStack,
    d: &DVector<f64>,
    u_prev: &DVector<f64>,
    lambda: f64,
    tau: f64,
    prior: &TruncatedPrior,
) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("λ must be positive, got {lambda}")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(invalid(format!("τ must be non-negative, got {tau}")));
    }
    let n = prior.grid().n_nodes();
    for (what, len) in [
        ("MAP iterate", u.len()),
        ("previous mean", u_prev.len()),
        ("forward columns", stack.matrix().ncols()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    if d.len() != stack.n_data() {
        return Err(Error::DimensionMismatch {
            what: "data vector",
            expected: stack.n_data(),
            got: d.len(),
        });
    }
    Ok(())
}

/// Runs the whole schedule from the prior mean of `prior`.
pub fn run_sequential(
    problem: &HelmholtzProblem,
    schedule: &FrequencySchedule,
    data: &[FrequencyData],
    prior: &TruncatedPrior,
    opts: &SequentialOptions,
) -> Result<SequentialResult> {
    march(problem, schedule, data, prior, opts, None)
}

/// Continues a schedule from a checkpoint written by an earlier run.
pub fn resume_sequential(
    problem: &HelmholtzProblem,
    schedule: &FrequencySchedule,
    data: &[FrequencyData],
    prior: &TruncatedPrior,
    opts: &SequentialOptions,
    checkpoint: Checkpoint,
) -> Result<SequentialResult> {
    march(problem, schedule, data, prior, opts, Some(checkpoint))
}

fn validate_inputs(
    problem: &HelmholtzProblem,
    schedule: &FrequencySchedule,
    data: &[FrequencyData],
    prior: &TruncatedPrior,
    opts: &SequentialOptions,
) -> Result<()> {
    if data.len() != schedule.len() {
        return Err(Error::DimensionMismatch {
            what: "per-frequency data sets",
            expected: schedule.len(),
            got: data.len(),
        });
    }
    for (i, (fd, &kappa)) in data.iter().zip(schedule.wavenumbers()).enumerate() {
        if fd.kappa != kappa {
            return Err(invalid(format!(
                "data set {i} is labelled with wavenumber {} but the schedule expects {kappa}",
                fd.kappa
            )));
        }
    }
    if problem.grid() != prior.grid() {
        return Err(invalid("forward problem and prior live on different grids"));
    }
    if !(opts.tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if opts.map.is_some() && schedule.inner_model() == InnerModel::Laplace {
        return Err(invalid("MAP refinement is only available for the Gaussian inner model"));
    }
    if let Some(t) = &opts.truth {
        if t.len() != prior.grid().n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "truth vector",
                expected: prior.grid().n_nodes(),
                got: t.len(),
            });
        }
    }
    Ok(())
}

#[allow(clippy::needless_range_loop)]
fn march(
    problem: &HelmholtzProblem,
    schedule: &FrequencySchedule,
    data: &[FrequencyData],
    prior: &TruncatedPrior,
    opts: &SequentialOptions,
    checkpoint: Option<Checkpoint>,
) -> Result<SequentialResult> {
    validate_inputs(problem, schedule, data, prior, opts)?;
    let (mut records, mut carried, mut u_prev) = match checkpoint {
        Some(cp) => {
            let last = cp
                .records
                .last()
                .ok_or_else(|| invalid("checkpoint contains no completed frequency"))?;
            if cp.records.len() >= schedule.len() {
                return Err(invalid("checkpoint already covers the whole schedule"));
            }
            for (r, &kappa) in cp.records.iter().zip(schedule.wavenumbers()) {
                if r.kappa != kappa {
                    return Err(invalid("checkpoint wavenumbers do not match the schedule"));
                }
            }
            let mean = last.mean.clone();
            if mean.len() != prior.grid().n_nodes() {
                return Err(invalid("checkpoint mean lives on a different grid"));
            }
            (cp.records, Some(cp.hyper), mean)
        }
        None => (Vec::new(), None, prior.u0().clone()),
    };

    let mut final_state = None;
    let mut final_prior = None;
    for i in records.len()..schedule.len() {
        let kappa = schedule.wavenumbers()[i];
        let attach = |e: Error, completed: &Vec<FrequencyRecord>| Error::Frequency {
            index: i,
            kappa,
            completed: completed.clone(),
            source: Box::new(e),
        };
        let prior_i = prior.with_mean(u_prev.clone()).map_err(|e| attach(e, &records))?;
        let warm = if opts.warm_start { carried } else { None };
        let outcome =
            solve_frequency(problem, schedule, &data[i], &prior_i, opts, warm).map_err(|e| attach(e, &records))?;
        let (state, record_tail) = outcome;
        let mean = state.u().mean().clone();
        let rel_error = match &opts.truth {
            Some(t) => Some(relative_error_linf(&mean, t).map_err(|e| attach(e, &records))?),
            None => None,
        };
        let (tau, sweeps, converged, hyper) = record_tail;
        records.push(FrequencyRecord {
            index: i,
            kappa,
            mean: mean.clone(),
            rel_error,
            lambda_mean: state.lambda().mean(),
            tau,
            sweeps,
            converged,
        });
        carried = Some(hyper);
        if let Some(dir) = &opts.checkpoint_dir {
            let cp = Checkpoint {
                records: records.clone(),
                hyper,
            };
            cp.save(&dir.join(Checkpoint::file_name(i)))
                .map_err(|e| attach(e, &records))?;
        }
        u_prev = mean;
        final_state = Some(state);
        final_prior = Some(prior_i);
    }
    match (final_state, final_prior) {
        (Some(final_state), Some(final_prior)) => Ok(SequentialResult {
            per_frequency: records,
            final_state,
            final_prior,
        }),
        _ => Err(invalid("no frequency was processed")),
    }
}

type FrequencyOutcome = (FinalState, (f64, usize, bool, CarriedHyper));

fn solve_frequency(
    problem: &HelmholtzProblem,
    schedule: &FrequencySchedule,
    fd: &FrequencyData,
    prior_i: &TruncatedPrior,
    opts: &SequentialOptions,
    warm: Option<CarriedHyper>,
) -> Result<FrequencyOutcome> {
    let stack = assemble_forward_stack(&problem.with_wavenumbers(vec![fd.kappa])?)?;
    let op = ModalOperator::new(&stack, prior_i.eigsys())?;
    let d = &fd.data;
    let sweeps = schedule.inner_sweeps();
    match schedule.inner_model() {
        InnerModel::Gaussian => {
            let engine = GaussianVb::new(&op, d, prior_i, opts.gaussian)?;
            let mut state = match warm {
                Some(CarriedHyper::Gaussian { lambda, tau }) => engine.state_from(lambda, tau)?,
                _ => engine.initial_state()?,
            };
            let mut refine_fn = opts.map.map(|map| {
                let stack = &stack;
                move |f: &crate::factors::GaussianFactor, lambda: f64, tau: f64| {
                    map_gradient_descent(
                        f.mean(),
                        stack,
                        d,
                        prior_i.u0(),
                        lambda,
                        tau,
                        prior_i,
                        map.steps,
                        map.step_size,
                    )
                }
            });
            for _ in 0..sweeps {
                let refine = refine_fn.as_mut().map(|f| f as &mut MeanRefiner<'_>);
                engine.sweep_with(&mut state, refine)?;
                if state.rel_changes.max() <= opts.tol {
                    state.converged = true;
                    break;
                }
            }
            let tail = (
                state.tau.mean(),
                state.iteration,
                state.converged,
                CarriedHyper::Gaussian {
                    lambda: state.lambda,
                    tau: state.tau,
                },
            );
            Ok((FinalState::Gaussian(state), tail))
        }
        InnerModel::Laplace => {
            let engine = LaplaceVb::new(&op, d, prior_i, opts.laplace)?;
            let state = match warm {
                Some(CarriedHyper::Laplace { lambda, tau }) => engine.state_from(lambda, tau)?,
                _ => engine.initial_state()?,
            };
            let state = engine.run_from(state, opts.tol, sweeps)?;
            let tail = (
                state.tau,
                state.iteration,
                state.converged,
                CarriedHyper::Laplace {
                    lambda: state.lambda,
                    tau: state.tau,
                },
            );
            Ok((FinalState::Laplace(state), tail))
        }
    }
}
