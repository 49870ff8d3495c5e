//! Outlier-robust variant with Laplace noise written as a Gaussian scale mixture:
//!
//! ```text
//! ε_j ~ N(0, 1/w_j),  1/w_j ~ Exponential(mean τ),
//! u ~ N(u0, C0^K(λ)),  λ ~ Gamma(α0, β0)
//! ```
//!
//! The weight factor is a product of inverse-Gaussian distributions and `τ` is
//! re-estimated by empirical Bayes at the start of every sweep.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::factors::{GammaFactor, GaussianFactor, InvGaussFactor, ModalOperator};
use crate::forward::ForwardStack;
use crate::prior::TruncatedPrior;
use crate::vb_gaussian::{
    expect_prior_quadratic, prior_u_cross_entropy, rel_change, rel_change_vec, weighted_gram, RelChanges,
};

pub use crate::vb_gaussian::update_lambda;

/// Lower bound applied to `E[(Hu − d)_j²]` before computing weight means.
pub const RESIDUAL_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceHyper {
    pub alpha0: f64,
    pub beta0: f64,
    /// Initial noise scale `τ` (the mean of the exponential mixing density).
    pub tau_init: f64,
}

impl Default for LaplaceHyper {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            beta0: 1e-1,
            tau_init: 1e-7,
        }
    }
}

impl LaplaceHyper {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha0, self.beta0, self.tau_init];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(invalid(format!("Laplace hyperparameters must be positive: {self:?}")))
        }
    }
}

/// `C^{-1} = H* W H + C0(λ)^{-1}`, `u* = C(H* W d + C0(λ)^{-1} u0)`.
pub fn update_u_weighted(
    op: &ModalOperator,
    d: &DVector<f64>,
    prior: &TruncatedPrior,
    lambda: f64,
    weights: &DVector<f64>,
) -> Result<GaussianFactor> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("λ* must be positive, got {lambda}")));
    }
    op.check_data(d)?;
    op.check_data(weights)?;
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(invalid("weights must be positive and finite"));
    }
    let prec = prior.modal_precisions(lambda);
    let mut precision = weighted_gram(op, weights);
    for (j, p) in prec.iter().enumerate() {
        precision[(j, j)] += p;
    }
    let rhs = op.matrix().tr_mul(&weights.component_mul(d)) + prec.component_mul(prior.u0_modal());
    GaussianFactor::from_precision(prior.shared_eigsys(), precision, &rhs)
}

/// `E[(Hu − d)_j²] = (H u* − d)_j² + (H C H*)_jj` for every datum.
pub fn expect_residual_componentwise(
    factor: &GaussianFactor,
    op: &ModalOperator,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    op.check_data(d)?;
    let h = op.matrix();
    let r = h * factor.modal_mean() - d;
    let hs = h * factor.modal_covariance();
    Ok(DVector::from_fn(h.nrows(), |j, _| {
        r[j] * r[j] + hs.row(j).dot(&h.row(j))
    }))
}

/// `m_j = sqrt(2 / (τ E[(Hu−d)_j²]))`, `ζ = 2/τ`, with the residual floored at
/// [`RESIDUAL_FLOOR`].
pub fn update_weights(e_res: &DVector<f64>, tau: f64) -> Result<InvGaussFactor> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("τ must be positive, got {tau}")));
    }
    let means = e_res.map(|e| (2.0 / (tau * e.max(RESIDUAL_FLOOR))).sqrt());
    InvGaussFactor::new(means, 2.0 / tau)
}

/// Empirical-Bayes `τ = (1/N_d) Σ_j m_j^{-1} + ζ^{-1}`.
pub fn update_tau_empirical(weights: &InvGaussFactor) -> Result<f64> {
    if weights.is_empty() {
        return Err(invalid("weight factor is empty"));
    }
    let n = weights.len() as f64;
    Ok(weights.means().iter().map(|m| 1.0 / m).sum::<f64>() / n + 1.0 / weights.shape())
}

#[derive(Debug, Clone)]
pub struct LaplaceVbState {
    pub u: GaussianFactor,
    pub lambda: GammaFactor,
    pub weights: InvGaussFactor,
    /// Noise scale used in the most recent sweep.
    pub tau: f64,
    pub iteration: usize,
    pub rel_changes: RelChanges,
    pub converged: bool,
    pub elbo_trace: Vec<f64>,
    pub lambda_trace: Vec<f64>,
    pub tau_trace: Vec<f64>,
    pub rel_change_trace: Vec<f64>,
    pub mean_trace: Vec<DVector<f64>>,
    /// Weight means `E[w_j]` after each sweep.
    pub weight_trace: Vec<DVector<f64>>,
}

/// ELBO for the `(u, λ, w)` factors at a fixed noise scale `tau`.
pub fn elbo_laplace(
    state: &LaplaceVbState,
    op: &ModalOperator,
    d: &DVector<f64>,
    prior: &TruncatedPrior,
    hyper: &LaplaceHyper,
    tau: f64,
) -> Result<f64> {
    let e_res = expect_residual_componentwise(&state.u, op, d)?;
    let w = &state.weights;
    let zeta = w.shape();
    let mut data_terms = 0.0;
    for j in 0..w.len() {
        let m = w.means()[j];
        let inv = w.mean_reciprocal(j);
        let a = zeta / (m * m);
        // ln w terms of likelihood, prior and entropy cancel exactly
        data_terms += -0.5 * (2.0 * PI).ln() - 0.5 * m * e_res[j] - tau.ln() - inv / tau
            + 0.5 * a * m
            + 0.5 * zeta * inv
            + w.ln_normalizer(j);
    }
    let rest = prior_u_cross_entropy(&state.u, prior, &state.lambda)
        + state.lambda.cross_log_density(hyper.alpha0, hyper.beta0)
        + state.u.entropy()
        + state.lambda.entropy();
    Ok(data_terms + rest)
}

#[derive(Debug, Clone)]
pub struct LaplaceVb<'a> {
    op: &'a ModalOperator,
    d: &'a DVector<f64>,
    prior: &'a TruncatedPrior,
    hyper: LaplaceHyper,
    freeze_tau: bool,
}

impl<'a> LaplaceVb<'a> {
    pub fn new(
        op: &'a ModalOperator,
        d: &'a DVector<f64>,
        prior: &'a TruncatedPrior,
        hyper: LaplaceHyper,
    ) -> Result<Self> {
        hyper.validate()?;
        op.check_data(d)?;
        if op.n_modes() != prior.n_modes() {
            return Err(invalid("modal operator and prior have different mode counts"));
        }
        Ok(Self {
            op,
            d,
            prior,
            hyper,
            freeze_tau: false,
        })
    }

    /// Keep `τ = tau_init` for every sweep.
    pub fn freeze_tau(mut self) -> Self {
        self.freeze_tau = true;
        self
    }

    pub fn hyper(&self) -> &LaplaceHyper {
        &self.hyper
    }

    /// Hyperprior for `λ`; unit-balance weights `E[w_j] = 1/τ_init` with `ζ = 2/τ_init`.
    pub fn initial_state(&self) -> Result<LaplaceVbState> {
        let lambda = GammaFactor::new(self.hyper.alpha0, self.hyper.beta0)?;
        self.state_from(lambda, self.hyper.tau_init)
    }

    pub fn state_from(&self, lambda: GammaFactor, tau: f64) -> Result<LaplaceVbState> {
        let n = self.op.n_data();
        let weights = InvGaussFactor::new(DVector::from_element(n, 1.0 / tau), 2.0 / tau)?;
        Ok(LaplaceVbState {
            u: GaussianFactor::from_prior(self.prior, lambda.mean())?,
            lambda,
            weights,
            tau,
            iteration: 0,
            rel_changes: RelChanges::default(),
            converged: false,
            elbo_trace: Vec::new(),
            lambda_trace: Vec::new(),
            tau_trace: Vec::new(),
            rel_change_trace: Vec::new(),
            mean_trace: Vec::new(),
            weight_trace: Vec::new(),
        })
    }

    pub fn elbo(&self, state: &LaplaceVbState) -> Result<f64> {
        elbo_laplace(state, self.op, self.d, self.prior, &self.hyper, state.tau)
    }

    /// Refresh `τ` (from the second sweep on), then update `u`, `λ` and `w`.
    pub fn sweep(&self, state: &mut LaplaceVbState) -> Result<()> {
        let tau = if state.iteration == 0 || self.freeze_tau {
            state.tau
        } else {
            update_tau_empirical(&state.weights)?
        };
        let lambda_k = state.lambda.mean();
        let u = update_u_weighted(self.op, self.d, self.prior, lambda_k, state.weights.means())?;
        let lambda = update_lambda(
            self.prior,
            self.hyper.alpha0,
            self.hyper.beta0,
            expect_prior_quadratic(&u, self.prior),
        )?;
        let weights = update_weights(&expect_residual_componentwise(&u, self.op, self.d)?, tau)?;
        let changes = RelChanges {
            u: rel_change_vec(u.mean(), state.u.mean()),
            lambda: rel_change(lambda.mean(), state.lambda.mean()),
            tau: rel_change(tau, state.tau),
        };
        state.u = u;
        state.lambda = lambda;
        state.weights = weights;
        state.tau = tau;
        state.iteration += 1;
        state.rel_changes = changes;
        let value = self.elbo(state)?;
        state.elbo_trace.push(value);
        state.lambda_trace.push(lambda.mean());
        state.tau_trace.push(tau);
        state.rel_change_trace.push(changes.max());
        state.mean_trace.push(state.u.mean().clone());
        state.weight_trace.push(state.weights.means().clone());
        Ok(())
    }

    pub fn run_from(&self, mut state: LaplaceVbState, tol: f64, max_sweeps: usize) -> Result<LaplaceVbState> {
        for _ in 0..max_sweeps {
            self.sweep(&mut state)?;
            if state.rel_changes.max() <= tol {
                state.converged = true;
                break;
            }
        }
        Ok(state)
    }

    pub fn run(&self, tol: f64, max_sweeps: usize) -> Result<LaplaceVbState> {
        self.run_from(self.initial_state()?, tol, max_sweeps)
    }
}

pub fn run_vb_laplace(
    stack: &ForwardStack,
    d: &DVector<f64>,
    prior: &TruncatedPrior,
    hyper: LaplaceHyper,
    tol: f64,
    max_sweeps: usize,
) -> Result<LaplaceVbState> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let op = ModalOperator::new(stack, prior.eigsys())?;
    LaplaceVb::new(&op, d, prior, hyper)?.run(tol, max_sweeps)
}
