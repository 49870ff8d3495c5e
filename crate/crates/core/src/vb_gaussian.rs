//! Mean-field coordinate ascent for the Gaussian-noise hierarchical model
//!
//! ```text
//! d = H u + ε,  ε ~ N(0, τ^{-1} I),  u ~ N(u0, C0^K(λ)),
//! λ ~ Gamma(α0, β0),  τ ~ Gamma(α1, β1)
//! ```
//!
//! with the factorisation `ν(u, λ, τ) = ν^u(u) ν^λ(λ) ν^τ(τ)`. Every update is
//! conjugate: `ν^u` is Gaussian, `ν^λ` and `ν^τ` are Gamma. One sweep uses the
//! current moments of `λ` and `τ` to update `ν^u`, then refreshes `ν^λ` and
//! `ν^τ` from the new `ν^u`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cg::{cg_solve, CgSolution};
use crate::error::{invalid, Result};
use crate::factors::{GammaFactor, GaussianFactor, ModalOperator};
use crate::forward::ForwardStack;
use crate::prior::TruncatedPrior;

/// Hyperprior parameters of the Gaussian-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianHyper {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
}

impl Default for GaussianHyper {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            beta0: 1e-1,
            alpha1: 1.0,
            beta1: 1e-5,
        }
    }
}

impl GaussianHyper {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha0, self.beta0, self.alpha1, self.beta1];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(invalid(format!("hyperprior parameters must be positive: {self:?}")))
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `C^{-1} = τ H*H + C0(λ)^{-1}`, `u* = C(τ H*d + C0(λ)^{-1} u0)`.
pub fn update_u(
    op: &ModalOperator,
    d: &DVector<f64>,
    prior: &TruncatedPrior,
    lambda: f64,
    tau: f64,
) -> Result<GaussianFactor> {
    check_positive("λ*", lambda)?;
    check_positive("τ*", tau)?;
    op.check_data(d)?;
    let prec = prior.modal_precisions(lambda);
    let mut precision = op.gram() * tau;
    for (j, p) in prec.iter().enumerate() {
        precision[(j, j)] += p;
    }
    let rhs = op.matrix().tr_mul(d) * tau + prec.component_mul(prior.u0_modal());
    GaussianFactor::from_precision(prior.shared_eigsys(), precision, &rhs)
}

/// Posterior mean of [`update_u`] by matrix-free CG on the normal equations,
/// optionally preconditioned with `C0(λ)`. Returns the grid mean and solver stats.
#[allow(clippy::too_many_arguments)]
pub fn update_u_mean_cg(
    op: &ModalOperator,
    d: &DVector<f64>,
    prior: &TruncatedPrior,
    lambda: f64,
    tau: f64,
    tol: f64,
    max_iter: usize,
    precondition: bool,
) -> Result<(DVector<f64>, CgSolution)> {
    check_positive("λ*", lambda)?;
    check_positive("τ*", tau)?;
    op.check_data(d)?;
    let h = op.matrix();
    let prec = prior.modal_precisions(lambda);
    let var = prior.modal_variances(lambda);
    let rhs = h.tr_mul(d) * tau + prec.component_mul(prior.u0_modal());
    let matvec = |c: &DVector<f64>| h.tr_mul(&(h * c)) * tau + prec.component_mul(c);
    let pre = |r: &DVector<f64>| var.component_mul(r);
    let sol = cg_solve(
        matvec,
        &rhs,
        tol,
        max_iter,
        if precondition { Some(&pre) } else { None },
    )?;
    Ok((prior.eigsys().from_modal(&sol.x), sol))
}

/// `E[Σ_{j≤K} (u_j − u_{0j})² / α_j] = Σ_{j≤K} α_j^{-1}(⟨u*−u0, e_j⟩² + ⟨e_j, C e_j⟩)`.
pub fn expect_prior_quadratic(factor: &GaussianFactor, prior: &TruncatedPrior) -> f64 {
    modal_quadratic(factor, prior, 0..prior.k())
}

pub(crate) fn modal_quadratic(factor: &GaussianFactor, prior: &TruncatedPrior, range: std::ops::Range<usize>) -> f64 {
    let alpha = prior.eigsys().eigvals();
    let mu = factor.modal_mean();
    let u0 = prior.u0_modal();
    let s = factor.modal_covariance();
    range.map(|j| ((mu[j] - u0[j]).powi(2) + s[(j, j)]) / alpha[j]).sum()
}

/// `E‖Hu − d‖² = ‖H u* − d‖² + Tr(H C H*)`.
pub fn expect_residual(factor: &GaussianFactor, op: &ModalOperator, d: &DVector<f64>) -> Result<f64> {
    op.check_data(d)?;
    let h = op.matrix();
    let r = h * factor.modal_mean() - d;
    let hs = h * factor.modal_covariance();
    Ok(r.norm_squared() + hs.component_mul(h).sum())
}

/// `Gamma(α0 + K/2, β0 + e_quad/2)`.
pub fn update_lambda(prior: &TruncatedPrior, alpha0: f64, beta0: f64, e_quad: f64) -> Result<GammaFactor> {
    if !(e_quad >= 0.0) {
        return Err(invalid(format!(
            "expected quadratic form must be non-negative, got {e_quad}"
        )));
    }
    GammaFactor::new(alpha0 + prior.k() as f64 / 2.0, beta0 + e_quad / 2.0)
}

/// `Gamma(α1 + N_d/2, β1 + e_res/2)`.
pub fn update_tau(n_data: usize, alpha1: f64, beta1: f64, e_res: f64) -> Result<GammaFactor> {
    if !(e_res >= 0.0) {
        return Err(invalid(format!("expected residual must be non-negative, got {e_res}")));
    }
    GammaFactor::new(alpha1 + n_data as f64 / 2.0, beta1 + e_res / 2.0)
}

/// Noise standard deviation implied by a precision factor, `sqrt(1/E[τ])`.
pub fn sigma_hat(tau: &GammaFactor) -> f64 {
    (1.0 / tau.mean()).sqrt()
}

/// Relative changes that drive the stopping rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RelChanges {
    pub u: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl RelChanges {
    pub fn max(&self) -> f64 {
        self.u.max(self.lambda).max(self.tau)
    }
}

pub(crate) fn rel_change_vec(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    let diff = (new - old).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / new.norm()
    }
}

pub(crate) fn rel_change(new: f64, old: f64) -> f64 {
    let diff = (new - old).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / new.abs()
    }
}

/// Approximate posterior `ν^u ν^λ ν^τ` with iteration diagnostics.
#[derive(Debug, Clone)]
pub struct VbState {
    pub u: GaussianFactor,
    pub lambda: GammaFactor,
    pub tau: GammaFactor,
    /// Completed sweeps.
    pub iteration: usize,
    pub rel_changes: RelChanges,
    pub converged: bool,
    /// ELBO after each sweep (up to an additive constant).
    pub elbo_trace: Vec<f64>,
    pub lambda_trace: Vec<f64>,
    pub tau_trace: Vec<f64>,
    pub rel_change_trace: Vec<f64>,
    /// Posterior mean after each sweep.
    pub mean_trace: Vec<DVector<f64>>,
}

impl VbState {
    pub fn sigma_hat(&self) -> f64 {
        sigma_hat(&self.tau)
    }
}

/// `E_q[ln p(u | λ)]` for the truncated prior, modal coordinates.
pub(crate) fn prior_u_cross_entropy(factor: &GaussianFactor, prior: &TruncatedPrior, lambda: &GammaFactor) -> f64 {
    let alpha = prior.eigsys().eigvals();
    let m = prior.n_modes();
    let k = prior.k();
    let q_k = modal_quadratic(factor, prior, 0..k);
    let q_tail = modal_quadratic(factor, prior, k..m);
    -0.5 * m as f64 * (2.0 * PI).ln() - 0.5 * alpha.iter().map(|a| a.ln()).sum::<f64>()
        + 0.5 * k as f64 * lambda.mean_log()
        - 0.5 * lambda.mean() * q_k
        - 0.5 * q_tail
}

/// Evidence lower bound `E_ν[ln p(d, u, λ, τ)] − E_ν[ln ν]`.
pub fn elbo(
    state: &VbState,
    op: &ModalOperator,
    d: &DVector<f64>,
    prior: &TruncatedPrior,
    hyper: &GaussianHyper,
) -> Result<f64> {
    let n_d = op.n_data() as f64;
    let e_res = expect_residual(&state.u, op, d)?;
    let likelihood = 0.5 * n_d * (state.tau.mean_log() - (2.0 * PI).ln()) - 0.5 * state.tau.mean() * e_res;
    let prior_terms = prior_u_cross_entropy(&state.u, prior, &state.lambda)
        + state.lambda.cross_log_density(hyper.alpha0, hyper.beta0)
        + state.tau.cross_log_density(hyper.alpha1, hyper.beta1);
    let entropy = state.u.entropy() + state.lambda.entropy() + state.tau.entropy();
    Ok(likelihood + prior_terms + entropy)
}

/// Optional replacement of the posterior mean between the `u`-update and the
/// hyperparameter updates. Receives the fresh factor and the `(λ, τ)` moments
/// that produced it.
pub type MeanRefiner<'r> = dyn FnMut(&GaussianFactor, f64, f64) -> Result<DVector<f64>> + 'r;

/// Coordinate-ascent engine for one data set.
#[derive(Debug, Clone)]
pub struct GaussianVb<'a> {
    op: &'a ModalOperator,
    d: &'a DVector<f64>,
    prior: &'a TruncatedPrior,
    hyper: GaussianHyper,
    update_hyper: bool,
}

impl<'a> GaussianVb<'a> {
    pub fn new(
        op: &'a ModalOperator,
        d: &'a DVector<f64>,
        prior: &'a TruncatedPrior,
        hyper: GaussianHyper,
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
            update_hyper: true,
        })
    }

    /// Keep `ν^λ` and `ν^τ` fixed at their initial values.
    pub fn freeze_hyperparameters(mut self) -> Self {
        self.update_hyper = false;
        self
    }

    pub fn hyper(&self) -> &GaussianHyper {
        &self.hyper
    }

    /// `ν_0`: the hyperpriors, and `ν^u` equal to the prior at `λ = α0/β0`.
    pub fn initial_state(&self) -> Result<VbState> {
        let lambda = GammaFactor::new(self.hyper.alpha0, self.hyper.beta0)?;
        let tau = GammaFactor::new(self.hyper.alpha1, self.hyper.beta1)?;
        self.state_from(lambda, tau)
    }

    /// Warm start from given hyperparameter factors.
    pub fn state_from(&self, lambda: GammaFactor, tau: GammaFactor) -> Result<VbState> {
        Ok(VbState {
            u: GaussianFactor::from_prior(self.prior, lambda.mean())?,
            lambda,
            tau,
            iteration: 0,
            rel_changes: RelChanges::default(),
            converged: false,
            elbo_trace: Vec::new(),
            lambda_trace: Vec::new(),
            tau_trace: Vec::new(),
            rel_change_trace: Vec::new(),
            mean_trace: Vec::new(),
        })
    }

    pub fn elbo(&self, state: &VbState) -> Result<f64> {
        elbo(state, self.op, self.d, self.prior, &self.hyper)
    }

    pub fn sweep(&self, state: &mut VbState) -> Result<()> {
        self.sweep_with(state, None)
    }

    /// One coordinate-ascent sweep: `u`, then `λ` and `τ`.
    pub fn sweep_with(&self, state: &mut VbState, refine: Option<&mut MeanRefiner<'_>>) -> Result<()> {
        let lambda_k = state.lambda.mean();
        let tau_k = state.tau.mean();
        let mut u = update_u(self.op, self.d, self.prior, lambda_k, tau_k)?;
        if let Some(refine) = refine {
            let mean = refine(&u, lambda_k, tau_k)?;
            u = u.with_mean(&mean);
        }
        let (lambda, tau) = if self.update_hyper {
            let e_quad = expect_prior_quadratic(&u, self.prior);
            let e_res = expect_residual(&u, self.op, self.d)?;
            (
                update_lambda(self.prior, self.hyper.alpha0, self.hyper.beta0, e_quad)?,
                update_tau(self.op.n_data(), self.hyper.alpha1, self.hyper.beta1, e_res)?,
            )
        } else {
            (state.lambda, state.tau)
        };
        let changes = RelChanges {
            u: rel_change_vec(u.mean(), state.u.mean()),
            lambda: rel_change(lambda.mean(), state.lambda.mean()),
            tau: rel_change(tau.mean(), state.tau.mean()),
        };
        state.u = u;
        state.lambda = lambda;
        state.tau = tau;
        state.iteration += 1;
        state.rel_changes = changes;
        let value = self.elbo(state)?;
        state.elbo_trace.push(value);
        state.lambda_trace.push(lambda.mean());
        state.tau_trace.push(tau.mean());
        state.rel_change_trace.push(changes.max());
        state.mean_trace.push(state.u.mean().clone());
        Ok(())
    }

    /// Sweeps until the largest relative change is at most `tol` or
    /// `max_sweeps` is reached (then `converged` stays `false`).
    pub fn run_from(&self, mut state: VbState, tol: f64, max_sweeps: usize) -> Result<VbState> {
        for _ in 0..max_sweeps {
            self.sweep(&mut state)?;
            if state.rel_changes.max() <= tol {
                state.converged = true;
                break;
            }
        }
        Ok(state)
    }

    pub fn run(&self, tol: f64, max_sweeps: usize) -> Result<VbState> {
        self.run_from(self.initial_state()?, tol, max_sweeps)
    }
}

/// Runs the full Gaussian-noise algorithm on a stacked forward operator.
pub fn run_vb_gaussian(
    stack: &ForwardStack,
    d: &DVector<f64>,
    prior: &TruncatedPrior,
    hyper: GaussianHyper,
    tol: f64,
    max_sweeps: usize,
) -> Result<VbState> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let op = ModalOperator::new(stack, prior.eigsys())?;
    GaussianVb::new(&op, d, prior, hyper)?.run(tol, max_sweeps)
}

/// Dense identity-free helper: `H^T diag(w) H` in modal coordinates.
pub(crate) fn weighted_gram(op: &ModalOperator, w: &DVector<f64>) -> DMatrix<f64> {
    let h = op.matrix();
    let mut wh = h.clone();
    for (mut row, wi) in wh.row_iter_mut().zip(w.iter()) {
        row *= *wi;
    }
    h.tr_mul(&wh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use crate::prior::EigenSystem;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    /// A one-mode problem: grid with three nodes has a single interior mode.
    fn scalar_setup(h_value: f64) -> (TruncatedPrior, ModalOperator) {
        let grid = Grid1D::unit(3).unwrap();
        let es = Arc::new(EigenSystem::full(&grid, 1).unwrap());
        let prior = TruncatedPrior::centered(es, 1).unwrap();
        let op = ModalOperator::from_modal_matrix(DMatrix::from_element(1, 1, h_value));
        (prior, op)
    }

    #[test]
    fn scalar_update_matches_hand_formula() {
        let (prior, op) = scalar_setup(1.0);
        let alpha = prior.eigsys().eigvals()[0];
        // λ chosen so that the prior variance α/λ equals one
        let f = update_u(&op, &DVector::from_element(1, 2.0), &prior, alpha, 1.0).unwrap();
        assert_relative_eq!(f.modal_mean()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(f.modal_covariance()[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn no_data_returns_prior() {
        let grid = Grid1D::unit(9).unwrap();
        let es = Arc::new(EigenSystem::full(&grid, 1).unwrap());
        let prior = TruncatedPrior::new(Arc::clone(&es), 3, grid.sample(|x| x * (1.0 - x))).unwrap();
        let op = ModalOperator::from_modal_matrix(DMatrix::zeros(4, 7));
        let f = update_u(&op, &DVector::from_element(4, 1.0), &prior, 2.0, 5.0).unwrap();
        assert!((f.modal_mean() - prior.u0_modal()).amax() < 1e-14);
        assert!((f.basis_diag() - prior.modal_variances(2.0)).amax() < 1e-14);
    }

    #[test]
    fn expectation_identities() {
        let grid = Grid1D::unit(10).unwrap();
        let es = Arc::new(EigenSystem::full(&grid, 1).unwrap());
        let prior = TruncatedPrior::centered(es, 5).unwrap();
        let f = GaussianFactor::from_prior(&prior, 1.0).unwrap();
        assert_relative_eq!(expect_prior_quadratic(&f, &prior), 5.0, epsilon = 1e-12);

        let op = ModalOperator::from_modal_matrix(DMatrix::identity(2, 8));
        let grid2 = Grid1D::unit(10).unwrap();
        let es2 = Arc::new(EigenSystem::full(&grid2, 1).unwrap());
        let mut p = DMatrix::identity(8, 8);
        p[(0, 0)] = 1.0;
        let d = DVector::from_vec(vec![0.3, -0.4]);
        let mut rhs = DVector::zeros(8);
        rhs[0] = 0.3;
        rhs[1] = -0.4;
        let unit = GaussianFactor::from_precision(es2, p, &rhs).unwrap();
        // u* = d on the observed modes, C = I: expectation is the pure trace 2
        assert_relative_eq!(expect_residual(&unit, &op, &d).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lambda_and_tau_updates() {
        let grid = Grid1D::unit(40).unwrap();
        let es = Arc::new(EigenSystem::full(&grid, 1).unwrap());
        let prior = TruncatedPrior::centered(es, 34).unwrap();
        let g = update_lambda(&prior, 1.0, 0.1, 0.0).unwrap();
        assert_eq!((g.shape(), g.rate()), (18.0, 0.1));
        let g = update_lambda(&prior, 1.0, 0.1, 34.0).unwrap();
        assert_relative_eq!(g.mean(), 18.0 / 17.1, epsilon = 1e-12);
        let t = update_tau(400, 1.0, 1e-5, 0.0).unwrap();
        assert_eq!((t.shape(), t.rate()), (201.0, 1e-5));
        assert!(update_tau(400, 1.0, 1e-5, -1.0).is_err());
    }

    #[test]
    fn ideal_fit_recovers_sigma() {
        let sigma: f64 = 0.01;
        for &n_d in &[1_000usize, 100_000] {
            let t = update_tau(n_d, 1.0, 1e-5, n_d as f64 * sigma * sigma).unwrap();
            let rel = (sigma_hat(&t) / sigma - 1.0).abs();
            assert!(rel < 50.0 / n_d as f64, "n_d={n_d}: {rel}");
        }
    }

    #[test]
    fn cg_mean_matches_dense_update() {
        let grid = Grid1D::unit(30).unwrap();
        let es = Arc::new(EigenSystem::full(&grid, 1).unwrap());
        let prior = TruncatedPrior::centered(Arc::clone(&es), 6).unwrap();
        let hc = DMatrix::from_fn(12, 28, |i, j| ((i * 7 + j * 3) as f64).sin() / (1.0 + j as f64));
        let op = ModalOperator::from_modal_matrix(hc);
        let d = DVector::from_fn(12, |i, _| (i as f64).cos());
        let dense = update_u(&op, &d, &prior, 3.0, 50.0).unwrap();
        for pre in [false, true] {
            let (mean, sol) = update_u_mean_cg(&op, &d, &prior, 3.0, 50.0, 1e-12, 500, pre).unwrap();
            assert!((mean - dense.mean()).amax() <= 1e-8 * dense.mean().amax(), "{sol:?}");
        }
    }

    #[test]
    fn relative_change_conventions() {
        let z = DVector::zeros(3);
        assert_eq!(rel_change_vec(&z, &z), 0.0);
        assert_eq!(rel_change(2.0, 2.0), 0.0);
        assert_relative_eq!(rel_change(2.0, 1.0), 0.5);
    }

    #[test]
    fn weighted_gram_matches_scaled_gram() {
        let hc = DMatrix::from_fn(5, 4, |i, j| (i + 2 * j) as f64 * 0.1);
        let op = ModalOperator::from_modal_matrix(hc);
        let w = DVector::from_element(5, 2.5);
        assert!((weighted_gram(&op, &w) - op.gram() * 2.5).amax() < 1e-12);
    }
}
