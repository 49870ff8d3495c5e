//! Mean-field factor families and the forward operator expressed in the prior
//! eigen-basis.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::forward::ForwardStack;
use crate::prior::{EigenSystem, TruncatedPrior};

/// `Gamma(shape, rate)` with density `β^α/Γ(α) x^{α-1} e^{-βx}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFactor {
    shape: f64,
    rate: f64,
}

impl GammaFactor {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(invalid(format!(
                "Gamma parameters must be positive, got shape={shape}, rate={rate}"
            )));
        }
        Ok(Self { shape, rate })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// `E[ln x] = ψ(α) − ln β`.
    pub fn mean_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        self.shape - self.rate.ln() + ln_gamma(self.shape) + (1.0 - self.shape) * digamma(self.shape)
    }

    /// `E_q[ln p(x)]` for `p = Gamma(prior_shape, prior_rate)` and `q = self`.
    pub fn cross_log_density(&self, prior_shape: f64, prior_rate: f64) -> f64 {
        prior_shape * prior_rate.ln() - ln_gamma(prior_shape) + (prior_shape - 1.0) * self.mean_log()
            - prior_rate * self.mean()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }
}

/// Product of inverse-Gaussian factors `IG(m_j, ζ)` with a shared shape `ζ`.
///
/// Density `sqrt(ζ/(2π w³)) exp(−ζ(w − m)²/(2m² w))`, so `E[w] = m` and
/// `E[1/w] = 1/m + 1/ζ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvGaussFactor {
    means: DVector<f64>,
    shape: f64,
}

impl InvGaussFactor {
    pub fn new(means: DVector<f64>, shape: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(invalid(format!("inverse-Gaussian shape must be positive, got {shape}")));
        }
        if means.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(invalid("inverse-Gaussian means must be positive and finite"));
        }
        Ok(Self { means, shape })
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// `E[1/w_j]`.
    pub fn mean_reciprocal(&self, j: usize) -> f64 {
        1.0 / self.means[j] + 1.0 / self.shape
    }

    /// `ln ∫ w^{-3/2} exp(−a w/2 − b/(2w)) dw` for the component's natural
    /// parameters `a = ζ/m²`, `b = ζ`, i.e. `ln(2 K_{1/2}(ζ/m) · m^{-1/2})`.
    pub fn ln_normalizer(&self, j: usize) -> f64 {
        let m = self.means[j];
        let x = self.shape / m;
        std::f64::consts::LN_2 + 0.5 * (PI / (2.0 * x)).ln() - x - 0.5 * m.ln()
    }

    pub fn ln_pdf(&self, j: usize, w: f64) -> f64 {
        let m = self.means[j];
        0.5 * (self.shape / (2.0 * PI * w.powi(3))).ln() - self.shape * (w - m).powi(2) / (2.0 * m * m * w)
    }
}

/// Forward operator composed with the prior eigenvectors: column `j` is `H e_j`.
#[derive(Debug, Clone)]
pub struct ModalOperator {
    hc: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl ModalOperator {
    pub fn new(stack: &ForwardStack, eigsys: &EigenSystem) -> Result<Self> {
        if stack.grid() != eigsys.grid() {
            return Err(invalid("forward stack and prior live on different grids"));
        }
        let hc = stack.matrix() * eigsys.eigvecs();
        let gram = hc.tr_mul(&hc);
        Ok(Self { hc, gram })
    }

    /// Operator given directly in modal coordinates.
    pub fn from_modal_matrix(hc: DMatrix<f64>) -> Self {
        let gram = hc.tr_mul(&hc);
        Self { hc, gram }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.hc
    }

    /// `H_c^T H_c`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn n_data(&self) -> usize {
        self.hc.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.hc.ncols()
    }

    pub(crate) fn check_data(&self, d: &DVector<f64>) -> Result<()> {
        if d.len() != self.n_data() {
            return Err(Error::DimensionMismatch {
                what: "data vector",
                expected: self.n_data(),
                got: d.len(),
            });
        }
        Ok(())
    }
}

/// Gaussian factor `N(u*, C)` stored in the prior eigen-basis.
///
/// Keeps the dense modal covariance and the lower Cholesky factor of its
/// precision.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    eigsys: Arc<EigenSystem>,
    modal_mean: DVector<f64>,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision_chol: DMatrix<f64>,
    log_det_cov: f64,
}

impl GaussianFactor {
    /// Factor with precision `P` and mean `P^{-1} b` (modal coordinates).
    pub fn from_precision(eigsys: Arc<EigenSystem>, precision: DMatrix<f64>, rhs: &DVector<f64>) -> Result<Self> {
        let n = precision.nrows();
        if precision.ncols() != n || rhs.len() != n || n != eigsys.n_modes() {
            return Err(Error::DimensionMismatch {
                what: "precision matrix",
                expected: eigsys.n_modes(),
                got: n,
            });
        }
        let chol = match precision.clone().cholesky() {
            Some(c) => c,
            None => {
                let min_eig = precision.symmetric_eigenvalues().min();
                return Err(Error::IndefinitePrecision { min_pivot: min_eig });
            }
        };
        let l = chol.l();
        let diag_min = l.diagonal().min();
        if !(diag_min > 0.0) {
            return Err(Error::IndefinitePrecision { min_pivot: diag_min });
        }
        let log_det_cov = -2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let modal_mean = chol.solve(rhs);
        let covariance = chol.inverse();
        if modal_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior mean"));
        }
        let mean = eigsys.from_modal(&modal_mean);
        Ok(Self {
            eigsys,
            modal_mean,
            mean,
            covariance,
            precision_chol: l,
            log_det_cov,
        })
    }

    /// The prior `N(u0, C0^K(λ))` itself.
    pub fn from_prior(prior: &TruncatedPrior, lambda: f64) -> Result<Self> {
        let prec = prior.modal_precisions(lambda);
        let rhs = prec.component_mul(prior.u0_modal());
        Self::from_precision(prior.shared_eigsys(), DMatrix::from_diagonal(&prec), &rhs)
    }

    /// Same covariance, different mean (used by MAP refinement of the mean).
    pub fn with_mean(&self, mean: &DVector<f64>) -> Self {
        let modal_mean = self.eigsys.to_modal(mean);
        let mean = self.eigsys.from_modal(&modal_mean);
        Self {
            modal_mean,
            mean,
            ..self.clone()
        }
    }

    pub fn eigsys(&self) -> &EigenSystem {
        &self.eigsys
    }

    /// Posterior mean on the grid.
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn modal_mean(&self) -> &DVector<f64> {
        &self.modal_mean
    }

    /// Covariance in modal coordinates, `S_ij = <e_i, C e_j>`.
    pub fn modal_covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor of the modal precision.
    pub fn precision_cholesky(&self) -> &DMatrix<f64> {
        &self.precision_chol
    }

    /// `<e_j, C e_j>` for every stored mode.
    pub fn basis_diag(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }

    pub fn log_det_covariance(&self) -> f64 {
        self.log_det_cov
    }

    /// Nodal covariance matrix `E S E^T`.
    pub fn nodal_covariance(&self) -> DMatrix<f64> {
        let e = self.eigsys.eigvecs();
        e * &self.covariance * e.transpose()
    }

    /// Pointwise variance of `u(x_i)`.
    pub fn pointwise_variance(&self) -> DVector<f64> {
        let e = self.eigsys.eigvecs();
        let es = e * &self.covariance;
        DVector::from_fn(e.nrows(), |i, _| es.row(i).dot(&e.row(i)).max(0.0))
    }

    pub fn pointwise_std(&self) -> DVector<f64> {
        self.pointwise_variance().map(f64::sqrt)
    }

    /// Differential entropy of the modal Gaussian.
    pub fn entropy(&self) -> f64 {
        let m = self.modal_mean.len() as f64;
        0.5 * m * (1.0 + (2.0 * PI).ln()) + 0.5 * self.log_det_cov
    }
}
