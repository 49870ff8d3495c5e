//! Prior covariance `(Id - Δ)^{-p}` on a 1D grid with zero Dirichlet conditions,
//! its eigen-system, the intrinsic-dimension heuristic, and the hyper-scaled
//! covariance `C0^K(λ)` that multiplies the leading `K` eigenvalues by `1/λ`.
//!
//! All covariance algebra is carried out in the eigen-basis. A grid vector `u`
//! has modal coefficients `c_j = <u, e_j>` under the grid inner product.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;

/// Leading eigenpairs of `(Id - Δ_h)^{-p}`, sorted by decreasing eigenvalue.
///
/// Eigenvectors are sampled on every grid node (zero on the boundary) and are
/// orthonormal under `<u, v> = h Σ u_i v_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenSystem {
    grid: Grid1D,
    order: u32,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

/// Builds the `n_modes` leading eigenpairs of `(Id - Δ_h)^{-p}` where `Δ_h` is
/// the 3-point Laplacian on interior nodes.
///
/// The discrete Dirichlet Laplacian on a uniform grid is diagonalised by the
/// discrete sine transform, so the eigenpairs are evaluated in closed form:
/// `μ_j = (4/h²) sin²(jπ/2N)` and `v_j(i) = sin(jπ i/N)`.
pub fn build_eigensystem(grid: &Grid1D, p: u32, n_modes: usize) -> Result<EigenSystem> {
    if p == 0 {
        return Err(invalid("covariance order p must be positive"));
    }
    let n_int = grid.n_interior();
    if n_modes == 0 || n_modes > n_int {
        return Err(invalid(format!(
            "n_modes must lie in 1..={n_int} for a {}-node grid, got {n_modes}",
            grid.n_nodes()
        )));
    }
    let h = grid.spacing();
    let intervals = (grid.n_nodes() - 1) as f64;
    let scale = (2.0 / intervals).sqrt() / h.sqrt();

    let eigvals = DVector::from_fn(n_modes, |j, _| {
        let mode = (j + 1) as f64;
        let s = (mode * PI / (2.0 * intervals)).sin();
        let lap = 4.0 / (h * h) * s * s;
        (1.0 + lap).powi(-(p as i32))
    });
    let eigvecs = DMatrix::from_fn(grid.n_nodes(), n_modes, |i, j| {
        if i == 0 || i + 1 == grid.n_nodes() {
            0.0
        } else {
            scale * ((j + 1) as f64 * PI * i as f64 / intervals).sin()
        }
    });
    if eigvals.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::NonFinite("prior eigenvalues"));
    }
    Ok(EigenSystem {
        grid: *grid,
        order: p,
        eigvals,
        eigvecs,
    })
}

impl EigenSystem {
    /// All interior modes.
    pub fn full(grid: &Grid1D, p: u32) -> Result<Self> {
        build_eigensystem(grid, p, grid.n_interior())
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn n_modes(&self) -> usize {
        self.eigvals.len()
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Columns are the grid-sampled eigenfunctions.
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Modal coefficients `c_j = <u, e_j>`.
    pub fn to_modal(&self, u: &DVector<f64>) -> DVector<f64> {
        self.eigvecs.tr_mul(u) * self.grid.spacing()
    }

    /// `Σ_j c_j e_j`.
    pub fn from_modal(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.eigvecs * c
    }
}

/// Result of the intrinsic-dimension heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntrinsicDim {
    pub k: usize,
    /// No stored eigenvalue met the threshold; `k` is the number of stored modes.
    pub saturated: bool,
}

/// `K = min{k : α_k / α_1 < ε}` over the given non-increasing spectrum.
pub fn select_intrinsic_dim(eigvals: &[f64], threshold: f64) -> Result<IntrinsicDim> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let first = *eigvals.first().ok_or_else(|| invalid("empty eigen-system"))?;
    match eigvals.iter().position(|a| a / first < threshold) {
        Some(idx) => Ok(IntrinsicDim {
            k: idx + 1,
            saturated: false,
        }),
        None => Ok(IntrinsicDim {
            k: eigvals.len(),
            saturated: true,
        }),
    }
}

/// Prior `N(u0, C0^K(λ))` with a fixed eigen-system and intrinsic dimension.
#[derive(Debug, Clone)]
pub struct TruncatedPrior {
    eigsys: Arc<EigenSystem>,
    k: usize,
    u0: DVector<f64>,
    u0_modal: DVector<f64>,
}

impl TruncatedPrior {
    pub fn new(eigsys: Arc<EigenSystem>, k: usize, u0: DVector<f64>) -> Result<Self> {
        if k == 0 || k > eigsys.n_modes() {
            return Err(invalid(format!(
                "intrinsic dimension must lie in 1..={}, got {k}",
                eigsys.n_modes()
            )));
        }
        if u0.len() != eigsys.grid().n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "prior mean",
                expected: eigsys.grid().n_nodes(),
                got: u0.len(),
            });
        }
        let u0_modal = eigsys.to_modal(&u0);
        Ok(Self {
            eigsys,
            k,
            u0,
            u0_modal,
        })
    }

    /// Zero prior mean.
    pub fn centered(eigsys: Arc<EigenSystem>, k: usize) -> Result<Self> {
        let n = eigsys.grid().n_nodes();
        Self::new(eigsys, k, DVector::zeros(n))
    }

    /// Same eigen-system and `K`, new prior mean.
    pub fn with_mean(&self, u0: DVector<f64>) -> Result<Self> {
        Self::new(Arc::clone(&self.eigsys), self.k, u0)
    }

    pub fn eigsys(&self) -> &EigenSystem {
        &self.eigsys
    }

    pub fn shared_eigsys(&self) -> Arc<EigenSystem> {
        Arc::clone(&self.eigsys)
    }

    pub fn grid(&self) -> &Grid1D {
        self.eigsys.grid()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_modes(&self) -> usize {
        self.eigsys.n_modes()
    }

    pub fn u0(&self) -> &DVector<f64> {
        &self.u0
    }

    pub fn u0_modal(&self) -> &DVector<f64> {
        &self.u0_modal
    }

    /// Diagonal of `C0^K(λ)` in the eigen-basis.
    pub fn modal_variances(&self, lambda: f64) -> DVector<f64> {
        let k = self.k;
        DVector::from_fn(self.n_modes(), |j, _| {
            let a = self.eigsys.eigvals[j];
            if j < k {
                a / lambda
            } else {
                a
            }
        })
    }

    /// Diagonal of `C0^K(λ)^{-1}` in the eigen-basis.
    pub fn modal_precisions(&self, lambda: f64) -> DVector<f64> {
        self.modal_variances(lambda).map(|v| 1.0 / v)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("λ must be positive and finite, got {lambda}")))
    }
}

/// `<u, C0^K(λ)^{-1} u>`, the squared Cameron–Martin norm over the stored modes.
pub fn c0_lambda_inverse_quadratic(u: &DVector<f64>, prior: &TruncatedPrior, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let c = prior.eigsys().to_modal(u);
    let prec = prior.modal_precisions(lambda);
    Ok(c.iter().zip(prec.iter()).map(|(ci, pi)| pi * ci * ci).sum())
}

/// Prior draw built from caller-supplied standard normal variates `xi`.
pub fn sample_prior_with(prior: &TruncatedPrior, lambda: f64, xi: &[f64]) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    if xi.len() != prior.n_modes() {
        return Err(Error::DimensionMismatch {
            what: "standard normal draws",
            expected: prior.n_modes(),
            got: xi.len(),
        });
    }
    let sd = prior.modal_variances(lambda).map(f64::sqrt);
    let coeffs = DVector::from_fn(xi.len(), |j, _| sd[j] * xi[j]);
    Ok(prior.u0() + prior.eigsys().from_modal(&coeffs))
}

/// Seeded prior draw `u0 + Σ_j σ_j ξ_j e_j`.
pub fn sample_prior(prior: &TruncatedPrior, lambda: f64, seed: u64) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<f64> = (0..prior.n_modes()).map(|_| StandardNormal.sample(&mut rng)).collect();
    sample_prior_with(prior, lambda, &xi)
}
