//! Brute-force reference computations used to cross-check the closed-form
//! updates: dense conjugate posteriors, 1D quadrature on `(0, ∞)`, KL scans
//! over parameter grids and Monte-Carlo averages.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;

/// Noise precision of a linear-Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePrecision {
    Scalar(f64),
    Diagonal(DVector<f64>),
}

/// Posterior of `u ~ N(m0, Σ0)`, `d = H u + ε`, `ε ~ N(0, W^{-1})` by dense
/// precision assembly: `Σ = (HᵀWH + Σ0^{-1})^{-1}`, `m = Σ(HᵀWd + Σ0^{-1}m0)`.
pub fn exact_gaussian_posterior(
    h: &DMatrix<f64>,
    d: &DVector<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    noise_prec: &NoisePrecision,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = prior_mean.len();
    if prior_cov.shape() != (n, n) || h.ncols() != n || h.nrows() != d.len() {
        return Err(invalid("inconsistent dimensions in dense posterior"));
    }
    if n > 256 {
        return Err(invalid(format!("dense posterior limited to 256 unknowns, got {n}")));
    }
    let w = match noise_prec {
        NoisePrecision::Scalar(t) => DVector::from_element(d.len(), *t),
        NoisePrecision::Diagonal(w) if w.len() == d.len() => w.clone(),
        NoisePrecision::Diagonal(w) => {
            return Err(Error::DimensionMismatch {
                what: "noise precision",
                expected: d.len(),
                got: w.len(),
            })
        }
    };
    let prior_prec = prior_cov
        .clone()
        .cholesky()
        .ok_or(Error::IndefinitePrecision { min_pivot: f64::NAN })?
        .inverse();
    let mut wh = h.clone();
    for (mut row, wi) in wh.row_iter_mut().zip(w.iter()) {
        row *= *wi;
    }
    let precision = h.transpose() * &wh + &prior_prec;
    let rhs = wh.transpose() * d + &prior_prec * prior_mean;
    let chol = precision.clone().cholesky().ok_or_else(|| Error::IndefinitePrecision {
        min_pivot: precision.symmetric_eigenvalues().min(),
    })?;
    Ok((chol.solve(&rhs), chol.inverse()))
}

/// Eigenpairs of the dense interior matrix `(Id − Δ_h)^{-p}` from a symmetric
/// eigensolve, sorted by decreasing eigenvalue. Eigenvectors are scaled to
/// unit grid norm `h Σ v_i² = 1`.
pub fn dense_prior_eigenpairs(grid: &Grid1D, p: u32) -> (DVector<f64>, DMatrix<f64>) {
    let n = grid.n_interior();
    let h2 = grid.spacing().powi(2);
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + 2.0 / h2
        } else if i.abs_diff(j) == 1 {
            -1.0 / h2
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let scale = 1.0 / grid.spacing().sqrt();
    let vals = DVector::from_fn(n, |j, _| eig.eigenvalues[order[j]].powi(-(p as i32)));
    let vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])] * scale);
    (vals, vecs)
}

/// Nodal covariance of `N(·, C0^K(λ))` on interior nodes, built from
/// [`dense_prior_eigenpairs`].
pub fn dense_truncated_prior_covariance(grid: &Grid1D, p: u32, k: usize, lambda: f64) -> DMatrix<f64> {
    let (vals, vecs) = dense_prior_eigenpairs(grid, p);
    let scaled = DVector::from_fn(vals.len(), |j, _| if j < k { vals[j] / lambda } else { vals[j] });
    &vecs * DMatrix::from_diagonal(&scaled) * vecs.transpose()
}

/// Trapezoid rule on `x = e^t`. Weights include the Jacobian `e^t`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn n_points(&self) -> usize {
        self.nodes.len()
    }

    /// Uniform trapezoid rule with `n_points ≥ 2` on `t ∈ [t_lo, t_hi]`.
    pub fn log_trapezoid(t_lo: f64, t_hi: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !(t_hi > t_lo) {
            return Err(invalid("quadrature needs at least two points on a non-empty interval"));
        }
        let dt = (t_hi - t_lo) / (n_points - 1) as f64;
        let mut nodes = Vec::with_capacity(n_points);
        let mut weights = Vec::with_capacity(n_points);
        for i in 0..n_points {
            let x = (t_lo + dt * i as f64).exp();
            let end = i == 0 || i + 1 == n_points;
            nodes.push(x);
            weights.push(if end { 0.5 } else { 1.0 } * dt * x);
        }
        Ok(Self { nodes, weights })
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

const LN_TRUNCATION: f64 = -690.7755278982137; // ln(1e-300)
const T_PEAK_SCAN: (f64, f64, f64) = (-100.0, 100.0, 0.01);
const T_LIMIT: f64 = 700.0;

/// `t`-interval where `ln ρ(e^t) + t` lies within `ln 1e-300` of its maximum,
/// together with that maximum.
fn effective_range(log_integrand_t: &dyn Fn(f64) -> f64) -> Result<(f64, f64, f64)> {
    let (lo, hi, step) = T_PEAK_SCAN;
    let n = ((hi - lo) / step) as usize + 1;
    let (mut t_peak, mut peak) = (f64::NAN, f64::NEG_INFINITY);
    for i in 0..n {
        let t = lo + step * i as f64;
        let v = log_integrand_t(t);
        if v.is_finite() && v > peak {
            (t_peak, peak) = (t, v);
        }
    }
    if !peak.is_finite() {
        return Err(Error::NonFinite("quadrature density"));
    }
    if t_peak <= lo || t_peak >= hi {
        return Err(invalid("density peak lies outside the quadrature scan window"));
    }
    let walk = |dir: f64| -> Result<f64> {
        let mut delta = step;
        loop {
            let t = t_peak + dir * delta;
            if t.abs() > T_LIMIT {
                return Err(invalid("density mass reaches the edge of the quadrature window"));
            }
            let v = log_integrand_t(t);
            if v.is_nan() || v - peak < LN_TRUNCATION {
                return Ok(t);
            }
            delta *= 1.25;
        }
    };
    Ok((walk(-1.0)?, walk(1.0)?, peak))
}

/// `∫_0^∞ x^power ρ(x) dx` up to the factor `exp(shift)`; returns `(value, shift)`.
fn scaled_integral(log_density: &dyn Fn(f64) -> f64, power: i32) -> Result<(f64, f64)> {
    let g = |t: f64| log_density(t.exp()) + (power as f64 + 1.0) * t;
    let (t_lo, t_hi, peak) = effective_range(&g)?;
    let mut previous = f64::NAN;
    let mut n = 65;
    while n <= (1 << 22) + 1 {
        let dt = (t_hi - t_lo) / (n - 1) as f64;
        let mut sum = 0.0;
        for i in 0..n {
            let v = (g(t_lo + dt * i as f64) - peak).exp();
            sum += if i == 0 || i + 1 == n { 0.5 * v } else { v };
        }
        let current = sum * dt;
        if (current - previous).abs() <= 1e-13 * current.abs() {
            return Ok((current, peak));
        }
        previous = current;
        n = 2 * n - 1;
    }
    Err(Error::QuadratureNotConverged {
        previous,
        current: previous,
    })
}

/// `∫x^power ρ / ∫ρ` for an unnormalised density on `(0, ∞)` given by its log.
pub fn quadrature_moment(log_density: &dyn Fn(f64) -> f64, power: i32) -> Result<f64> {
    let (num, s_num) = scaled_integral(log_density, power)?;
    let (den, s_den) = scaled_integral(log_density, 0)?;
    let value = num / den * (s_num - s_den).exp();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("quadrature moment"))
    }
}

/// `ln ∫_0^∞ ρ(x) dx`.
pub fn quadrature_log_normalizer(log_density: &dyn Fn(f64) -> f64) -> Result<f64> {
    let (v, shift) = scaled_integral(log_density, 0)?;
    Ok(v.ln() + shift)
}

/// Unnormalised `Gamma(shape, rate)` log-density.
pub fn gamma_log_density(shape: f64, rate: f64) -> impl Fn(f64) -> f64 {
    move |x| (shape - 1.0) * x.ln() - rate * x
}

/// Unnormalised `IG(mean, shape)` log-density.
pub fn inverse_gaussian_log_density(mean: f64, shape: f64) -> impl Fn(f64) -> f64 {
    move |x| -1.5 * x.ln() - shape * (x - mean).powi(2) / (2.0 * mean * mean * x)
}

/// Scalar families scanned by [`grid_kl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFamily {
    Gaussian { mean: f64, var: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl ScalarFamily {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            ScalarFamily::Gaussian { mean, var } => {
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
            }
            ScalarFamily::Gamma { shape, rate } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
                }
            }
        }
    }

    fn rule(&self) -> Result<QuadratureRule> {
        match *self {
            ScalarFamily::Gaussian { mean, var } => {
                let sd = var.sqrt();
                let n = 4001;
                let (lo, hi) = (mean - 14.0 * sd, mean + 14.0 * sd);
                let dx = (hi - lo) / (n - 1) as f64;
                let nodes: Vec<f64> = (0..n).map(|i| lo + dx * i as f64).collect();
                let weights = (0..n)
                    .map(|i| if i == 0 || i + 1 == n { 0.5 * dx } else { dx })
                    .collect();
                Ok(QuadratureRule { nodes, weights })
            }
            ScalarFamily::Gamma { .. } => {
                let g = |t: f64| self.ln_pdf(t.exp()) + t;
                let (lo, hi, _) = effective_range(&g)?;
                QuadratureRule::log_trapezoid(lo, hi, 20001)
            }
        }
    }

    /// `KL(q ‖ p̃) = E_q[ln q − ln p̃]` for an unnormalised target `p̃`.
    pub fn kl_to(&self, target_log_density: &dyn Fn(f64) -> f64) -> Result<f64> {
        let rule = self.rule()?;
        let value = rule.integrate(|x| {
            let lq = self.ln_pdf(x);
            if lq < LN_TRUNCATION {
                0.0
            } else {
                lq.exp() * (lq - target_log_density(x))
            }
        });
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite("KL scan"))
        }
    }
}

/// Best member of `candidates` in `KL(q ‖ target)`; returns its index and KL
/// value (up to the target's unknown log normaliser).
pub fn grid_kl(target_log_density: &dyn Fn(f64) -> f64, candidates: &[ScalarFamily]) -> Result<(usize, f64)> {
    let mut best = None;
    for (i, q) in candidates.iter().enumerate() {
        let kl = q.kl_to(target_log_density)?;
        if best.is_none_or(|(_, b)| kl < b) {
            best = Some((i, kl));
        }
    }
    best.ok_or_else(|| invalid("empty candidate grid"))
}

/// `n × n` Cartesian grid over `[a_lo, a_hi] × [b_lo, b_hi]`.
pub fn parameter_grid_2d(a: (f64, f64), b: (f64, f64), n: usize) -> Vec<(f64, f64)> {
    let lin = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64;
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (lin(a, i), lin(b, j))))
        .collect()
}

/// Sample mean and standard error of `f` over `n` seeded draws.
pub fn monte_carlo_mean(n: usize, seed: u64, mut f: impl FnMut(&mut ChaCha8Rng) -> f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let x = f(&mut rng);
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, (var / n as f64).sqrt())
}

/// Central differences `(f(x + εe_i) − f(x − εe_i)) / 2ε`.
pub fn finite_difference_gradient(
    f: impl Fn(&DVector<f64>) -> Result<f64>,
    x: &DVector<f64>,
    eps: f64,
) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + eps;
        let fp = f(&xp)?;
        xp[i] = xi - eps;
        let fm = f(&xp)?;
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(g)
}
