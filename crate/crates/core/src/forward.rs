//! 1D Helmholtz forward model `v'' + κ²(1+q)v = u_s` with absorbing boundary
//! rows, point measurements, multi-frequency stacking into a real operator, and
//! synthetic data generation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;

/// Helmholtz inverse-source problem on a 1D grid.
#[derive(Debug, Clone)]
pub struct HelmholtzProblem {
    grid: Grid1D,
    q: DVector<f64>,
    wavenumbers: Vec<f64>,
    meas_points: Vec<usize>,
}

impl HelmholtzProblem {
    pub fn new(grid: Grid1D, q: DVector<f64>, wavenumbers: Vec<f64>, meas_points: Vec<usize>) -> Result<Self> {
        if q.len() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "medium perturbation q",
                expected: grid.n_nodes(),
                got: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("medium perturbation q"));
        }
        validate_wavenumbers(&wavenumbers)?;
        if meas_points.is_empty() {
            return Err(invalid("at least one measurement point is required"));
        }
        if let Some(&bad) = meas_points.iter().find(|&&i| i >= grid.n_nodes()) {
            return Err(invalid(format!(
                "measurement node {bad} outside a {}-node grid",
                grid.n_nodes()
            )));
        }
        Ok(Self {
            grid,
            q,
            wavenumbers,
            meas_points,
        })
    }

    /// Homogeneous medium (`q = 0`) with measurements at both endpoints.
    pub fn homogeneous_endpoints(grid: Grid1D, wavenumbers: Vec<f64>) -> Result<Self> {
        let n = grid.n_nodes();
        Self::new(grid, DVector::zeros(n), wavenumbers, vec![0, n - 1])
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn meas_points(&self) -> &[usize] {
        &self.meas_points
    }

    /// Same grid, medium and measurement points, restricted to other wavenumbers.
    pub fn with_wavenumbers(&self, wavenumbers: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, self.q.clone(), wavenumbers, self.meas_points.clone())
    }

    /// Same medium and measurement locations on another grid over the same interval.
    pub fn on_grid(&self, grid: Grid1D) -> Result<Self> {
        let q = crate::grid::project_between_grids(&self.q, &self.grid, &grid)?;
        let points = self
            .meas_points
            .iter()
            .map(|&i| grid.nearest_node(self.grid.node(i)))
            .collect();
        Self::new(grid, q, self.wavenumbers.clone(), points)
    }
}

pub(crate) fn validate_wavenumbers(k: &[f64]) -> Result<()> {
    if k.is_empty() {
        return Err(invalid("wavenumber list is empty"));
    }
    if k.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(invalid("wavenumbers must be positive and finite"));
    }
    if k.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("wavenumbers must be strictly increasing"));
    }
    Ok(())
}

/// Default 1D schedule `κ_j = j/2`, `j = 1..=100`.
pub fn default_wavenumbers() -> Vec<f64> {
    (1..=100).map(|j| j as f64 * 0.5).collect()
}

/// Tridiagonal system stored by diagonals: `sub[i] = A[i+1][i]`, `sup[i] = A[i][i+1]`.
#[derive(Debug, Clone)]
struct Tridiagonal {
    sub: Vec<Complex64>,
    diag: Vec<Complex64>,
    sup: Vec<Complex64>,
}

impl Tridiagonal {
    fn transpose(&self) -> Self {
        Self {
            sub: self.sup.clone(),
            diag: self.diag.clone(),
            sup: self.sub.clone(),
        }
    }

    /// Gaussian elimination with partial pivoting (the `gtsv` scheme).
    /// Returns `None` when a pivot vanishes.
    fn solve(&self, rhs: &[Complex64]) -> Option<Vec<Complex64>> {
        let n = self.diag.len();
        let mut dl = self.sub.clone();
        let mut d = self.diag.clone();
        let mut du = self.sup.clone();
        let mut b = rhs.to_vec();
        let scale = d
            .iter()
            .chain(dl.iter())
            .chain(du.iter())
            .fold(0.0f64, |m, z| m.max(z.norm()));
        let tiny = scale * 1e-14;

        for i in 0..n - 1 {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() <= tiny {
                    return None;
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] = b[i + 1] - fact * b[i];
                dl[i] = Complex64::new(0.0, 0.0);
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                } else {
                    dl[i] = Complex64::new(0.0, 0.0);
                }
                du[i] = temp;
                let bi = b[i];
                b[i] = b[i + 1];
                b[i + 1] = bi - fact * b[i + 1];
            }
        }
        if d[n - 1].norm() <= tiny {
            return None;
        }
        b[n - 1] /= d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - dl[i] * b[i + 2]) / d[i];
        }
        Some(b)
    }
}

/// Discrete operator for one wavenumber. Every row is scaled by `h²`; the two
/// one-sided boundary rows have been combined with their neighbours so that the
/// system stays tridiagonal. The matching right-hand side is `h² R s`, where `R`
/// copies `s_1` into row 0 and `s_{N-1}` into row `N`.
fn helmholtz_operator(problem: &HelmholtzProblem, kappa: f64) -> Tridiagonal {
    let n = problem.grid.n_nodes();
    let h = problem.grid.spacing();
    let kh2 = kappa * kappa * h * h;
    let q = &problem.q;
    let one = Complex64::new(1.0, 0.0);
    let mut sub = vec![one; n - 1];
    let mut diag = vec![Complex64::new(0.0, 0.0); n];
    let mut sup = vec![one; n - 1];
    for i in 1..n - 1 {
        diag[i] = Complex64::new(-2.0 + kh2 * (1.0 + q[i]), 0.0);
    }
    // v'(a) = -iκ v(a): (-3v0 + 4v1 - v2)/(2h) + iκ v0 = 0, minus row 1 to drop v2.
    diag[0] = Complex64::new(-2.0, 2.0 * kappa * h);
    sup[0] = Complex64::new(2.0 + kh2 * (1.0 + q[1]), 0.0);
    // v'(b) = iκ v(b): mirror image of the left row.
    diag[n - 1] = Complex64::new(-2.0, 2.0 * kappa * h);
    sub[n - 2] = Complex64::new(2.0 + kh2 * (1.0 + q[n - 2]), 0.0);
    Tridiagonal { sub, diag, sup }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("wavenumber must be positive, got {kappa}")))
    }
}

/// Solves the discrete Helmholtz equation for a real nodal source.
pub fn solve_helmholtz_1d(problem: &HelmholtzProblem, source: &DVector<f64>, kappa: f64) -> Result<Vec<Complex64>> {
    check_kappa(kappa)?;
    let n = problem.grid.n_nodes();
    if source.len() != n {
        return Err(Error::DimensionMismatch {
            what: "Helmholtz source",
            expected: n,
            got: source.len(),
        });
    }
    let h2 = problem.grid.spacing().powi(2);
    let mut rhs: Vec<Complex64> = source.iter().map(|&s| Complex64::new(h2 * s, 0.0)).collect();
    rhs[0] = Complex64::new(h2 * source[1], 0.0);
    rhs[n - 1] = Complex64::new(h2 * source[n - 2], 0.0);
    helmholtz_operator(problem, kappa)
        .solve(&rhs)
        .ok_or(Error::SingularSystem { kappa })
}

/// Part of a complex observation stored in a real data entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Re => "re",
            Part::Im => "im",
        }
    }
}

/// Provenance of one real data entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsLabel {
    pub kappa: f64,
    /// Grid node index of the measurement point.
    pub point: usize,
    pub part: Part,
}

/// Real stacked forward operator `H`.
///
/// `apply(u)` maps nodal source values to the stacked real/imaginary point
/// measurements; rows are ordered `(κ_1 re…, κ_1 im…, κ_2 re…, …)`.
#[derive(Debug, Clone)]
pub struct ForwardStack {
    grid: Grid1D,
    matrix: DMatrix<f64>,
    layout: Vec<ObsLabel>,
}

impl ForwardStack {
    /// Wraps an arbitrary real operator acting on nodal vectors of `grid`.
    /// Entries are labelled as real parts with `kappa = 0` and `point = row`.
    pub fn from_matrix(grid: Grid1D, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() != grid.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "forward matrix columns",
                expected: grid.n_nodes(),
                got: matrix.ncols(),
            });
        }
        let layout = (0..matrix.nrows())
            .map(|i| ObsLabel {
                kappa: 0.0,
                point: i,
                part: Part::Re,
            })
            .collect();
        Ok(Self { grid, matrix, layout })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn layout(&self) -> &[ObsLabel] {
        &self.layout
    }

    /// Real data length `N_d`.
    pub fn n_data(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of complex observations `N_m · N_f`.
    pub fn n_complex_obs(&self) -> usize {
        self.n_data() / 2
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    /// Adjoint under the grid inner product: `<Hu, d> = <u, H* d>_grid`.
    pub fn adjoint(&self, d: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(d) / self.grid.spacing()
    }

    /// Rows belonging to the given wavenumbers, in order.
    pub fn rows_for(&self, kappa: f64) -> Vec<usize> {
        self.layout
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kappa == kappa)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Row labels of the stacked operator of `problem`, without assembling it.
pub fn observation_layout(problem: &HelmholtzProblem) -> Vec<ObsLabel> {
    let mut layout = Vec::with_capacity(2 * problem.meas_points.len() * problem.wavenumbers.len());
    for &kappa in &problem.wavenumbers {
        for part in [Part::Re, Part::Im] {
            for &point in &problem.meas_points {
                layout.push(ObsLabel { kappa, point, part });
            }
        }
    }
    layout
}

/// Assembles `H = (H_{κ_1}; H_{κ_2}; …)` row by row. Each measurement row
/// `e_m^T A^{-1} R` is obtained from one transposed tridiagonal solve.
pub fn assemble_forward_stack(problem: &HelmholtzProblem) -> Result<ForwardStack> {
    let n = problem.grid.n_nodes();
    let h2 = problem.grid.spacing().powi(2);
    let n_m = problem.meas_points.len();
    let n_rows = 2 * n_m * problem.wavenumbers.len();
    let mut matrix = DMatrix::zeros(n_rows, n);

    for (f, &kappa) in problem.wavenumbers.iter().enumerate() {
        let op_t = helmholtz_operator(problem, kappa).transpose();
        let base = 2 * n_m * f;
        for (p, &node) in problem.meas_points.iter().enumerate() {
            let mut unit = vec![Complex64::new(0.0, 0.0); n];
            unit[node] = Complex64::new(1.0, 0.0);
            let g = op_t.solve(&unit).ok_or(Error::SingularSystem { kappa })?;
            // row = h² R^T g
            let mut row = vec![Complex64::new(0.0, 0.0); n];
            for j in 1..n - 1 {
                row[j] = g[j] * h2;
            }
            row[1] += g[0] * h2;
            row[n - 2] += g[n - 1] * h2;
            for (j, z) in row.iter().enumerate() {
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::NonFinite("forward stack"));
                }
                matrix[(base + p, j)] = z.re;
                matrix[(base + n_m + p, j)] = z.im;
            }
        }
    }
    Ok(ForwardStack {
        grid: problem.grid,
        matrix,
        layout: observation_layout(problem),
    })
}

/// Measurement noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// `d = d† + σξ`, `ξ ~ N(0, 1)` per real entry.
    Gaussian { sigma: f64 },
    /// With probability `rate`, `d_i = d†_i + magnitude·ξ`, `ξ ~ U[-1, 1]`.
    Impulsive { rate: f64, magnitude: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(invalid(format!("noise σ must be non-negative, got {sigma}")))
            }
            NoiseSpec::Impulsive { rate, magnitude } if !((0.0..=1.0).contains(&rate) && magnitude >= 0.0) => {
                Err(invalid(format!(
                    "impulsive noise needs 0 ≤ r ≤ 1 and ε ≥ 0, got r={rate}, ε={magnitude}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Clean and noisy data with the corruption mask.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub clean: DVector<f64>,
    pub noisy: DVector<f64>,
    /// Entries touched by impulsive noise; all `false` for Gaussian noise.
    pub corrupted: Vec<bool>,
}

/// Adds seeded noise to already computed clean data.
pub fn add_noise(clean: &DVector<f64>, noise: &NoiseSpec, seed: u64) -> Result<SyntheticData> {
    add_noise_scaled(clean, noise, &DVector::from_element(clean.len(), 1.0), seed)
}

/// As [`add_noise`], with `σ` (or the corruption magnitude) multiplied by
/// `scales[i]` for entry `i`.
pub fn add_noise_scaled(
    clean: &DVector<f64>,
    noise: &NoiseSpec,
    scales: &DVector<f64>,
    seed: u64,
) -> Result<SyntheticData> {
    noise.validate()?;
    if scales.len() != clean.len() {
        return Err(Error::DimensionMismatch {
            what: "noise scales",
            expected: clean.len(),
            got: scales.len(),
        });
    }
    if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(invalid("noise scales must be non-negative and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = clean.clone();
    let mut corrupted = vec![false; clean.len()];
    match *noise {
        NoiseSpec::Gaussian { sigma } => {
            for (v, s) in noisy.iter_mut().zip(scales.iter()) {
                let xi: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * s * xi;
            }
        }
        NoiseSpec::Impulsive { rate, magnitude } => {
            for ((v, flag), s) in noisy.iter_mut().zip(corrupted.iter_mut()).zip(scales.iter()) {
                let hit = rng.random::<f64>() < rate;
                let xi = rng.random_range(-1.0..=1.0);
                if hit {
                    *v += magnitude * s * xi;
                    *flag = true;
                }
            }
        }
    }
    Ok(SyntheticData {
        clean: clean.clone(),
        noisy,
        corrupted,
    })
}

/// `d = H u_true + noise`, with `truth` on the stack's (generation) grid.
pub fn generate_data(
    stack: &ForwardStack,
    truth: &DVector<f64>,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<SyntheticData> {
    if truth.len() != stack.grid().n_nodes() {
        return Err(Error::DimensionMismatch {
            what: "ground truth",
            expected: stack.grid().n_nodes(),
            got: truth.len(),
        });
    }
    add_noise(&stack.apply(truth), noise, seed)
}

/// Largest absolute entry; converts a relative noise level into an absolute one.
pub fn data_magnitude_scale(d: &DVector<f64>) -> Result<f64> {
    if d.is_empty() {
        return Err(invalid("data vector is empty"));
    }
    Ok(d.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dense(t: &Tridiagonal) -> DMatrix<Complex64> {
        let n = t.diag.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = t.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = t.sub[i];
                m[(i, i + 1)] = t.sup[i];
            }
        }
        m
    }

    #[test]
    fn pivoted_tridiagonal_solve_matches_dense() {
        let grid = Grid1D::unit(41).unwrap();
        let problem = HelmholtzProblem::homogeneous_endpoints(grid, vec![30.0]).unwrap();
        let op = helmholtz_operator(&problem, 30.0);
        let rhs: Vec<Complex64> = (0..41)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let x = op.solve(&rhs).unwrap();
        let residual = dense(&op) * DVector::from_vec(x.clone()) - DVector::from_vec(rhs);
        assert!(residual.iter().all(|z| z.norm() < 1e-11));
        let xt = op.transpose().solve(&[Complex64::new(1.0, 0.0); 41]).unwrap();
        let rt = dense(&op).transpose() * DVector::from_vec(xt) - DVector::from_element(41, Complex64::new(1.0, 0.0));
        assert!(rt.iter().all(|z| z.norm() < 1e-11));
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let grid = Grid1D::unit(50).unwrap();
        let problem = HelmholtzProblem::homogeneous_endpoints(grid, vec![3.0]).unwrap();
        let v = solve_helmholtz_1d(&problem, &DVector::zeros(50), 3.0).unwrap();
        assert!(v.iter().all(|z| z.norm() == 0.0));
        assert!(solve_helmholtz_1d(&problem, &DVector::zeros(50), 0.0).is_err());
    }

    #[test]
    fn solve_is_linear() {
        let grid = Grid1D::unit(120).unwrap();
        let problem = HelmholtzProblem::homogeneous_endpoints(grid, vec![7.5]).unwrap();
        let a = grid.sample(|x| (-100.0 * (x - 0.3).powi(2)).exp());
        let b = grid.sample(|x| x * (1.0 - x) * (9.0 * x).cos());
        let va = solve_helmholtz_1d(&problem, &a, 7.5).unwrap();
        let vb = solve_helmholtz_1d(&problem, &b, 7.5).unwrap();
        let vab = solve_helmholtz_1d(&problem, &(&a + &b), 7.5).unwrap();
        let scale = vab.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for i in 0..120 {
            assert!((vab[i] - va[i] - vb[i]).norm() <= 1e-10 * scale);
        }
    }

    fn green_error(n: usize, kappa: f64, x0: f64) -> (f64, f64) {
        let grid = Grid1D::unit(n).unwrap();
        let problem = HelmholtzProblem::homogeneous_endpoints(grid, vec![kappa]).unwrap();
        let i0 = grid.nearest_node(x0);
        let mut src = DVector::zeros(n);
        src[i0] = 1.0 / grid.spacing();
        let v = solve_helmholtz_1d(&problem, &src, kappa).unwrap();
        let err = (0..n)
            .map(|i| {
                let r = (grid.node(i) - x0).abs();
                let exact = Complex64::new(0.0, kappa * r).exp() / Complex64::new(0.0, 2.0 * kappa);
                (v[i] - exact).norm()
            })
            .fold(0.0, f64::max);
        (grid.spacing(), err)
    }

    #[test]
    fn point_source_matches_free_space_green_function() {
        let kappa = 4.0;
        let results: Vec<(f64, f64)> = [81, 161, 321, 641]
            .iter()
            .map(|&n| green_error(n, kappa, 0.25))
            .collect();
        let (h, err) = results[3];
        assert!(err < 2.0 * (h * h + kappa * kappa * h * h), "error {err}");
        for w in results.windows(2) {
            let order = (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln();
            assert!(order >= 1.8, "observed order {order}");
        }
    }

    #[test]
    fn stack_reproduces_direct_solves_and_adjoint() {
        let grid = Grid1D::unit(60).unwrap();
        let q = grid.sample(|x| 0.2 * (3.0 * x).sin());
        let problem = HelmholtzProblem::new(grid, q, vec![0.5, 2.0, 6.5], vec![0, 30, 59]).unwrap();
        let stack = assemble_forward_stack(&problem).unwrap();
        assert_eq!(stack.n_data(), 18);
        assert_eq!(stack.n_complex_obs(), 9);
        assert!(stack.apply(&DVector::zeros(60)).iter().all(|&v| v == 0.0));

        let u = grid.sample(|x| (-50.0 * (x - 0.45).powi(2)).exp() + x);
        let hu = stack.apply(&u);
        for (f, &kappa) in problem.wavenumbers().iter().enumerate() {
            let v = solve_helmholtz_1d(&problem, &u, kappa).unwrap();
            for (p, &node) in problem.meas_points().iter().enumerate() {
                let re = hu[6 * f + p];
                let im = hu[6 * f + 3 + p];
                let scale = v[node].norm().max(1e-300);
                assert!((re - v[node].re).abs() <= 1e-10 * scale);
                assert!((im - v[node].im).abs() <= 1e-10 * scale);
            }
        }
        // columns against a direct solve of a single nodal source
        let mut unit = DVector::zeros(60);
        unit[17] = 1.0;
        let col = stack.apply(&unit);
        let v = solve_helmholtz_1d(&problem, &unit, 2.0).unwrap();
        assert_relative_eq!(col[6], v[0].re, max_relative = 1e-10);

        let d = DVector::from_fn(18, |i, _| (i as f64 * 1.7).sin());
        let lhs = stack.apply(&u).dot(&d);
        let rhs = grid.inner(&u, &stack.adjoint(&d));
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        assert_eq!(stack.layout()[3].part, Part::Im);
        assert_eq!(stack.rows_for(6.5), (12..18).collect::<Vec<_>>());
    }

    #[test]
    fn stack_is_finite_for_default_schedule() {
        let grid = Grid1D::unit(200).unwrap();
        let problem = HelmholtzProblem::homogeneous_endpoints(grid, default_wavenumbers()).unwrap();
        let stack = assemble_forward_stack(&problem).unwrap();
        assert_eq!(stack.n_data(), 400);
        assert!(stack.matrix().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn problem_validation() {
        let grid = Grid1D::unit(10).unwrap();
        assert!(HelmholtzProblem::homogeneous_endpoints(grid, vec![]).is_err());
        assert!(HelmholtzProblem::homogeneous_endpoints(grid, vec![2.0, 1.0]).is_err());
        assert!(HelmholtzProblem::homogeneous_endpoints(grid, vec![-1.0]).is_err());
        assert!(HelmholtzProblem::new(grid, DVector::zeros(10), vec![1.0], vec![10]).is_err());
    }

    #[test]
    fn noise_limits() {
        let clean = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.05]);
        let d = add_noise(&clean, &NoiseSpec::Gaussian { sigma: 0.0 }, 1).unwrap();
        assert_eq!(d.noisy, clean);
        let d = add_noise(
            &clean,
            &NoiseSpec::Impulsive {
                rate: 0.0,
                magnitude: 0.1,
            },
            1,
        )
        .unwrap();
        assert_eq!(d.noisy, clean);
        assert!(d.corrupted.iter().all(|c| !c));
        assert!(add_noise(
            &clean,
            &NoiseSpec::Impulsive {
                rate: 1.5,
                magnitude: 0.1
            },
            1
        )
        .is_err());
        assert!(add_noise(&clean, &NoiseSpec::Gaussian { sigma: -1.0 }, 1).is_err());
    }

    #[test]
    fn full_corruption_is_bounded_and_flagged() {
        let clean = DVector::from_fn(500, |i, _| (i as f64).cos());
        let d = add_noise(
            &clean,
            &NoiseSpec::Impulsive {
                rate: 1.0,
                magnitude: 0.1,
            },
            9,
        )
        .unwrap();
        assert!(d.corrupted.iter().all(|&c| c));
        assert!((&d.noisy - &clean).amax() <= 0.1);
        let again = add_noise(
            &clean,
            &NoiseSpec::Impulsive {
                rate: 1.0,
                magnitude: 0.1,
            },
            9,
        )
        .unwrap();
        assert_eq!(d.noisy, again.noisy);
    }

    #[test]
    fn magnitude_scale() {
        assert!(data_magnitude_scale(&DVector::zeros(0)).is_err());
        assert_eq!(data_magnitude_scale(&DVector::zeros(3)).unwrap(), 0.0);
        let d = DVector::from_vec(vec![1.0, -3.0, 2.0]);
        assert_eq!(data_magnitude_scale(&d).unwrap(), 3.0);
        assert_eq!(data_magnitude_scale(&(&d * -2.5)).unwrap(), 7.5);
    }

    #[test]
    fn scaled_noise_matches_unscaled_draws() {
        let clean = DVector::from_fn(40, |i, _| (i as f64 * 0.3).sin());
        let noise = NoiseSpec::Gaussian { sigma: 0.1 };
        let base = add_noise(&clean, &noise, 4).unwrap();
        let scales = DVector::from_fn(40, |i, _| if i < 20 { 2.0 } else { 0.0 });
        let scaled = add_noise_scaled(&clean, &noise, &scales, 4).unwrap();
        for i in 0..40 {
            let expected = clean[i] + scales[i] * (base.noisy[i] - clean[i]);
            assert!((scaled.noisy[i] - expected).abs() < 1e-15);
        }
        assert!(add_noise_scaled(&clean, &noise, &DVector::zeros(3), 4).is_err());
        assert!(add_noise_scaled(&clean, &noise, &DVector::from_element(40, -1.0), 4).is_err());
    }
}
