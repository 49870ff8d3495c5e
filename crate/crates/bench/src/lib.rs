//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use fieldvb::config::two_bumps;
use fieldvb::forward::{assemble_forward_stack, generate_data, ForwardStack, HelmholtzProblem, NoiseSpec};
use fieldvb::nalgebra::DVector;
use fieldvb::prior::{select_intrinsic_dim, EigenSystem, TruncatedPrior};
use fieldvb::{Grid1D, Result};

/// Endpoint-measured problem with `n_kappa` wavenumbers `0.5, 1, …`.
pub fn problem(n_nodes: usize, n_kappa: usize) -> Result<HelmholtzProblem> {
    let kappas = (1..=n_kappa).map(|j| 0.5 * j as f64).collect();
    HelmholtzProblem::homogeneous_endpoints(Grid1D::unit(n_nodes)?, kappas)
}

pub struct Fixture {
    pub stack: ForwardStack,
    pub prior: TruncatedPrior,
    pub data: DVector<f64>,
}

/// Two-bump truth, data with the given noise, `p = 1` prior at `ε = 1e-3`.
pub fn fixture(n_nodes: usize, n_kappa: usize, noise: NoiseSpec) -> Result<Fixture> {
    let stack = assemble_forward_stack(&problem(n_nodes, n_kappa)?)?;
    let truth = stack.grid().sample(two_bumps);
    let data = generate_data(&stack, &truth, &noise, 1)?.noisy;
    let eigsys = Arc::new(EigenSystem::full(stack.grid(), 1)?);
    let k = select_intrinsic_dim(eigsys.eigvals().as_slice(), 1e-3)?.k;
    let prior = TruncatedPrior::centered(eigsys, k)?;
    Ok(Fixture { stack, prior, data })
}
