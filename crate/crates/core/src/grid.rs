//! Uniform one-dimensional grids and the grid inner product.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A uniform grid on `[a, b]` with `n_nodes` nodes, boundary nodes included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_nodes: usize,
    a: f64,
    b: f64,
}

impl Grid1D {
    pub fn new(n_nodes: usize, a: f64, b: f64) -> Result<Self> {
        if n_nodes < 3 {
            return Err(invalid(format!("grid needs at least 3 nodes, got {n_nodes}")));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(invalid(format!("grid interval [{a}, {b}] is empty or not finite")));
        }
        Ok(Self { n_nodes, a, b })
    }

    /// Grid on the unit interval.
    pub fn unit(n_nodes: usize) -> Result<Self> {
        Self::new(n_nodes, 0.0, 1.0)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_interior(&self) -> usize {
        self.n_nodes - 2
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.b
        } else {
            self.a + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> DVector<f64> {
        DVector::from_fn(self.n_nodes, |i, _| self.node(i))
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_fn(self.n_nodes, |i, _| f(self.node(i)))
    }

    /// `<u, v> = h * sum_i u_i v_i`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.spacing() * u.dot(v)
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// Index of the node closest to `x`, clamped to the grid.
    pub fn nearest_node(&self, x: f64) -> usize {
        let t = ((x - self.a) / self.spacing()).round();
        t.clamp(0.0, (self.n_nodes - 1) as f64) as usize
    }

    pub fn same_interval(&self, other: &Grid1D) -> bool {
        let tol = 1e-12 * (self.b - self.a).abs().max(1.0);
        (self.a - other.a).abs() <= tol && (self.b - other.b).abs() <= tol
    }

    /// Piecewise-linear interpolation of nodal values at `x`.
    pub fn interpolate_at(&self, values: &DVector<f64>, x: f64) -> f64 {
        let h = self.spacing();
        let t = ((x - self.a) / h).clamp(0.0, (self.n_nodes - 1) as f64);
        let i = (t.floor() as usize).min(self.n_nodes - 2);
        let frac = t - i as f64;
        (1.0 - frac) * values[i] + frac * values[i + 1]
    }
}

/// Linear interpolation of nodal values from one grid onto another over the same interval.
pub fn project_between_grids(u: &DVector<f64>, from: &Grid1D, to: &Grid1D) -> Result<DVector<f64>> {
    if u.len() != from.n_nodes() {
        return Err(crate::Error::DimensionMismatch {
            what: "projected vector",
            expected: from.n_nodes(),
            got: u.len(),
        });
    }
    if !from.same_interval(to) {
        return Err(invalid(format!(
            "grids cover different intervals: [{}, {}] vs [{}, {}]",
            from.a(),
            from.b(),
            to.a(),
            to.b()
        )));
    }
    if from == to {
        return Ok(u.clone());
    }
    Ok(DVector::from_fn(to.n_nodes(), |i, _| {
        from.interpolate_at(u, to.node(i))
    }))
}
