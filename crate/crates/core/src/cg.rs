//! Matrix-free (preconditioned) conjugate gradients.

use nalgebra::DVector;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Final `‖A x − b‖ / ‖b‖`.
    pub relative_residual: f64,
}

/// SPD approximation of `A^{-1}` applied to a vector.
pub type Preconditioner<'a> = dyn Fn(&DVector<f64>) -> DVector<f64> + 'a;

/// Solves `A x = b` for symmetric positive definite `A` given only its action.
///
/// Stops once `‖A x − b‖ ≤ tol·‖b‖`. `precond`, when given, applies an SPD
/// approximation of `A^{-1}`.
pub fn cg_solve<A>(
    matvec: A,
    rhs: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    precond: Option<&Preconditioner<'_>>,
) -> Result<CgSolution>
where
    A: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(tol > 0.0) {
        return Err(invalid(format!("CG tolerance must be positive, got {tol}")));
    }
    let b_norm = rhs.norm();
    let mut x = DVector::zeros(rhs.len());
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let apply_precond = |r: &DVector<f64>| match precond {
        Some(m) => m(r),
        None => r.clone(),
    };

    let mut r = rhs.clone();
    let mut z = apply_precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=max_iter {
        let ap = matvec(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::NonFinite("CG curvature (operator not SPD)"));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rel = r.norm() / b_norm;
        if rel <= tol {
            return Ok(CgSolution {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        z = apply_precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        residual: r.norm() / b_norm,
    })
}
