//! High-accuracy single-process solve of the assembled objective, used to
//! measure gaps and distances.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saa::SaaProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptions {
    /// Target is `rel_tol·(1 + ‖∇F(x₀)‖)` on the gradient norm.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-12, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
    pub tolerance: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_star)
    }
}

/// Damped Newton with exact full Hessians and Armijo backtracking, switching
/// to pure steps once the Newton decrement is small.
pub fn reference_solve(problem: &SaaProblem, x0: &DVector<f64>, opts: ReferenceOptions) -> Result<ReferenceSolution> {
    if problem.strong_convexity() <= 0.0 {
        return Err(Error::NotStronglyConvex);
    }
    let mut x = x0.clone();
    let mut g = problem.gradient(&x)?;
    let tolerance = opts.rel_tol * (1.0 + g.norm());
    let mut f = problem.objective(&x)?;
    let mut best = (g.norm(), x.clone(), f);
    for it in 0..opts.max_iter {
        if g.norm() <= tolerance {
            return Ok(ReferenceSolution {
                x_star: x.as_slice().to_vec(),
                f_star: f,
                grad_norm: g.norm(),
                tolerance,
                iterations: it,
            });
        }
        let h = problem.hessian(&x)?;
        let chol = h.cholesky().ok_or(Error::NotStronglyConvex)?;
        let dir = -chol.solve(&g);
        let decrement = -g.dot(&dir);
        let mut step = 1.0;
        if decrement > 1e-8 {
            loop {
                let trial = &x + &dir * step;
                let ft = problem.objective(&trial)?;
                if ft <= f - 0.25 * step * decrement || step < 1e-10 {
                    break;
                }
                step *= 0.5;
            }
        }
        x += &dir * step;
        g = problem.gradient(&x)?;
        f = problem.objective(&x)?;
        if g.norm() < best.0 {
            best = (g.norm(), x.clone(), f);
        }
    }
    let (gn, x, f) = best;
    if gn <= tolerance {
        return Ok(ReferenceSolution {
            x_star: x.as_slice().to_vec(),
            f_star: f,
            grad_norm: gn,
            tolerance,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NonConvergence(opts.max_iter))
}
