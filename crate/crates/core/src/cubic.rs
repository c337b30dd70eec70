//! Exact solvers for the two inner problems of the accelerated method.
//!
//! * The cubic model step `min_h ⟨g,h⟩ + ½⟨Hh,h⟩ + (M/6)‖h‖³` for PSD `H`,
//!   solved through one eigendecomposition and a safeguarded scalar root
//!   find on the secular function.
//! * The estimate-sequence minimizer `min_h ⟨s,h⟩ + a‖h‖² + b‖h‖³`, which
//!   has a closed form along `−s/‖s‖`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DIM: usize = 512;
/// Asymmetry tolerated before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Eigenvalues in `[−CLAMP_TOL, 0)` are treated as roundoff and clamped.
pub const CLAMP_TOL: f64 = 1e-10;
const ROOT_RTOL: f64 = 1e-12;
const ROOT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenFactorization {
    /// Orthonormal eigenvectors, one per column.
    pub q: DMatrix<f64>,
    /// Eigenvalues in ascending order.
    pub lambda: DVector<f64>,
}

impl EigenFactorization {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.q * DMatrix::from_diagonal(&self.lambda) * self.q.transpose()
    }
}

pub fn sym_eig(h: &DMatrix<f64>) -> Result<EigenFactorization> {
    sym_eig_limited(h, DEFAULT_MAX_DIM)
}

pub fn sym_eig_limited(h: &DMatrix<f64>, max_dim: usize) -> Result<EigenFactorization> {
    let d = h.nrows();
    if h.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: h.ncols() });
    }
    if d > max_dim {
        return Err(Error::DimensionTooLarge { dim: d, limit: max_dim });
    }
    if d == 0 {
        return Ok(EigenFactorization { q: DMatrix::zeros(0, 0), lambda: DVector::zeros(0) });
    }
    let asym = (h - h.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::NonSymmetric(asym));
    }
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambda = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut q = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        q.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok(EigenFactorization { q, lambda })
}

/// `min_h ⟨g,h⟩ + ½⟨Hh,h⟩ + (M/6)‖h‖³`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSubproblem {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    /// Cubic weight. Zero is accepted only when `H` is positive definite, in
    /// which case the step is the plain Newton step.
    pub m: f64,
}

impl CubicSubproblem {
    pub fn new(g: DVector<f64>, h: DMatrix<f64>, m: f64) -> Self {
        Self { g, h, m }
    }

    pub fn model(&self, step: &DVector<f64>) -> f64 {
        self.g.dot(step) + 0.5 * step.dot(&(&self.h * step)) + self.m / 6.0 * step.norm().powi(3)
    }

    /// `‖(H + (M r/2) I) h + g‖` with `r = ‖h‖`.
    pub fn stationarity_residual(&self, step: &DVector<f64>) -> f64 {
        let shift = 0.5 * self.m * step.norm();
        (&self.h * step + step * shift + &self.g).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicStep {
    pub h: DVector<f64>,
    /// `‖h‖`.
    pub r: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub fn solve_cubic_subproblem(p: &CubicSubproblem, tol: f64) -> Result<CubicStep> {
    let d = p.g.len();
    if p.h.nrows() != d {
        return Err(Error::DimensionMismatch { expected: d, got: p.h.nrows() });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    if !(p.m >= 0.0) || !p.m.is_finite() {
        return Err(Error::InvalidParameter(format!("cubic weight {} must be finite and ≥ 0", p.m)));
    }
    let gnorm = p.g.norm();
    if gnorm == 0.0 {
        return Ok(CubicStep { h: DVector::zeros(d), r: 0.0, residual: 0.0, iterations: 0 });
    }

    let eig = sym_eig(&p.h)?;
    let lmin = eig.lambda[0];
    if lmin < -CLAMP_TOL {
        return Err(Error::Indefinite(lmin));
    }
    let lambda = eig.lambda.map(|l| l.max(0.0));
    let ghat = eig.q.tr_mul(&p.g);
    let step_for = |shift: f64| -> DVector<f64> {
        let coords = DVector::from_iterator(d, ghat.iter().zip(lambda.iter()).map(|(g, l)| -g / (l + shift)));
        &eig.q * coords
    };

    if p.m == 0.0 {
        if lambda[0] <= 0.0 {
            return Err(Error::Indefinite(lambda[0]));
        }
        let h = step_for(0.0);
        let residual = p.stationarity_residual(&h);
        return Ok(CubicStep { r: h.norm(), h, residual, iterations: 0 });
    }

    let half_m = 0.5 * p.m;
    // φ(r) = ‖h(r)‖² − r² and its derivative; strictly decreasing on r > 0.
    let phi = |r: f64| -> (f64, f64) {
        let mut norm2 = 0.0;
        let mut dnorm2 = 0.0;
        for (g, l) in ghat.iter().zip(lambda.iter()) {
            let den = l + half_m * r;
            let t = g * g / (den * den);
            norm2 += t;
            dnorm2 -= 2.0 * half_m * t / den;
        }
        (norm2 - r * r, dnorm2 - 2.0 * r)
    };

    // ‖h(r)‖ ≤ ‖g‖/(Mr/2), so φ(r₀) ≤ 0 at r₀ = √(2‖g‖/M); doubling only
    // guards against rounding at the boundary.
    let mut lo = 0.0;
    let mut hi = (2.0 * gnorm / p.m).sqrt();
    let mut grow = 0;
    while phi(hi).0 > 0.0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 64 {
            return Err(Error::NonConvergence(grow));
        }
    }

    let mut r = hi;
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > ROOT_MAX_ITER {
            return Err(Error::NonConvergence(ROOT_MAX_ITER));
        }
        let (f, df) = phi(r);
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let newton = r - f / df;
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let done = (next - r).abs() <= ROOT_RTOL * next || hi - lo <= ROOT_RTOL * hi;
        r = next;
        if done {
            break;
        }
    }

    let h = step_for(half_m * r);
    let residual = p.stationarity_residual(&h);
    if residual > tol * (1.0 + gnorm) {
        log::warn!("cubic step residual {residual:e} above tolerance {tol:e}");
        return Err(Error::NonConvergence(iterations));
    }
    Ok(CubicStep { r: h.norm(), h, residual, iterations })
}

/// Argmin-relevant coefficients of `ψ(x) = ⟨s, x − x₀⟩ + a‖x − x₀‖² + b‖x − x₀‖³`.
///
/// Constant terms never affect the minimizer and are not tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSequence {
    pub s: DVector<f64>,
    pub a: f64,
    pub b: f64,
    pub x0: DVector<f64>,
}

impl EstimateSequence {
    /// Initial model `8β‖x − x₀‖² + 16L‖x − x₀‖³`.
    pub fn init(beta: f64, lipschitz_hessian: f64, x0: DVector<f64>) -> Result<Self> {
        if !(beta >= 0.0) || !(lipschitz_hessian >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "β = {beta} and L = {lipschitz_hessian} must be non-negative"
            )));
        }
        if beta == 0.0 && lipschitz_hessian == 0.0 {
            return Err(Error::DegenerateEstimateSequence);
        }
        Ok(Self { s: DVector::zeros(x0.len()), a: 8.0 * beta, b: 16.0 * lipschitz_hessian, x0 })
    }

    /// Adds `4β‖x − x₀‖² + coef·⟨grad, x − x₀⟩`.
    pub fn update(&mut self, beta: f64, coef: f64, grad: &DVector<f64>) -> Result<()> {
        if !(coef > 0.0) || !coef.is_finite() {
            return Err(Error::InvalidParameter(format!("coefficient {coef} must be positive")));
        }
        if grad.len() != self.s.len() {
            return Err(Error::DimensionMismatch { expected: self.s.len(), got: grad.len() });
        }
        self.a += 4.0 * beta;
        self.s.axpy(coef, grad, 1.0);
        Ok(())
    }

    /// Radius `r ≥ 0` solving `2ar + 3br² = ‖s‖`.
    pub fn radius(&self) -> Result<f64> {
        if self.a == 0.0 && self.b == 0.0 {
            return Err(Error::DegenerateEstimateSequence);
        }
        let sn = self.s.norm();
        if sn == 0.0 {
            return Ok(0.0);
        }
        // Rationalised root, stable when b‖s‖ ≪ a² and exact for b = 0.
        let disc = (4.0 * self.a * self.a + 12.0 * self.b * sn).sqrt();
        Ok(2.0 * sn / (2.0 * self.a + disc))
    }

    pub fn minimize(&self) -> Result<DVector<f64>> {
        let r = self.radius()?;
        if r == 0.0 {
            return Ok(self.x0.clone());
        }
        let sn = self.s.norm();
        Ok(&self.x0 - &self.s * (r / sn))
    }

    /// Value of ψ without its constant terms.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let h = x - &self.x0;
        let n = h.norm();
        self.s.dot(&h) + self.a * n * n + self.b * n * n * n
    }
}
