#![allow(dead_code)]

use acn_core::{gen_synthetic, ObjectiveKind, ObjectiveShard, SaaProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vec_in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let n = v.norm();
    if n > 0.0 {
        v * (radius * rng.random::<f64>() / n)
    } else {
        v
    }
}

pub fn random_psd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(d, d) * shift
}

pub fn logistic_problem(seed: u64, n_total: usize, d: usize, m: usize, mu: f64) -> SaaProblem {
    let ds = gen_synthetic(seed, n_total, d, ObjectiveKind::Logistic, 1.0).unwrap();
    SaaProblem::build(&ds, ObjectiveKind::Logistic, m, mu, DVector::zeros(d), 2.0).unwrap()
}

/// `m` quadratic shards with random PSD Hessians around a shared centre,
/// so the assembled objective is strongly convex.
pub fn quadratic_problem(seed: u64, d: usize, m: usize) -> SaaProblem {
    let mut r = rng(seed);
    let center = vec_in_ball(&mut r, d, 1.0);
    let shards = (0..m)
        .map(|_| {
            let h = random_psd(&mut r, d, 0.5) * 0.2;
            let c = &center + vec_in_ball(&mut r, d, 0.1);
            ObjectiveShard::quadratic(h, c, 0.0, DVector::zeros(d)).unwrap()
        })
        .collect();
    SaaProblem::from_shards(shards, 2.0).unwrap()
}

/// Exact minimiser of a sum of quadratics by one linear solve.
pub fn quadratic_minimizer(p: &SaaProblem) -> DVector<f64> {
    let d = p.dim();
    let z = DVector::zeros(d);
    let h = p.hessian(&z).unwrap();
    let g = p.gradient(&z).unwrap();
    h.cholesky().unwrap().solve(&(-g))
}
