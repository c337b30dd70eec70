//! Regularized finite-sum approximation of a stochastic objective.
//!
//! The global objective is `F(x) = (1/m) Σ_k f_k(x)` where every shard
//! carries the same regularizer `(μ/2)‖x − x₀‖²`, so the average reproduces
//! `(1/N) Σ_j loss_j(x) + (μ/2)‖x − x₀‖²` exactly.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{spectral_norm_sym, symmetrize, Dataset, LipschitzConstants, ObjectiveKind, ObjectiveShard};
use crate::rng;

/// How the regularization weight is chosen from `(L₀, R, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRule {
    /// `μ = L₀ ln N / (R N)`.
    #[serde(rename = "logN_over_N")]
    LogNOverN,
    /// `μ = L₀ / (R √N)`.
    #[serde(rename = "inv_sqrt_N")]
    InvSqrtN,
    /// Fixed weight carried by every per-sample loss (no extra regularizer
    /// beyond what the loss already contains).
    Intrinsic(f64),
}

impl MuRule {
    pub fn evaluate(&self, l0: f64, radius: f64, n_total: usize, scale: f64) -> Result<f64> {
        match *self {
            MuRule::LogNOverN => Ok(scale * regularization_mu(l0, radius, n_total)?),
            MuRule::InvSqrtN => {
                check_positive("L0", l0)?;
                check_positive("R", radius)?;
                if n_total == 0 {
                    return Err(Error::InvalidParameter("N must be positive".into()));
                }
                Ok(scale * l0 / (radius * (n_total as f64).sqrt()))
            }
            MuRule::Intrinsic(mu) => {
                if mu >= 0.0 && mu.is_finite() {
                    Ok(mu)
                } else {
                    Err(Error::InvalidParameter(format!("intrinsic μ = {mu} must be ≥ 0")))
                }
            }
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be positive")))
    }
}

/// `L₀ ln N / (R N)`.
pub fn regularization_mu(l0: f64, radius: f64, n_total: usize) -> Result<f64> {
    check_positive("L0", l0)?;
    check_positive("R", radius)?;
    if n_total < 2 {
        return Err(Error::InvalidParameter(format!("N = {n_total} must be at least 2")));
    }
    let n = n_total as f64;
    Ok(l0 * n.ln() / (radius * n))
}

/// `√(32 L² d / n)`, the similarity rate with logarithmic factors dropped.
pub fn similarity_bound(lipschitz_hessian: f64, d: usize, n: usize) -> f64 {
    assert!(n >= 1, "similarity bound needs at least one sample per worker");
    (32.0 * lipschitz_hessian * lipschitz_hessian * d as f64 / n as f64).sqrt()
}

/// Splits a dataset into `m` equal contiguous shards after one seeded shuffle.
/// Every shard carries the regularizer `(mu_reg/2)‖x − anchor‖²`.
pub fn shard_dataset(
    ds: &Dataset,
    kind: ObjectiveKind,
    m: usize,
    mu_reg: f64,
    anchor: &DVector<f64>,
) -> Result<Vec<ObjectiveShard>> {
    let total = ds.len();
    if m == 0 {
        return Err(Error::InvalidParameter("worker count must be positive".into()));
    }
    if m > total {
        return Err(Error::TooManyWorkers { total, workers: m });
    }
    if !total.is_multiple_of(m) {
        return Err(Error::IndivisibleShards { total, workers: m });
    }
    if anchor.len() != ds.d {
        return Err(Error::DimensionMismatch { expected: ds.d, got: anchor.len() });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng::stream(ds.seed, rng::STREAM_SHUFFLE));
    let n = total / m;
    order
        .chunks(n)
        .map(|idx| {
            let samples: Vec<_> = idx.iter().map(|&i| ds.samples[i].clone()).collect();
            ObjectiveShard::from_samples(kind, &samples, mu_reg, anchor.clone())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SaaProblem {
    pub shards: Vec<ObjectiveShard>,
    /// Samples per worker.
    pub n: usize,
    pub mu: f64,
    pub x0: DVector<f64>,
    pub beta_theory: f64,
    pub beta_hat: Option<f64>,
    /// Radius of the ball around `x0` assumed to contain the solutions.
    pub radius: f64,
}

impl SaaProblem {
    /// Assembles a problem from prepared shards. All shards must agree on
    /// dimension, kind, regularization weight and anchor.
    pub fn from_shards(shards: Vec<ObjectiveShard>, radius: f64) -> Result<Self> {
        let first =
            shards.first().ok_or_else(|| Error::InvalidParameter("a problem needs at least one shard".into()))?;
        let d = first.dim();
        for s in &shards[1..] {
            if s.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
            }
            if s.kind() != first.kind() || s.mu_reg() != first.mu_reg() || s.anchor() != first.anchor() {
                return Err(Error::InvalidParameter("shards disagree on kind, regularizer or anchor".into()));
            }
        }
        let n = first.len();
        let mu = first.mu_reg();
        let x0 = first.anchor().clone();
        let mut problem = Self { shards, n, mu, x0, beta_theory: 0.0, beta_hat: None, radius };
        let l = problem.lipschitz_constants(10.0 * radius).l2;
        problem.beta_theory = if n > 0 { similarity_bound(l, d, n) } else { 0.0 };
        Ok(problem)
    }

    pub fn build(ds: &Dataset, kind: ObjectiveKind, m: usize, mu: f64, x0: DVector<f64>, radius: f64) -> Result<Self> {
        Self::from_shards(shard_dataset(ds, kind, m, mu, &x0)?, radius)
    }

    pub fn m(&self) -> usize {
        self.shards.len()
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.shards[0].kind()
    }

    pub fn n_total(&self) -> usize {
        self.n * self.m()
    }

    /// `F(x)`, averaging shard values in ascending shard order.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        let mut sum = 0.0;
        for s in &self.shards {
            sum += s.value(x)?;
        }
        Ok(sum / self.m() as f64)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let grads = self.shards.par_iter().map(|s| s.gradient(x)).collect::<Result<Vec<_>>>()?;
        let mut sum = DVector::zeros(self.dim());
        for g in &grads {
            sum += g;
        }
        Ok(sum / self.m() as f64)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let hs = self.shard_hessians(x)?;
        let mut sum = DMatrix::zeros(hs[0].nrows(), hs[0].ncols());
        for h in &hs {
            sum += h;
        }
        Ok(sum / self.m() as f64)
    }

    fn shard_hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.shards.par_iter().map(|s| s.hessian(x)).collect()
    }

    /// Smoothness constants of `F` on the ball of radius `r_dom` around `x0`,
    /// taken as the average of the shard constants.
    pub fn lipschitz_constants(&self, r_dom: f64) -> LipschitzConstants {
        let m = self.m() as f64;
        let mut acc = LipschitzConstants { l0: 0.0, l1: 0.0, l2: 0.0 };
        for s in &self.shards {
            let c = s.lipschitz_constants(r_dom);
            acc.l0 += c.l0;
            acc.l1 += c.l1;
            acc.l2 += c.l2;
        }
        LipschitzConstants { l0: acc.l0 / m, l1: acc.l1 / m, l2: acc.l2 / m }
    }

    /// Lower bound on the strong convexity modulus of `F`.
    pub fn strong_convexity(&self) -> f64 {
        self.shards.iter().map(|s| s.strong_convexity()).sum::<f64>() / self.m() as f64
    }

    /// Eigenvalue range of `(∇²f_k(x) + 3βI) − ∇²F(x)` together with the
    /// local deviation `‖∇²f_k(x) − ∇²F(x)‖`.
    pub fn sandwich(&self, shard: usize, x: &DVector<f64>, beta: f64) -> Result<SandwichCheck> {
        let hs = self.shard_hessians(x)?;
        let mut diff = deviation(&hs, shard);
        symmetrize(&mut diff);
        let eig = diff.symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        Ok(SandwichCheck {
            beta,
            beta_local: lo.abs().max(hi.abs()),
            min_eig: lo + 3.0 * beta,
            max_eig: hi + 3.0 * beta,
        })
    }
}

/// `H_k − (1/m)Σ_j H_j`, summed as pairwise differences so that identical
/// shards give exactly zero.
fn deviation(hs: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let mut sum = DMatrix::zeros(hs[k].nrows(), hs[k].ncols());
    for h in hs {
        sum += &hs[k] - h;
    }
    sum / hs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub beta: f64,
    pub beta_local: f64,
    pub min_eig: f64,
    pub max_eig: f64,
}

impl SandwichCheck {
    /// Whether `β` dominates the measured deviation at this point.
    pub fn condition_holds(&self) -> bool {
        self.beta_local <= self.beta
    }

    /// `(λ/2)I ≼ H − ∇²F ≼ λI` with `λ = 4β`, up to `tol`.
    pub fn contained(&self, tol: f64) -> bool {
        self.min_eig >= 2.0 * self.beta - tol && self.max_eig <= 4.0 * self.beta + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub beta_hat: f64,
    pub per_worker_max: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub probe_count: usize,
    #[serde(skip)]
    pub probe_points: Vec<DVector<f64>>,
}

/// Largest spectral deviation `‖∇²f_k(x) − ∇²F(x)‖` over workers and probes.
///
/// Needs every worker's Hessian, so it is an offline diagnostic and never
/// part of the optimization protocol.
pub fn estimate_beta(problem: &SaaProblem, probes: &[DVector<f64>]) -> Result<SimilarityReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("at least one probe point is required".into()));
    }
    let d = problem.dim();
    for p in probes {
        if p.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
    }
    let per_probe: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|x| {
            let hs = problem.shard_hessians(x)?;
            Ok((0..hs.len())
                .map(|k| {
                    let mut diff = deviation(&hs, k);
                    symmetrize(&mut diff);
                    spectral_norm_sym(&diff)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut per_worker_max = vec![0.0_f64; problem.m()];
    for devs in &per_probe {
        for (acc, v) in per_worker_max.iter_mut().zip(devs) {
            *acc = acc.max(*v);
        }
    }
    let beta_hat = per_worker_max.iter().copied().fold(0.0, f64::max);
    Ok(SimilarityReport {
        beta_hat,
        per_worker_max,
        n: problem.n,
        d,
        probe_count: probes.len(),
        probe_points: probes.to_vec(),
    })
}

/// `count` points drawn uniformly from the ball of radius `radius` around
/// `center`.
pub fn random_probes(seed: u64, center: &DVector<f64>, radius: f64, count: usize) -> Vec<DVector<f64>> {
    let d = center.len();
    let mut rng = rng::stream(seed, rng::STREAM_PROBES);
    (0..count)
        .map(|_| {
            let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = dir.norm();
            let rho = radius * rng.random::<f64>().powf(1.0 / d as f64);
            if n > 0.0 {
                center + dir * (rho / n)
            } else {
                center.clone()
            }
        })
        .collect()
}
