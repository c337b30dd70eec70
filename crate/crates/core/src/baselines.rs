//! Comparison methods sharing the same gather primitive and round counter.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::acn::{cubic_step, AcnParams};
use crate::error::{Error, Result};
use crate::runtime::DistRuntime;
use crate::trace::{MethodRun, Reference, TracePoint};

/// Non-accelerated cubic Newton with the same `4L` weight and `+3βI` shift
/// as the accelerated method. One gather per iteration plus one at `x₀`.
pub fn cubic_newton_run(
    rt: &mut DistRuntime,
    x0: &DVector<f64>,
    params: AcnParams,
    t_max: usize,
    reference: Option<&Reference<'_>>,
) -> Result<MethodRun> {
    if params.lipschitz_hessian == 0.0 && params.beta == 0.0 {
        return Err(Error::InvalidParameter("at least one of L and β must be positive".into()));
    }
    let mut x = x0.clone();
    let mut g = rt.gather(&x)?.grad_mean;
    let mut trajectory = vec![TracePoint::record(0, rt.comm_rounds(), &x, reference)?];
    for t in 1..=t_max {
        if reference.is_some_and(|r| r.should_stop(trajectory.last().expect("non-empty"))) {
            break;
        }
        x += cubic_step(rt, &x, &g, &params)?;
        g = rt.gather(&x)?.grad_mean;
        trajectory.push(TracePoint::record(t, rt.comm_rounds(), &x, reference)?);
    }
    Ok(MethodRun { x, trajectory })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgdParams {
    /// Gradient Lipschitz constant; the step is `1/L1`.
    pub l1: f64,
    /// Strong convexity modulus; zero selects the convex schedule.
    pub mu: f64,
}

impl AgdParams {
    /// Constant momentum `(√κ − 1)/(√κ + 1)` with `κ = L1/μ`.
    pub fn strongly_convex_momentum(&self) -> Option<f64> {
        (self.mu > 0.0).then(|| {
            let q = (self.l1 / self.mu).sqrt();
            (q - 1.0) / (q + 1.0)
        })
    }
}

/// Nesterov's accelerated gradient on `F` with full gathered gradients, one
/// gather per iteration at the extrapolated point.
pub fn agd_run(
    rt: &mut DistRuntime,
    x0: &DVector<f64>,
    params: AgdParams,
    t_max: usize,
    reference: Option<&Reference<'_>>,
) -> Result<MethodRun> {
    if !(params.l1 > 0.0 && params.l1.is_finite()) {
        return Err(Error::InvalidParameter(format!("L1 = {} must be positive", params.l1)));
    }
    if !(params.mu >= 0.0 && params.mu <= params.l1) {
        return Err(Error::InvalidParameter(format!("μ = {} must lie in [0, L1]", params.mu)));
    }
    let fixed = params.strongly_convex_momentum();
    let mut x = x0.clone();
    let mut y = x0.clone();
    let mut theta = 1.0_f64;
    let mut trajectory = vec![TracePoint::record(0, rt.comm_rounds(), &x, reference)?];
    for t in 1..=t_max {
        if reference.is_some_and(|r| r.should_stop(trajectory.last().expect("non-empty"))) {
            break;
        }
        let g = rt.gather(&y)?.grad_mean;
        let x_next = &y - g / params.l1;
        let momentum = match fixed {
            Some(q) => q,
            None => {
                let next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let q = (theta - 1.0) / next;
                theta = next;
                q
            }
        };
        y = &x_next + (&x_next - &x) * momentum;
        x = x_next;
        trajectory.push(TracePoint::record(t, rt.comm_rounds(), &x, reference)?);
    }
    Ok(MethodRun { x, trajectory })
}
