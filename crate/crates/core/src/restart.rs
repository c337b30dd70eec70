//! Restart schedule for strongly convex objectives.
//!
//! Stage `s` reruns the accelerated method from the previous stage's output
//! for `t_s` iterations, long enough to halve the distance to the optimum.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::acn::{acn_run, AcnParams, EsCoefficient};
use crate::error::{Error, Result};
use crate::runtime::DistRuntime;
use crate::trace::{MethodRun, Reference, TracePoint};

/// Tolerance under which a real-valued iteration count is treated as the
/// nearby integer before rounding up.
const CEIL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartPlan {
    pub lipschitz_hessian: f64,
    pub mu: f64,
    pub beta: f64,
    pub r0: f64,
}

impl RestartPlan {
    pub fn new(lipschitz_hessian: f64, mu: f64, beta: f64, r0: f64) -> Result<Self> {
        let finite_nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("μ = {mu} must be positive")));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidParameter(format!("R0 = {r0} must be positive")));
        }
        if !finite_nonneg(lipschitz_hessian) || !finite_nonneg(beta) {
            return Err(Error::InvalidParameter(format!(
                "L = {lipschitz_hessian} and β = {beta} must be finite and non-negative"
            )));
        }
        if lipschitz_hessian == 0.0 && beta == 0.0 {
            return Err(Error::InvalidParameter("at least one of L and β must be positive".into()));
        }
        Ok(Self { lipschitz_hessian, mu, beta, r0 })
    }

    /// `R0 = ‖∇F(x₀)‖/μ`, which bounds `‖x₀ − x*‖` for a μ-strongly convex `F`.
    pub fn default_radius(grad_norm_at_x0: f64, mu: f64) -> f64 {
        grad_norm_at_x0 / mu
    }

    pub fn tau1(&self) -> f64 {
        2.0 * (196.0 * self.lipschitz_hessian * self.r0 / self.mu).cbrt()
    }

    pub fn tau2(&self) -> f64 {
        4.0 * (24.0 * self.beta / self.mu).sqrt()
    }

    /// `R_s = R0·2^{−s}`.
    pub fn radius(&self, s: usize) -> f64 {
        self.r0 * 0.5f64.powi(s as i32)
    }

    /// Real-valued iteration count of stage `s ≥ 1` before rounding.
    pub fn iterations_exact(&self, s: usize) -> f64 {
        assert!(s >= 1, "stages are numbered from 1");
        let cubic = (196.0 * self.lipschitz_hessian * self.radius(s - 1) / self.mu).cbrt();
        let quad = 2.0 * (24.0 * self.beta / self.mu).sqrt();
        2.0 * cubic.max(quad)
    }

    /// `t_s`, rounded up and at least one.
    pub fn iterations(&self, s: usize) -> usize {
        let v = self.iterations_exact(s);
        let nearest = v.round();
        let t = if (v - nearest).abs() <= CEIL_TOL * nearest.max(1.0) { nearest } else { v.ceil() };
        (t as usize).max(1)
    }

    /// Distance bound after `rounds` communications; `rounds` must be even.
    pub fn predicted_error_after(&self, rounds: u64) -> Result<f64> {
        if rounds % 2 == 1 {
            return Err(Error::OddRoundCount(rounds));
        }
        let tau = self.tau1().max(self.tau2());
        Ok(self.r0 * 2f64.powf(-(rounds as f64) / (2.0 * tau)))
    }

    /// `8(392·L·R0/μ)^{1/3} + 4√(24β/μ)·log₄(ΔF₀/ε)` as a real number; the
    /// logarithm is clamped at zero.
    pub fn complexity_bound(&self, delta_f0: f64, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("target gap {eps} must be positive")));
        }
        if !(delta_f0 >= 0.0) {
            return Err(Error::InvalidParameter(format!("initial gap {delta_f0} must be non-negative")));
        }
        let cubic = 8.0 * (392.0 * self.lipschitz_hessian * self.r0 / self.mu).cbrt();
        let levels = if delta_f0 > eps { (delta_f0 / eps).ln() / 4f64.ln() } else { 0.0 };
        Ok(cubic + 4.0 * (24.0 * self.beta / self.mu).sqrt() * levels)
    }

    /// Iteration estimate, rounded up.
    pub fn complexity_estimate(&self, delta_f0: f64, eps: f64) -> Result<u64> {
        Ok(self.complexity_bound(delta_f0, eps)?.ceil() as u64)
    }

    pub fn acn_params(&self) -> AcnParams {
        AcnParams::new(self.lipschitz_hessian, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartStop {
    Stages(usize),
    /// Run until `R_s ≤ eps`, but never more than `max_stages`.
    UntilRadius {
        eps: f64,
        max_stages: usize,
    },
}

impl RestartStop {
    fn done(&self, plan: &RestartPlan, completed: usize) -> bool {
        match *self {
            RestartStop::Stages(n) => completed >= n,
            RestartStop::UntilRadius { eps, max_stages } => completed >= max_stages || plan.radius(completed) <= eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub s: usize,
    pub r_s: f64,
    pub t_s: usize,
    /// Iterations actually run; below `t_s` only when a target stopped the run.
    pub iterations_run: usize,
    pub stage_rounds: u64,
    /// Cumulative runtime counter at the end of the stage.
    pub comm_rounds: u64,
    pub dist_to_opt: Option<f64>,
    pub f_gap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RestartTrace {
    pub stages: Vec<StageRecord>,
}

impl RestartTrace {
    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations_run).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RestartRun {
    pub z: DVector<f64>,
    pub trace: RestartTrace,
    /// Every x-iterate over all stages, numbered consecutively.
    pub run: MethodRun,
}

/// Chains accelerated stages. Stops early, between or inside stages, when
/// the reference's target is met.
pub fn run_restarted(
    rt: &mut DistRuntime,
    z0: &DVector<f64>,
    plan: &RestartPlan,
    stop: RestartStop,
    es_coefficient: EsCoefficient,
    reference: Option<&Reference<'_>>,
) -> Result<RestartRun> {
    let mut z = z0.clone();
    let mut trace = RestartTrace::default();
    let mut trajectory = vec![TracePoint::record(0, rt.comm_rounds(), &z, reference)?];
    let params = AcnParams { es_coefficient, ..plan.acn_params() };
    let mut completed = 0;
    while !stop.done(plan, completed) {
        if reference.is_some_and(|r| r.should_stop(trajectory.last().expect("non-empty"))) {
            break;
        }
        let s = completed + 1;
        let t_s = plan.iterations(s);
        let before = rt.comm_rounds();
        let stage = acn_run(rt, &z, params, t_s, reference)?;
        let offset = trajectory.len();
        for (i, mut p) in stage.trajectory.into_iter().enumerate() {
            p.t = offset + i;
            trajectory.push(p);
        }
        let last = trajectory.last().expect("stage produced an iterate");
        z = stage.x;
        let stage_rounds = rt.comm_rounds() - before;
        trace.stages.push(StageRecord {
            s,
            r_s: plan.radius(s),
            t_s,
            iterations_run: ((stage_rounds - 1) / 2) as usize,
            stage_rounds,
            comm_rounds: rt.comm_rounds(),
            dist_to_opt: last.dist_to_opt,
            f_gap: last.f_gap,
        });
        log::debug!("stage {s}: t_s = {t_s}, rounds = {}", rt.comm_rounds());
        completed = s;
    }
    Ok(RestartRun { z: z.clone(), trace, run: MethodRun { x: z, trajectory } })
}
