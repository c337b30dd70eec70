//! Distributed accelerated cubic-regularized Newton iteration.
//!
//! The master forms `∇F` by gathering worker gradients, preconditions with
//! its own Hessian shifted by `3β`, and takes cubic steps with weight `4L`.
//! Acceleration comes from an estimate sequence anchored at `x₀`. Each
//! iteration costs exactly two gathers; initialization costs one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cubic::{solve_cubic_subproblem, CubicSubproblem, EstimateSequence};
use crate::error::{Error, Result};
use crate::runtime::DistRuntime;
use crate::trace::{MethodRun, Reference, TracePoint};

/// Which `A` enters the estimate-sequence weight `3/(A·(t+3))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsCoefficient {
    /// `A_t = A_{t−1}(1 − 3/(t+3))`, updated before use.
    #[default]
    Current,
    /// `A_{t−1}`.
    Previous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcnParams {
    /// Hessian Lipschitz constant `L`; the cubic weight is `4L`.
    pub lipschitz_hessian: f64,
    pub beta: f64,
    #[serde(default)]
    pub es_coefficient: EsCoefficient,
    /// Stationarity tolerance handed to the cubic solver.
    #[serde(default = "default_subproblem_tol")]
    pub subproblem_tol: f64,
}

fn default_subproblem_tol() -> f64 {
    1e-9
}

impl AcnParams {
    pub fn new(lipschitz_hessian: f64, beta: f64) -> Self {
        Self {
            lipschitz_hessian,
            beta,
            es_coefficient: EsCoefficient::Current,
            subproblem_tol: default_subproblem_tol(),
        }
    }

    pub fn cubic_weight(&self) -> f64 {
        4.0 * self.lipschitz_hessian
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.lipschitz_hessian) || !ok(self.beta) {
            return Err(Error::InvalidParameter(format!(
                "L = {} and β = {} must be finite and non-negative",
                self.lipschitz_hessian, self.beta
            )));
        }
        if self.lipschitz_hessian == 0.0 && self.beta == 0.0 {
            return Err(Error::InvalidParameter("at least one of L and β must be positive".into()));
        }
        Ok(())
    }
}

/// `A_{t−1} = Π_{j<t}(1 − 3/(j+3)) = 6/(t(t+1)(t+2))`.
pub fn a_closed_form(t: usize) -> f64 {
    let t = t as f64;
    6.0 / (t * (t + 1.0) * (t + 2.0))
}

/// Step of the cubic model `F̃_{4L}(·, z)` preconditioned with the master
/// Hessian at `z`.
pub(crate) fn cubic_step(
    rt: &DistRuntime,
    z: &DVector<f64>,
    grad: &DVector<f64>,
    params: &AcnParams,
) -> Result<DVector<f64>> {
    let mut h: DMatrix<f64> = rt.master_hessian(z)?;
    for i in 0..h.nrows() {
        h[(i, i)] += 3.0 * params.beta;
    }
    let sub = CubicSubproblem::new(grad.clone(), h, params.cubic_weight());
    Ok(solve_cubic_subproblem(&sub, params.subproblem_tol)?.h)
}

#[derive(Debug, Clone)]
pub struct AcnState {
    /// Index of the current iterate `x_t`.
    pub t: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// Most recent extrapolation point `w_{t−1}`; `x₀` before the first step.
    pub w: DVector<f64>,
    /// `A_{t−1}`.
    pub a: f64,
    pub es: EstimateSequence,
    pub x0: DVector<f64>,
    pub params: AcnParams,
    /// Rounds consumed by this run.
    pub comm_rounds: u64,
    /// `F(x_t)` when it came back from a gather.
    pub last_value: Option<f64>,
}

impl AcnState {
    /// One gather at `x₀`, then `x₁` from the cubic model and `y₁ = x₀`.
    pub fn init(rt: &mut DistRuntime, x0: &DVector<f64>, params: AcnParams) -> Result<Self> {
        params.validate()?;
        if x0.len() != rt.dim() {
            return Err(Error::DimensionMismatch { expected: rt.dim(), got: x0.len() });
        }
        let g0 = rt.gather(x0)?;
        let x1 = x0 + cubic_step(rt, x0, &g0.grad_mean, &params)?;
        let es = EstimateSequence::init(params.beta, params.lipschitz_hessian, x0.clone())?;
        let y1 = es.minimize()?;
        Ok(Self {
            t: 1,
            x: x1,
            y: y1,
            w: x0.clone(),
            a: 1.0,
            es,
            x0: x0.clone(),
            params,
            comm_rounds: 1,
            last_value: None,
        })
    }

    pub fn alpha(&self) -> f64 {
        3.0 / (self.t as f64 + 3.0)
    }

    /// Two gathers: at `w_t`, then at the new `x_{t+1}`.
    pub fn step(&mut self, rt: &mut DistRuntime) -> Result<()> {
        let alpha = self.alpha();
        let w = &self.x * (1.0 - alpha) + &self.y * alpha;
        let gw = rt.gather(&w)?;
        self.comm_rounds += 1;
        let x_next = &w + cubic_step(rt, &w, &gw.grad_mean, &self.params)?;
        let gx = rt.gather(&x_next)?;
        self.comm_rounds += 1;

        let a_next = self.a * (1.0 - alpha);
        let a_for_coef = match self.params.es_coefficient {
            EsCoefficient::Current => a_next,
            EsCoefficient::Previous => self.a,
        };
        let coef = 3.0 / (a_for_coef * (self.t as f64 + 3.0));
        self.es.update(self.params.beta, coef, &gx.grad_mean)?;
        self.y = self.es.minimize()?;
        self.x = x_next;
        self.w = w;
        self.a = a_next;
        self.last_value = Some(gx.f_mean);
        self.t += 1;
        Ok(())
    }
}

/// Runs initialization plus `t_max` iterations and returns the last
/// x-iterate. The trajectory holds `x_1 … x_{t_max+1}`; with a reference
/// attached the run may stop early on its target.
pub fn acn_run(
    rt: &mut DistRuntime,
    x0: &DVector<f64>,
    params: AcnParams,
    t_max: usize,
    reference: Option<&Reference<'_>>,
) -> Result<MethodRun> {
    let mut state = AcnState::init(rt, x0, params)?;
    let mut trajectory = vec![TracePoint::record(state.t, rt.comm_rounds(), &state.x, reference)?];
    for _ in 0..t_max {
        if reference.is_some_and(|r| r.should_stop(trajectory.last().expect("non-empty"))) {
            break;
        }
        state.step(rt)?;
        trajectory.push(TracePoint::record(state.t, rt.comm_rounds(), &state.x, reference)?);
    }
    Ok(MethodRun { x: state.x, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ObjectiveShard;
    use crate::runtime::{RuntimeOptions, Transport};

    fn quad_runtime(centers: &[f64]) -> DistRuntime {
        let shards = centers
            .iter()
            .map(|c| {
                ObjectiveShard::quadratic(DMatrix::identity(2, 2), DVector::from_element(2, *c), 0.0, DVector::zeros(2))
                    .unwrap()
            })
            .collect();
        DistRuntime::start_with(shards, Transport::InProc, RuntimeOptions::default()).unwrap()
    }

    #[test]
    fn init_at_optimum_stays_put() {
        let mut rt = quad_runtime(&[1.0, -1.0]);
        let x0 = DVector::zeros(2);
        let s = AcnState::init(&mut rt, &x0, AcnParams::new(1.0, 1.0)).unwrap();
        assert_eq!(s.x, x0);
        assert_eq!(s.y, x0);
        assert_eq!(s.comm_rounds, 1);
        assert_eq!(rt.comm_rounds(), 1);
        assert_eq!((s.t, s.a), (1, 1.0));
    }

    #[test]
    fn first_step_quantities() {
        let mut rt = quad_runtime(&[3.0]);
        let mut s = AcnState::init(&mut rt, &DVector::zeros(2), AcnParams::new(1.0, 1.0)).unwrap();
        s.x = DVector::from_column_slice(&[1.0, 0.0]);
        s.y = DVector::from_column_slice(&[3.0, 0.0]);
        s.step(&mut rt).unwrap();
        assert_eq!(s.w, DVector::from_column_slice(&[2.5, 0.0]));
        assert_eq!(s.a, 0.25);
        assert_eq!(3.0 / (s.a * 4.0), 3.0);
        assert_eq!(rt.comm_rounds(), 3);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn round_accounting_and_a_recurrence() {
        let mut rt = quad_runtime(&[1.0, 2.0, 4.0]);
        let mut s = AcnState::init(&mut rt, &DVector::zeros(2), AcnParams::new(0.5, 0.2)).unwrap();
        for k in 1..=20u64 {
            s.step(&mut rt).unwrap();
            assert_eq!(rt.comm_rounds(), 2 * k + 1);
            let expected = a_closed_form(s.t);
            assert!((s.a - expected).abs() <= 1e-14 * expected);
        }
    }

    #[test]
    fn run_with_zero_iterations() {
        let mut rt = quad_runtime(&[1.0]);
        let run = acn_run(&mut rt, &DVector::zeros(2), AcnParams::new(1.0, 0.0), 0, None).unwrap();
        assert_eq!(rt.comm_rounds(), 1);
        assert_eq!(run.trajectory.len(), 1);
        assert_eq!(run.x, run.trajectory[0].x);
        let mut rt = quad_runtime(&[1.0]);
        acn_run(&mut rt, &DVector::zeros(2), AcnParams::new(1.0, 0.0), 7, None).unwrap();
        assert_eq!(rt.comm_rounds(), 15);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let mut rt = quad_runtime(&[1.0]);
        assert!(AcnState::init(&mut rt, &DVector::zeros(2), AcnParams::new(0.0, 0.0)).is_err());
        assert!(AcnState::init(&mut rt, &DVector::zeros(3), AcnParams::new(1.0, 0.0)).is_err());
        assert_eq!(rt.comm_rounds(), 0);
    }
}
