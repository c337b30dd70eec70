//! Problem construction, β calibration, reference solves and method runs.

use std::path::Path;
use std::time::Instant;

use acn_core::acn::AcnState;
use acn_core::objective::gen_synthetic_with;
use acn_core::{
    acn_run, agd_run, cubic_newton_run, estimate_beta, random_probes, reference_solve, run_restarted, AcnParams,
    AgdParams, Dataset, DistRuntime, EsCoefficient, LipschitzConstants, MethodRun, Reference, ReferenceOptions,
    ReferenceSolution, RestartPlan, RestartStop, RestartTrace, RuntimeOptions, SaaProblem, Transport,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BetaSource, Budget, Method, ProblemConfig};
use crate::HarnessError;

pub const PROBE_COUNT: usize = 16;
pub const PILOT_ITERATIONS: usize = 100;
pub const MAX_PILOT_PASSES: usize = 4;
/// Relative slack on bound checks, absorbing rounding in `F(x) − F*`.
pub const CHECK_SLACK: f64 = 1e-12;
/// Distances below `DISTANCE_FLOOR·R0` are treated as converged.
pub const DISTANCE_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCalibration {
    pub probe_estimate: f64,
    /// Trajectory estimate after each pilot pass.
    pub pilot_estimates: Vec<f64>,
    pub calibrated: f64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub config: ProblemConfig,
    pub dataset: Dataset,
    pub problem: SaaProblem,
    /// `L₀` of the unregularized data term, fed to the μ rule.
    pub l0_data: f64,
    pub mu: f64,
    pub constants: LipschitzConstants,
    pub beta: f64,
    pub calibration: Option<BetaCalibration>,
}

impl Instance {
    pub fn build(config: &ProblemConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let dataset = gen_synthetic_with(
            config.seed,
            config.n_total,
            config.d,
            config.kind,
            config.feat_bound,
            config.generator_params(),
        )?;
        Self::from_dataset(config, dataset)
    }

    pub fn from_dataset(config: &ProblemConfig, dataset: Dataset) -> Result<Self, HarnessError> {
        config.validate()?;
        let x0 = DVector::zeros(config.d);
        let base = SaaProblem::build(&dataset, config.kind, config.m, 0.0, x0, config.radius)?;
        let l0_data = base.lipschitz_constants(config.radius).l0;
        let mu = config.mu_rule.evaluate(l0_data, config.radius, config.n_total, config.mu_scale)?;
        let shards = base.shards.iter().map(|s| s.with_mu_reg(mu)).collect::<acn_core::Result<Vec<_>>>()?;
        let problem = SaaProblem::from_shards(shards, config.radius)?;
        let constants = problem.lipschitz_constants(config.radius);
        let mut inst =
            Self { config: config.clone(), dataset, problem, l0_data, mu, constants, beta: 0.0, calibration: None };
        inst.beta = match config.beta_source {
            BetaSource::Fixed(b) => b,
            BetaSource::Theory => inst.problem.beta_theory,
            BetaSource::Empirical => {
                let cal = inst.calibrate_beta()?;
                let b = cal.calibrated;
                inst.calibration = Some(cal);
                b
            }
        } * config.beta_scale;
        inst.problem.beta_hat = inst.calibration.as_ref().map(|c| c.calibrated);
        Ok(inst)
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.problem.x0
    }

    pub fn lipschitz_hessian(&self) -> f64 {
        self.constants.l2
    }

    pub fn acn_params(&self) -> AcnParams {
        AcnParams::new(self.lipschitz_hessian(), self.beta)
    }

    /// Probe estimate at random points of the `R`-ball, raised to the
    /// deviation seen along pilot runs until it stops growing.
    pub fn calibrate_beta(&self) -> Result<BetaCalibration, HarnessError> {
        let probes = random_probes(self.config.seed, self.x0(), self.config.radius, PROBE_COUNT);
        let mut beta = estimate_beta(&self.problem, &probes)?.beta_hat;
        let probe_estimate = beta;
        let mut pilot_estimates = Vec::new();
        for _ in 0..MAX_PILOT_PASSES {
            if beta == 0.0 && self.lipschitz_hessian() == 0.0 {
                break;
            }
            let points = self.pilot_points(beta, PILOT_ITERATIONS)?;
            let seen = estimate_beta(&self.problem, &points)?.beta_hat;
            pilot_estimates.push(seen);
            if seen <= beta {
                break;
            }
            beta = seen;
        }
        Ok(BetaCalibration { probe_estimate, pilot_estimates, calibrated: beta })
    }

    /// Every `w_t` and `x_t` of an in-process accelerated run.
    pub fn pilot_points(&self, beta: f64, iterations: usize) -> Result<Vec<DVector<f64>>, HarnessError> {
        let mut rt = self.runtime(&Transport::InProc)?;
        let params = AcnParams::new(self.lipschitz_hessian(), beta);
        let mut state = AcnState::init(&mut rt, self.x0(), params)?;
        let mut points = vec![self.x0().clone(), state.x.clone()];
        for _ in 0..iterations {
            state.step(&mut rt)?;
            points.push(state.w.clone());
            points.push(state.x.clone());
        }
        Ok(points)
    }

    pub fn runtime(&self, transport: &Transport) -> Result<DistRuntime, HarnessError> {
        let opts = RuntimeOptions { master_shard: self.config.master_shard, ..Default::default() };
        Ok(DistRuntime::start_with(self.problem.shards.clone(), transport.clone(), opts)?)
    }

    /// Content hash of everything the assembled objective depends on.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dataset.to_bytes());
        h.update(self.config.kind.to_string().as_bytes());
        h.update((self.config.m as u64).to_le_bytes());
        h.update(self.config.seed.to_le_bytes());
        h.update(self.mu.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn reference(&self) -> Result<ReferenceSolution, HarnessError> {
        Ok(reference_solve(&self.problem, self.x0(), ReferenceOptions::default())?)
    }

    /// Reference solution, read from or written to `cache_dir`.
    pub fn cached_reference(&self, cache_dir: &Path) -> Result<ReferenceSolution, HarnessError> {
        let path = cache_dir.join(format!("{}.json", self.content_hash()));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(sol) = serde_json::from_str(&text) {
                log::debug!("reference cache hit {}", path.display());
                return Ok(sol);
            }
        }
        let sol = self.reference()?;
        std::fs::create_dir_all(cache_dir)?;
        std::fs::write(&path, serde_json::to_string_pretty(&sol)?)?;
        Ok(sol)
    }

    pub fn restart_plan(&self, r0: Option<f64>) -> Result<RestartPlan, HarnessError> {
        let mu = self.problem.strong_convexity();
        let r0 = match r0 {
            Some(r) => r,
            None => {
                let r = RestartPlan::default_radius(self.problem.gradient(self.x0())?.norm(), mu);
                log::info!("R0 defaults to ‖∇F(x₀)‖/μ = {r:.6e}");
                r
            }
        };
        Ok(RestartPlan::new(self.lipschitz_hessian(), mu, self.beta, r0)?)
    }

    pub fn agd_params(&self) -> AgdParams {
        AgdParams { l1: self.constants.l1, mu: self.problem.strong_convexity() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub t: usize,
    pub comm_rounds: u64,
    pub f_gap: Option<f64>,
    pub dist_to_opt: Option<f64>,
    pub wall_ms: f64,
    pub beta_used: f64,
    pub mu_used: f64,
}

pub const CSV_HEADER: &str = "method,t,comm_rounds,f_gap,dist_to_opt,wall_ms,beta_used,mu_used";

impl RunRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        format!(
            "{},{},{},{},{},{},{:e},{:e}",
            self.method,
            self.t,
            self.comm_rounds,
            opt(self.f_gap),
            opt(self.dist_to_opt),
            self.wall_ms,
            self.beta_used,
            self.mu_used
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub iterations: usize,
    pub comm_rounds: u64,
    pub target_gap: Option<f64>,
    pub rounds_to_target: Option<u64>,
    pub final_gap: Option<f64>,
    pub final_dist: Option<f64>,
    pub initial_dist: f64,
    pub beta_used: f64,
    pub mu_used: f64,
    pub lipschitz_hessian: f64,
    pub gradient_lipschitz: f64,
    pub bound_checks: usize,
    pub bound_violations: usize,
    pub beta_calibration: Option<BetaCalibration>,
    pub restart_plan: Option<RestartPlan>,
    pub restart_trace: Option<RestartTrace>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub run: MethodRun,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
}

pub struct RunSpec<'a> {
    pub method: Method,
    pub budget: Budget,
    pub max_rounds: u64,
    pub transport: Transport,
    pub r0: Option<f64>,
    pub record_wall_time: bool,
    pub es_coefficient: EsCoefficient,
    pub reference: &'a ReferenceSolution,
}

impl<'a> RunSpec<'a> {
    pub fn new(method: Method, budget: Budget, reference: &'a ReferenceSolution) -> Self {
        Self {
            method,
            budget,
            max_rounds: 20_000,
            transport: Transport::InProc,
            r0: None,
            record_wall_time: false,
            es_coefficient: EsCoefficient::Current,
            reference,
        }
    }
}

pub fn run_method(inst: &Instance, spec: &RunSpec<'_>) -> Result<Outcome, HarnessError> {
    let rt = inst.runtime(&spec.transport)?;
    run_method_on(inst, spec, rt)
}

/// Like [`run_method`] on an already started runtime, which is shut down
/// afterwards. `spec.transport` is ignored.
pub fn run_method_on(inst: &Instance, spec: &RunSpec<'_>, mut rt: DistRuntime) -> Result<Outcome, HarnessError> {
    let x_star = spec.reference.x();
    let mut reference = Reference::new(&inst.problem, spec.reference.f_star, &x_star);
    if spec.record_wall_time {
        reference = reference.with_clock(Instant::now());
    }
    let unbounded = usize::MAX / 4;
    let iterations = match spec.budget {
        Budget::TMax(t) => t,
        Budget::TargetGap(g) => {
            reference = reference.with_target_gap(g).with_max_rounds(spec.max_rounds);
            unbounded
        }
        Budget::Rounds(r) => {
            reference = reference.with_max_rounds(r);
            unbounded
        }
    };
    let x0 = inst.x0();
    let mut plan = None;
    let mut restart_trace = None;
    let run = match spec.method {
        Method::Acn => {
            let params = AcnParams { es_coefficient: spec.es_coefficient, ..inst.acn_params() };
            acn_run(&mut rt, x0, params, iterations, Some(&reference))?
        }
        Method::CubicNewton => cubic_newton_run(&mut rt, x0, inst.acn_params(), iterations, Some(&reference))?,
        Method::Agd => agd_run(&mut rt, x0, inst.agd_params(), iterations, Some(&reference))?,
        Method::RestartedAcn => {
            let p = inst.restart_plan(spec.r0)?;
            let stop = RestartStop::Stages(iterations);
            let out = run_restarted(&mut rt, x0, &p, stop, spec.es_coefficient, Some(&reference))?;
            plan = Some(p);
            restart_trace = Some(out.trace);
            out.run
        }
    };
    rt.shutdown();

    let beta_used = match spec.method {
        Method::Agd => 0.0,
        _ => inst.beta,
    };
    let mu_used = inst.mu;
    let records: Vec<RunRecord> = run
        .trajectory
        .iter()
        .map(|p| RunRecord {
            method: spec.method.name().to_string(),
            t: p.t,
            comm_rounds: p.comm_rounds,
            f_gap: p.f_gap,
            dist_to_opt: p.dist_to_opt,
            wall_ms: p.wall_ms,
            beta_used,
            mu_used,
        })
        .collect();

    let initial_dist = (x0 - &x_star).norm();
    let (bound_checks, bound_violations) = match spec.method {
        Method::Acn => {
            rate_violations(&run, inst.lipschitz_hessian(), inst.beta, initial_dist, spec.reference.f_star)
        }
        Method::RestartedAcn => {
            let p = plan.as_ref().expect("plan recorded");
            restart_violations(restart_trace.as_ref().expect("trace recorded"), p)
        }
        _ => (0, 0),
    };
    let last = run.trajectory.last().expect("trajectory is never empty");
    let target_gap = reference.target_gap;
    let summary = Summary {
        method: spec.method,
        iterations: run.trajectory.len() - 1,
        comm_rounds: last.comm_rounds,
        target_gap,
        rounds_to_target: target_gap.and_then(|g| run.rounds_to_gap(g)),
        final_gap: last.f_gap,
        final_dist: last.dist_to_opt,
        initial_dist,
        beta_used,
        mu_used,
        lipschitz_hessian: inst.lipschitz_hessian(),
        gradient_lipschitz: inst.constants.l1,
        bound_checks,
        bound_violations,
        beta_calibration: inst.calibration.clone(),
        restart_plan: plan,
        restart_trace,
    };
    Ok(Outcome { run, records, summary })
}

/// Right-hand side of the sublinear rate for the accelerated method.
pub fn gap_bound(lipschitz_hessian: f64, beta: f64, d0: f64, t: usize) -> f64 {
    let t = t as f64;
    98.0 * lipschitz_hessian * d0.powi(3) / t.powi(3) + 48.0 * beta * d0 * d0 / (t * t)
}

/// `(checks, violations)` of the sublinear rate over `x_1, x_2, …`.
pub fn rate_violations(run: &MethodRun, l: f64, beta: f64, d0: f64, f_star: f64) -> (usize, usize) {
    let slack = CHECK_SLACK * (1.0 + f_star.abs());
    let mut checks = 0;
    let mut violations = 0;
    for p in run.trajectory.iter().filter(|p| p.t >= 1) {
        let Some(gap) = p.f_gap else { continue };
        checks += 1;
        if gap > gap_bound(l, beta, d0, p.t) + slack {
            violations += 1;
            log::warn!("rate bound violated at t = {}: gap {gap:e}", p.t);
        }
    }
    (checks, violations)
}

/// Per-stage distance halving and gap bound, with the floating-point floor.
pub fn restart_violations(trace: &RestartTrace, plan: &RestartPlan) -> (usize, usize) {
    let floor = DISTANCE_FLOOR * plan.r0;
    let mut checks = 0;
    let mut violations = 0;
    for st in &trace.stages {
        if let Some(dist) = st.dist_to_opt {
            checks += 1;
            if dist > plan.radius(st.s).max(floor) {
                violations += 1;
                log::warn!("stage {}: distance {dist:e} above R_s = {:e}", st.s, plan.radius(st.s));
            }
        }
        if let Some(gap) = st.f_gap {
            checks += 1;
            let bound = plan.mu * plan.r0 * plan.r0 * 0.5f64.powi(2 * st.s as i32 + 1);
            let gap_floor = plan.mu * floor * floor;
            if gap > bound.max(gap_floor) + CHECK_SLACK {
                violations += 1;
                log::warn!("stage {}: gap {gap:e} above {bound:e}", st.s);
            }
        }
    }
    (checks, violations)
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<(), HarnessError> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
