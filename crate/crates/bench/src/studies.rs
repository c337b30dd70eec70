//! Similarity-vs-n and rounds-vs-N studies.

use acn_core::objective::gen_synthetic_with;
use acn_core::{estimate_beta, random_probes, ObjectiveShard, SaaProblem};
use nalgebra::DVector;
use rayon::prelude::*;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{BetaSource, Budget, Method, ProblemConfig};
use crate::experiment::{run_method, Instance, RunSpec, PROBE_COUNT};
use crate::HarnessError;

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub beta_hat: f64,
    pub beta_theory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaStudy {
    pub rows: Vec<BetaRow>,
    /// `(n, median β̂)` in ascending `n`.
    pub medians: Vec<(usize, f64)>,
    pub slope: f64,
}

impl BetaStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,replicate,seed,beta_hat,beta_theory\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:e},{:e}\n", r.n, r.replicate, r.seed, r.beta_hat, r.beta_theory));
        }
        out
    }
}

/// `β̂` for each per-worker sample size `n` (with `N = n·m`) and replicate.
pub fn beta_study(template: &ProblemConfig, n_list: &[usize], replicates: usize) -> Result<BetaStudy, HarnessError> {
    if n_list.len() < 4 {
        return Err(HarnessError::Config("the similarity study needs at least four values of n".into()));
    }
    if replicates == 0 {
        return Err(HarnessError::Config("replicates must be positive".into()));
    }
    let jobs: Vec<(usize, usize)> = n_list.iter().flat_map(|&n| (0..replicates).map(move |r| (n, r))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, r)| {
            let cfg = ProblemConfig {
                n_total: n * template.m,
                seed: template.seed + r as u64,
                beta_source: BetaSource::Fixed(0.0),
                ..template.clone()
            };
            let inst = Instance::build(&cfg)?;
            let probes = random_probes(cfg.seed, inst.x0(), cfg.radius, PROBE_COUNT);
            let report = estimate_beta(&inst.problem, &probes)?;
            Ok(BetaRow {
                n,
                replicate: r,
                seed: cfg.seed,
                beta_hat: report.beta_hat,
                beta_theory: inst.problem.beta_theory,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut medians = Vec::new();
    for &n in n_list {
        let mut v: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.beta_hat).collect();
        medians.push((n, median(&mut v)));
    }
    let xs: Vec<f64> = medians.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = medians.iter().map(|(_, b)| *b).collect();
    Ok(BetaStudy { rows, medians, slope: fit_loglog_slope(&xs, &ys) })
}

/// `β̂` when every worker holds the same `n` samples.
pub fn identical_shard_beta(template: &ProblemConfig, n: usize) -> Result<f64, HarnessError> {
    let ds = gen_synthetic_with(
        template.seed,
        n,
        template.d,
        template.kind,
        template.feat_bound,
        template.generator_params(),
    )?;
    let x0 = DVector::zeros(template.d);
    let shard = ObjectiveShard::from_samples(template.kind, &ds.samples, 0.0, x0.clone())?;
    let problem = SaaProblem::from_shards(vec![shard; template.m], template.radius)?;
    let probes = random_probes(template.seed, &x0, template.radius, PROBE_COUNT);
    Ok(estimate_beta(&problem, &probes)?.beta_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerPolicy {
    /// The divisor of `N` closest to `N^{2/3}` on a log scale.
    TwoThirds,
    /// Fixed samples per worker.
    FixedN(usize),
}

impl WorkerPolicy {
    pub fn workers(&self, n_total: usize) -> Result<usize, HarnessError> {
        match *self {
            WorkerPolicy::FixedN(n) if n > 0 && n_total.is_multiple_of(n) => Ok(n_total / n),
            WorkerPolicy::FixedN(n) => Err(HarnessError::Config(format!("n = {n} does not divide N = {n_total}"))),
            WorkerPolicy::TwoThirds => {
                let target = 2.0 / 3.0 * (n_total as f64).ln();
                (1..=n_total)
                    .filter(|m| n_total.is_multiple_of(*m))
                    .min_by(|a, b| {
                        let da = ((*a as f64).ln() - target).abs();
                        let db = ((*b as f64).ln() - target).abs();
                        da.total_cmp(&db)
                    })
                    .ok_or_else(|| HarnessError::Config("N must be positive".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_total: usize,
    pub m: usize,
    pub n: usize,
    pub method: Method,
    pub target_gap: f64,
    pub rounds: Option<u64>,
    pub mu: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    pub slopes: Vec<(Method, f64)>,
}

impl ScalingStudy {
    pub fn slope(&self, method: Method) -> Option<f64> {
        self.slopes.iter().find(|(m, _)| *m == method).map(|(_, s)| *s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,m,n,method,target_gap,rounds,mu,beta,slope\n");
        for r in &self.rows {
            let slope = self.slope(r.method).map_or(String::new(), |s| format!("{s}"));
            let rounds = r.rounds.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{:e},{},{:e},{:e},{}\n",
                r.n_total,
                r.m,
                r.n,
                r.method.name(),
                r.target_gap,
                rounds,
                r.mu,
                r.beta,
                slope
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub template: ProblemConfig,
    #[serde(rename = "N_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_policy")]
    pub policy: WorkerPolicy,
    /// Target gap is `C·L₀·R/√N`.
    #[serde(default = "default_c", rename = "C")]
    pub c: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_policy() -> WorkerPolicy {
    WorkerPolicy::TwoThirds
}

fn default_c() -> f64 {
    1.0
}

fn default_methods() -> Vec<Method> {
    vec![Method::RestartedAcn, Method::Agd]
}

fn default_max_rounds() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaStudySpec {
    pub template: ProblemConfig,
    pub n_list: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_replicates() -> usize {
    5
}

/// Rounds needed to reach the statistical-error level for every `N` and
/// method. Sub-runs execute in parallel; rows come back in `N` order. On
/// failure the rows completed so far are returned with the error.
pub fn scaling_study(spec: &ScalingSpec) -> Result<ScalingStudy, (ScalingStudy, HarnessError)> {
    let empty = || ScalingStudy { rows: Vec::new(), slopes: Vec::new() };
    if spec.n_list.len() < 4 {
        return Err((empty(), HarnessError::Config("the scaling study needs at least four values of N".into())));
    }
    let per_n: Vec<Result<Vec<ScalingRow>, HarnessError>> =
        spec.n_list.par_iter().map(|&n_total| scaling_point(spec, n_total)).collect();
    let mut rows = Vec::new();
    let mut failure = None;
    for r in per_n {
        match r {
            Ok(mut v) if failure.is_none() => rows.append(&mut v),
            Ok(_) => {}
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let mut slopes = Vec::new();
    for &method in &spec.methods {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.rounds.map(|t| (r.n_total as f64, t as f64)))
            .collect();
        if pts.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            slopes.push((method, fit_loglog_slope(&xs, &ys)));
        }
    }
    let study = ScalingStudy { rows, slopes };
    match failure {
        Some(e) => Err((study, e)),
        None => Ok(study),
    }
}

fn scaling_point(spec: &ScalingSpec, n_total: usize) -> Result<Vec<ScalingRow>, HarnessError> {
    let m = spec.policy.workers(n_total)?;
    let cfg = ProblemConfig { n_total, m, ..spec.template.clone() };
    let inst = Instance::build(&cfg)?;
    let reference = inst.reference()?;
    let target = spec.c * inst.l0_data * cfg.radius / (n_total as f64).sqrt();
    let mut rows = Vec::new();
    for &method in &spec.methods {
        let mut run = RunSpec::new(method, Budget::TargetGap(target), &reference);
        run.max_rounds = spec.max_rounds;
        let out = run_method(&inst, &run)?;
        let rounds = out.summary.rounds_to_target;
        if rounds.is_none() {
            return Err(HarnessError::Config(format!(
                "{} did not reach {target:e} within {} rounds at N = {n_total}",
                method.name(),
                spec.max_rounds
            )));
        }
        rows.push(ScalingRow {
            n_total,
            m,
            n: n_total / m,
            method,
            target_gap: target,
            rounds,
            mu: inst.mu,
            beta: out.summary.beta_used,
        });
    }
    Ok(rows)
}
