//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use acn_bench::experiment::{gap_bound, rate_violations};
use acn_bench::studies::{beta_study, identical_shard_beta, scaling_study, ScalingSpec, WorkerPolicy};
use acn_bench::{BetaSource, Budget, Instance, Method, ProblemConfig, RunSpec};
use acn_core::acn::AcnState;
use acn_core::cubic::{solve_cubic_subproblem, CubicSubproblem, EstimateSequence};
use acn_core::objective::check_derivatives;
use acn_core::rng::{self, STREAM_USER};
use acn_core::{
    acn_run, cubic_newton_run, run_restarted, EsCoefficient, MuRule, ObjectiveKind, ObjectiveShard, Reference,
    RestartStop, Transport,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rate_suite() -> ProblemConfig {
    ProblemConfig {
        kind: ObjectiveKind::Logistic,
        n_total: 256,
        d: 20,
        m: 4,
        seed: 7,
        feat_bound: 1.0,
        spectrum_decay: 0.0,
        mu_rule: MuRule::LogNOverN,
        mu_scale: 1.0,
        radius: 2.0,
        beta_source: BetaSource::Empirical,
        beta_scale: 1.0,
        master_shard: 0,
    }
}

fn rate_bound() -> Verdict {
    let start = Instant::now();
    let inst = Instance::build(&rate_suite()).unwrap();
    let sol = inst.reference().unwrap();
    let out = acn_bench::run_method(&inst, &RunSpec::new(Method::Acn, Budget::TMax(200), &sol)).unwrap();
    let d0 = out.summary.initial_dist;
    let (checks, violations) = rate_violations(&out.run, inst.lipschitz_hessian(), inst.beta, d0, sol.f_star);
    let worst = out
        .run
        .trajectory
        .iter()
        .filter(|p| p.t >= 1)
        .map(|p| p.f_gap.unwrap() / gap_bound(inst.lipschitz_hessian(), inst.beta, d0, p.t))
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        checks == 201 && violations == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{checks} iterates, {violations} violations, max gap/bound {worst:.3e}, β = {:.4e}, L = {:.4e}, {elapsed:.2?}",
            inst.beta,
            inst.lipschitz_hessian()
        ),
    )
}

fn restart_suites() -> Vec<ProblemConfig> {
    let logistic = ProblemConfig {
        kind: ObjectiveKind::Logistic,
        n_total: 512,
        d: 10,
        m: 4,
        seed: 5,
        mu_rule: MuRule::Intrinsic(0.1),
        ..rate_suite()
    };
    let quadratic = ProblemConfig { kind: ObjectiveKind::Quadratic, seed: 6, ..logistic.clone() };
    vec![logistic, quadratic]
}

fn restart_halving() -> Verdict {
    let mut details = Vec::new();
    let mut pass = true;
    for cfg in restart_suites() {
        let inst = Instance::build(&cfg).unwrap();
        let sol = inst.reference().unwrap();
        let x_star = sol.x();
        let plan = inst.restart_plan(None).unwrap();
        let reference = Reference::new(&inst.problem, sol.f_star, &x_star);
        let mut rt = inst.runtime(&Transport::InProc).unwrap();
        let out =
            run_restarted(&mut rt, inst.x0(), &plan, RestartStop::Stages(8), EsCoefficient::Current, Some(&reference))
                .unwrap();
        let floor = 1e-11 * plan.r0;
        let mut violations = 0;
        let mut schedule_mismatch = 0;
        let mut rounds = 0;
        for st in &out.trace.stages {
            let dist = st.dist_to_opt.unwrap();
            if dist > plan.radius(st.s).max(floor) {
                violations += 1;
            }
            let gap_bound = plan.mu * plan.r0 * plan.r0 * 0.5f64.powi(2 * st.s as i32 + 1);
            if st.f_gap.unwrap() > gap_bound.max(plan.mu * floor * floor) + 1e-12 {
                violations += 1;
            }
            rounds += st.stage_rounds;
            if st.iterations_run != plan.iterations(st.s) || st.stage_rounds != 2 * plan.iterations(st.s) as u64 + 1 {
                schedule_mismatch += 1;
            }
        }
        let initial = (inst.x0() - &x_star).norm();
        pass &= out.trace.stages.len() == 8
            && violations == 0
            && schedule_mismatch == 0
            && rounds == rt.comm_rounds()
            && initial <= plan.r0;
        let last = out.trace.stages.last().unwrap();
        details.push(format!(
            "{}: R0 = {:.3e}, t_s = {:?}, final dist {:.2e} (R_8 = {:.2e}), {violations} violations, {schedule_mismatch} schedule mismatches",
            cfg.kind,
            plan.r0,
            out.trace.stages.iter().map(|s| s.t_s).collect::<Vec<_>>(),
            last.dist_to_opt.unwrap(),
            plan.radius(8)
        ));
    }
    verdict(pass, details.join("; "))
}

fn grid_minimum(p: &CubicSubproblem) -> (DVector<f64>, f64) {
    let n = 6001;
    let coord = |i: usize| -3.0 + 1e-3 * i as f64;
    let (g0, g1) = (p.g[0], p.g[1]);
    let (h00, h01, h11) = (p.h[(0, 0)], 0.5 * (p.h[(0, 1)] + p.h[(1, 0)]), p.h[(1, 1)]);
    let m6 = p.m / 6.0;
    let model = |u: f64, v: f64| {
        let r = (u * u + v * v).sqrt();
        g0 * u + g1 * v + 0.5 * (h00 * u * u + 2.0 * h01 * u * v + h11 * v * v) + m6 * r * r * r
    };
    let (bi, bj, _) = (0..n)
        .into_par_iter()
        .map(|i| {
            let u = coord(i);
            let mut best = (i, 0, f64::INFINITY);
            for j in 0..n {
                let v = model(u, coord(j));
                if v < best.2 {
                    best = (i, j, v);
                }
            }
            best
        })
        .reduce(|| (0, 0, f64::INFINITY), |a, b| if b.2 < a.2 { b } else { a });
    let h = DVector::from_column_slice(&[coord(bi), coord(bj)]);
    let v = p.model(&h);
    (h, v)
}

fn random_psd_instance(rng: &mut impl Rng) -> CubicSubproblem {
    loop {
        let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut h = &b * b.transpose();
        if rng.random_bool(0.2) {
            // Rank-deficient Hessian.
            let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            h = &u * u.transpose();
        }
        let g = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let m = rng.random_range(0.5..4.0);
        let p = CubicSubproblem::new(g, h, m);
        let step = solve_cubic_subproblem(&p, 1e-10).unwrap();
        if step.h.amax() < 2.8 {
            return p;
        }
    }
}

fn cubic_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = rng::stream(31, STREAM_USER);
    let mut worst_arg = 0.0_f64;
    let mut worst_obj = 0.0_f64;
    let mut worst_kkt = 0.0_f64;
    let mut failures = 0;
    for _ in 0..50 {
        let p = random_psd_instance(&mut rng);
        let step = solve_cubic_subproblem(&p, 1e-10).unwrap();
        let (grid_h, grid_v) = grid_minimum(&p);
        let arg = (&step.h - &grid_h).amax();
        let obj = (p.model(&step.h) - grid_v).abs();
        let kkt = p.stationarity_residual(&step.h) / (1.0 + p.g.norm());
        worst_arg = worst_arg.max(arg);
        worst_obj = worst_obj.max(obj);
        worst_kkt = worst_kkt.max(kkt);
        if arg > 2e-3 || obj > 1e-5 || kkt > 1e-8 || p.model(&step.h) > grid_v + 1e-12 {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures == 0 && elapsed < Duration::from_secs(30),
        format!(
            "50 instances, {failures} failures, max arg err {worst_arg:.2e}, max obj err {worst_obj:.2e}, max scaled residual {worst_kkt:.2e}, {elapsed:.2?}"
        ),
    )
}

/// Minimizer of `−‖s‖r + a r² + b r³` over `r ≥ 0` by two nested grid scans.
fn brute_radius(sn: f64, a: f64, b: f64) -> f64 {
    let phi = |r: f64| -sn * r + a * r * r + b * r * r * r;
    let scan = |lo: f64, hi: f64| {
        let n = 100_000;
        let step = (hi - lo) / n as f64;
        let best = (0..=n).map(|i| lo + step * i as f64).min_by(|x, y| phi(*x).total_cmp(&phi(*y))).unwrap();
        (best, step)
    };
    let hi = if a > 0.0 { sn / (2.0 * a) } else { (sn / (3.0 * b)).sqrt() };
    let (r1, s1) = scan(0.0, hi);
    let (r2, s2) = scan((r1 - s1).max(0.0), r1 + s1);
    scan((r2 - s2).max(0.0), r2 + s2).0
}

fn estimate_sequence_minimizer() -> Verdict {
    let mut rng = rng::stream(41, STREAM_USER);
    let mut worst_res = 0.0_f64;
    let mut worst_brute = 0.0_f64;
    let mut failures = 0;
    for i in 0..100 {
        let d = 1 + i % 5;
        let s = DVector::from_fn(d, |_, _| rng.random_range(-10.0..10.0));
        let a = if i % 10 == 0 { 0.0 } else { rng.random_range(0.0..5.0) };
        let b = if i % 10 == 5 { 0.0 } else { rng.random_range(0.01..5.0) };
        let es = EstimateSequence { s: s.clone(), a, b, x0: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)) };
        let r = es.radius().unwrap();
        let sn = s.norm();
        let res = (2.0 * a * r + 3.0 * b * r * r - sn).abs() / (1.0 + sn);
        let brute = (r - brute_radius(sn, a, b)).abs();
        let y = es.minimize().unwrap();
        let step = ((&y - &es.x0).norm() - r).abs();
        worst_res = worst_res.max(res);
        worst_brute = worst_brute.max(brute);
        if res > 1e-10 || brute > 1e-6 || step > 1e-12 * (1.0 + r) {
            failures += 1;
        }
    }
    verdict(
        failures == 0,
        format!("100 draws, {failures} failures, max scaled residual {worst_res:.2e}, max brute-force gap {worst_brute:.2e}"),
    )
}

fn sandwich() -> Verdict {
    let inst = Instance::build(&rate_suite()).unwrap();
    let mut rt = inst.runtime(&Transport::InProc).unwrap();
    let mut state = AcnState::init(&mut rt, inst.x0(), inst.acn_params()).unwrap();
    let master = inst.config.master_shard;
    let (mut held, mut failed_condition, mut bad) = (0, 0, 0);
    let mut worst_local = 0.0_f64;
    for _ in 0..200 {
        state.step(&mut rt).unwrap();
        let chk = inst.problem.sandwich(master, &state.w, inst.beta).unwrap();
        worst_local = worst_local.max(chk.beta_local);
        if chk.condition_holds() {
            held += 1;
            let tol = 1e-12 * (1.0 + inst.beta);
            if !chk.contained(tol) || chk.min_eig < 2.0 * chk.beta_local - tol {
                bad += 1;
            }
        } else {
            failed_condition += 1;
            eprintln!("    β below local deviation at t = {}: {:.4e} > {:.4e}", state.t, chk.beta_local, inst.beta);
        }
    }
    verdict(
        bad == 0,
        format!(
            "200 points, condition held at {held} ({failed_condition} logged), {bad} containment failures, max local deviation {worst_local:.4e} vs β = {:.4e}",
            inst.beta
        ),
    )
}

fn beta_scaling() -> Verdict {
    let start = Instant::now();
    let template = ProblemConfig { d: 10, m: 4, n_total: 64, seed: 100, ..rate_suite() };
    let n_list: Vec<usize> = (4..=10).map(|k| 1 << k).collect();
    let study = beta_study(&template, &n_list, 5).unwrap();
    let control = identical_shard_beta(&template, 64).unwrap();
    let monotone = study.medians.windows(2).all(|w| w[1].1 <= w[0].1);
    let elapsed = start.elapsed();
    verdict(
        (-0.65..=-0.35).contains(&study.slope) && control == 0.0 && elapsed < Duration::from_secs(120),
        format!(
            "slope {:.3}, medians {:?}, monotone {monotone}, identical-shard β̂ = {control}, {elapsed:.2?}",
            study.slope,
            study.medians.iter().map(|(n, b)| format!("{n}:{b:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn accounting() -> Verdict {
    let inst = Instance::build(&rate_suite()).unwrap();
    let mut ok = true;
    for t in [0usize, 1, 5, 17] {
        let mut rt = inst.runtime(&Transport::InProc).unwrap();
        acn_run(&mut rt, inst.x0(), inst.acn_params(), t, None).unwrap();
        ok &= rt.comm_rounds() == 2 * t as u64 + 1;
        let mut rt = inst.runtime(&Transport::InProc).unwrap();
        cubic_newton_run(&mut rt, inst.x0(), inst.acn_params(), t, None).unwrap();
        ok &= rt.comm_rounds() == t as u64 + 1;
    }
    let mut inproc = inst.runtime(&Transport::InProc).unwrap();
    let mut tcp = inst.runtime(&Transport::Tcp("127.0.0.1:0".into())).unwrap();
    let a = acn_run(&mut inproc, inst.x0(), inst.acn_params(), 50, None).unwrap();
    let b = acn_run(&mut tcp, inst.x0(), inst.acn_params(), 50, None).unwrap();
    tcp.shutdown();
    let identical = a.trajectory.len() == b.trajectory.len()
        && a.trajectory.iter().zip(&b.trajectory).all(|(p, q)| {
            p.comm_rounds == q.comm_rounds && p.x.iter().zip(q.x.iter()).all(|(u, v)| u.to_bits() == v.to_bits())
        });
    verdict(
        ok && identical,
        format!("round counts exact: {ok}; in-process vs TCP over 50 iterations bitwise identical: {identical}"),
    )
}

fn comparison_suite(decay: f64, mu: f64) -> ProblemConfig {
    ProblemConfig {
        kind: ObjectiveKind::Logistic,
        n_total: 8 * 512,
        d: 30,
        m: 8,
        seed: 11,
        spectrum_decay: decay,
        mu_rule: MuRule::Intrinsic(mu),
        ..rate_suite()
    }
}

fn rounds_to_gap(cfg: &ProblemConfig, target: f64) -> Vec<(Method, Option<u64>)> {
    let inst = Instance::build(cfg).unwrap();
    let sol = inst.reference().unwrap();
    [Method::RestartedAcn, Method::CubicNewton, Method::Agd]
        .into_iter()
        .map(|m| {
            let mut spec = RunSpec::new(m, Budget::TargetGap(target), &sol);
            spec.max_rounds = 5000;
            (m, acn_bench::run_method(&inst, &spec).unwrap().summary.rounds_to_target)
        })
        .collect()
}

fn acceleration() -> Verdict {
    let rounds = rounds_to_gap(&comparison_suite(1.0, 1e-6), 1e-6);
    let get = |m: Method| rounds.iter().find(|(k, _)| *k == m).unwrap().1;
    let (acn, cn, agd) = (get(Method::RestartedAcn), get(Method::CubicNewton), get(Method::Agd));
    let ratio = |a: Option<u64>, b: Option<u64>| match (a, b) {
        (Some(a), Some(b)) => format!("{:.3}", a as f64 / b as f64),
        _ => "n/a".into(),
    };
    let pass = match (acn, cn, agd) {
        (Some(a), Some(c), Some(g)) => a <= c && a <= g,
        _ => false,
    };
    let well = rounds_to_gap(&comparison_suite(0.0, 0.1), 1e-6);
    verdict(
        pass,
        format!(
            "rounds restarted/cubic/agd = {acn:?}/{cn:?}/{agd:?}, ratios vs cubic {} vs agd {}; well-conditioned isotropic control: {:?}",
            ratio(acn, cn),
            ratio(acn, agd),
            well.iter().map(|(m, r)| format!("{}={}", m.name(), r.map_or("-".into(), |v| v.to_string()))).collect::<Vec<_>>()
        ),
    )
}

fn scaling() -> Verdict {
    let start = Instant::now();
    let spec = ScalingSpec {
        template: ProblemConfig {
            d: 5,
            m: 1,
            n_total: 1024,
            seed: 3,
            spectrum_decay: 1.0,
            mu_rule: MuRule::InvSqrtN,
            ..rate_suite()
        },
        n_list: (10..=16).map(|k| 1 << k).collect(),
        policy: WorkerPolicy::TwoThirds,
        c: 1e-4,
        methods: vec![Method::RestartedAcn, Method::Agd],
        max_rounds: 100_000,
        out_dir: "out".into(),
    };
    let study = match scaling_study(&spec) {
        Ok(s) => s,
        Err((_, e)) => return verdict(false, format!("study failed: {e}")),
    };
    let acn = study.slope(Method::RestartedAcn).unwrap();
    let agd = study.slope(Method::Agd).unwrap();
    let elapsed = start.elapsed();
    let table: Vec<String> =
        study.rows.iter().map(|r| format!("{}:{}={}", r.n_total, r.method.name(), r.rounds.unwrap())).collect();
    verdict(
        (0.0..=0.4).contains(&acn) && acn < agd && elapsed < Duration::from_secs(600),
        format!("slopes restarted {acn:.3}, agd {agd:.3}; {} ; {elapsed:.2?}", table.join(" ")),
    )
}

fn derivatives() -> Verdict {
    let mut rng = rng::stream(51, STREAM_USER);
    let mut worst = (0.0_f64, 0.0_f64);
    let mut failures = 0;
    for kind in [ObjectiveKind::Logistic, ObjectiveKind::Quadratic] {
        let ds = acn_core::gen_synthetic(9, 40, 6, kind, 1.0).unwrap();
        let shard = ObjectiveShard::from_samples(kind, &ds.samples, 0.05, DVector::zeros(6)).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            let r = check_derivatives(&shard, &x, 1e-5).unwrap();
            worst = (worst.0.max(r.max_rel_err_grad), worst.1.max(r.max_rel_err_hess));
            if r.max_rel_err_grad > 1e-5 || r.max_rel_err_hess > 1e-4 {
                failures += 1;
            }
        }
    }
    verdict(
        failures == 0,
        format!("40 points, {failures} failures, max gradient err {:.2e}, max Hessian err {:.2e}", worst.0, worst.1),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("accelerated sublinear rate bound", rate_bound),
        ("restart halving and schedule", restart_halving),
        ("cubic subproblem vs grid oracle", cubic_oracle),
        ("estimate-sequence minimizer", estimate_sequence_minimizer),
        ("preconditioner sandwich", sandwich),
        ("similarity decay with n", beta_scaling),
        ("communication accounting and transport equivalence", accounting),
        ("acceleration comparison", acceleration),
        ("rounds vs N scaling", scaling),
        ("finite-difference derivative checks", derivatives),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("[{:>2}] {}: {} ({})", i + 1, if v.pass { "PASS" } else { "FAIL" }, name, v.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
