use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use acn_bench::config::{load, RunConfig};
use acn_bench::experiment::write_records_csv;
use acn_bench::studies::{beta_study, scaling_study, BetaStudySpec, ScalingSpec};
use acn_bench::{run_method, run_method_on, HarnessError, Instance, RunSpec};
use acn_core::runtime::{read_shard_file, run_worker, write_shard_file, DistRuntime, DEFAULT_TIMEOUT};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acn", version, about = "Distributed cubic Newton experiments")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set problem.m=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and per-worker shard files.
    Gen,
    /// Solve the assembled objective to high accuracy and cache the result.
    Reference,
    /// Run one method and write its trajectory and summary.
    Run {
        /// Exit with status 3 if any bound check fails.
        #[arg(long)]
        strict: bool,
        /// Serve external `acn worker` processes on this address instead of
        /// spawning local workers.
        #[arg(long, value_name = "HOST:PORT")]
        listen: Option<String>,
        /// Seconds to wait for external workers and for each reply.
        #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
        timeout: u64,
    },
    /// Rounds-to-target versus N.
    Scaling,
    /// Empirical similarity versus shard size.
    BetaStudy,
    /// Serve one shard to a listening master.
    Worker {
        #[arg(long, value_name = "HOST:PORT")]
        connect: String,
        #[arg(long)]
        shard: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TIMEOUT.as_secs())]
        timeout: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, HarnessError> {
    let cfg = cli.config.as_deref();
    let sets = &cli.overrides;
    match &cli.command {
        Command::Gen => gen(&load(cfg, sets)?),
        Command::Reference => reference(&load(cfg, sets)?),
        Command::Run { strict, listen, timeout } => {
            run(&load(cfg, sets)?, *strict, listen.as_deref(), Duration::from_secs(*timeout))
        }
        Command::Scaling => {
            let spec: ScalingSpec = load(cfg, sets)?;
            scaling(&spec)
        }
        Command::BetaStudy => {
            let spec: BetaStudySpec = load(cfg, sets)?;
            let study = beta_study(&spec.template, &spec.n_list, spec.replicates)?;
            fs::create_dir_all(&spec.out_dir)?;
            fs::write(spec.out_dir.join("beta_study.csv"), study.to_csv())?;
            fs::write(spec.out_dir.join("beta_study.json"), serde_json::to_string_pretty(&study)?)?;
            println!("slope {:.4}", study.slope);
            Ok(0)
        }
        Command::Worker { connect, shard, timeout } => {
            let (id, shard) = read_shard_file(shard)?;
            run_worker(connect, id, &shard, Duration::from_secs(*timeout))?;
            Ok(0)
        }
    }
}

fn gen(cfg: &RunConfig) -> Result<u8, HarnessError> {
    let inst = Instance::build(&cfg.problem)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    inst.dataset.write_csv(std::io::BufWriter::new(fs::File::create(out.join("dataset.csv"))?))?;
    fs::write(out.join("dataset.bin"), inst.dataset.to_bytes())?;
    for (k, shard) in inst.problem.shards.iter().enumerate() {
        let id = k as u32 + 1;
        write_shard_file(&out.join(format!("shard_{id}.bin")), id, shard)?;
    }
    println!("{} samples, {} shards, mu {:e}, beta {:e}", inst.dataset.len(), inst.problem.m(), inst.mu, inst.beta);
    Ok(0)
}

fn reference(cfg: &RunConfig) -> Result<u8, HarnessError> {
    let inst = Instance::build(&cfg.problem)?;
    let sol = inst.cached_reference(&cfg.cache_dir)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("reference.json"), serde_json::to_string_pretty(&sol)?)?;
    println!("f* {:.17e}, |grad| {:e}, {} Newton steps", sol.f_star, sol.grad_norm, sol.iterations);
    Ok(0)
}

fn run(cfg: &RunConfig, strict: bool, listen: Option<&str>, timeout: Duration) -> Result<u8, HarnessError> {
    cfg.validate()?;
    let inst = Instance::build(&cfg.problem)?;
    let sol = inst.cached_reference(&cfg.cache_dir)?;
    let mut spec = RunSpec::new(cfg.method, cfg.budget, &sol);
    spec.max_rounds = cfg.max_rounds;
    spec.transport = cfg.transport()?;
    spec.r0 = cfg.r0;
    spec.record_wall_time = cfg.record_wall_time;
    let outcome = match listen {
        Some(addr) => {
            let master = inst.problem.shards[cfg.problem.master_shard].clone();
            let rt = DistRuntime::listen(addr, inst.problem.m(), master, timeout)?;
            run_method_on(&inst, &spec, rt)?
        }
        None => run_method(&inst, &spec)?,
    };
    let name = cfg.method.name();
    fs::create_dir_all(&cfg.out_dir)?;
    write_records_csv(&cfg.out_dir.join(format!("{name}.csv")), &outcome.records)?;
    fs::write(cfg.out_dir.join(format!("{name}_summary.json")), serde_json::to_string_pretty(&outcome.summary)?)?;
    let s = &outcome.summary;
    println!(
        "{name}: {} iterations, {} rounds, gap {}, bound checks {}/{} ok",
        s.iterations,
        s.comm_rounds,
        s.final_gap.map_or("n/a".into(), |g| format!("{g:e}")),
        s.bound_checks - s.bound_violations,
        s.bound_checks
    );
    if strict && s.bound_violations > 0 {
        log::error!("{} bound violations", s.bound_violations);
        return Ok(3);
    }
    Ok(0)
}

fn scaling(spec: &ScalingSpec) -> Result<u8, HarnessError> {
    let out = &spec.out_dir;
    fs::create_dir_all(out)?;
    let (study, err) = match scaling_study(spec) {
        Ok(s) => (s, None),
        Err((s, e)) => (s, Some(e)),
    };
    fs::write(out.join("scaling.csv"), study.to_csv())?;
    fs::write(out.join("scaling.json"), serde_json::to_string_pretty(&study)?)?;
    if let Some(e) = err {
        return Err(e);
    }
    for (m, s) in &study.slopes {
        println!("{}: slope {s:.4}", m.name());
    }
    Ok(0)
}
