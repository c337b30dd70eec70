use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn acn(dir: &Path, config: &Value, args: &[&str]) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_acn"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .arg("--config")
        .arg(&path)
        .args(args)
        .output()
        .unwrap()
}

fn run_config(out: &str) -> Value {
    json!({
        "problem": {"kind": "logistic", "N": 64, "d": 3, "m": 4, "seed": 5, "mu_rule": "logN_over_N"},
        "method": "acn",
        "budget": {"t_max": 30},
        "out_dir": out,
        "cache_dir": "cache"
    })
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn gen_writes_shards_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = run_config("a");
    assert_eq!(code(&acn(dir.path(), &cfg, &["gen"])), 0);
    let mut cfg_b = cfg.clone();
    cfg_b["out_dir"] = json!("b");
    assert_eq!(code(&acn(dir.path(), &cfg_b, &["gen"])), 0);
    for k in 1..=4 {
        let name = format!("shard_{k}.bin");
        let a = fs::read(dir.path().join("a").join(&name)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(&name)).unwrap());
    }
    assert!(!dir.path().join("a/shard_5.bin").exists());
    let csv = fs::read_to_string(dir.path().join("a/dataset.csv")).unwrap();
    assert!(csv.starts_with("label,f0,f1,f2\n"));
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = run_config("out");
    assert_eq!(code(&acn(dir.path(), &cfg, &["--set", "problem.m=5", "gen"])), 2);
    assert_eq!(code(&acn(dir.path(), &cfg, &["--set", "problem.bogus=1", "run"])), 2);
    assert_eq!(code(&acn(dir.path(), &cfg, &["--set", "transport=udp:1", "run"])), 2);
    assert_eq!(code(&acn(dir.path(), &cfg, &["--set", "budget={\"target_gap\":-1}", "run"])), 2);
    let missing =
        Command::new(env!("CARGO_BIN_EXE_acn")).args(["--config", "/nonexistent.json", "gen"]).output().unwrap();
    assert_eq!(code(&missing), 2);
}

#[test]
fn reference_is_cached_and_refuses_flat_problems() {
    let dir = TempDir::new().unwrap();
    let cfg = run_config("out");
    assert_eq!(code(&acn(dir.path(), &cfg, &["reference"])), 0);
    let sol: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/reference.json")).unwrap()).unwrap();
    assert!(sol["grad_norm"].as_f64().unwrap() < 1e-12);
    assert_eq!(fs::read_dir(dir.path().join("cache")).unwrap().count(), 1);
    assert_eq!(code(&acn(dir.path(), &cfg, &["reference"])), 0);
    assert_eq!(fs::read_dir(dir.path().join("cache")).unwrap().count(), 1);

    let flat = acn(dir.path(), &cfg, &["--set", "problem.mu_rule={\"intrinsic\":0}", "reference"]);
    assert_ne!(code(&flat), 0);
}

#[test]
fn run_outputs_are_reproducible_and_bounded() {
    let dir = TempDir::new().unwrap();
    let cfg = run_config("first");
    assert_eq!(code(&acn(dir.path(), &cfg, &["run", "--strict"])), 0);
    let mut again = cfg.clone();
    again["out_dir"] = json!("second");
    assert_eq!(code(&acn(dir.path(), &again, &["run", "--strict"])), 0);
    let a = fs::read_to_string(dir.path().join("first/acn.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("second/acn.csv")).unwrap());
    assert!(a.starts_with("method,t,comm_rounds,f_gap,dist_to_opt,wall_ms,beta_used,mu_used\n"));
    assert_eq!(a.lines().count(), 32);
    let rounds: Vec<u64> = a.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(rounds.windows(2).all(|w| w[0] <= w[1]));

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("first/acn_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["bound_violations"], 0);
    assert_eq!(summary["comm_rounds"], 61);
}

#[test]
fn target_budgets_and_methods() {
    let dir = TempDir::new().unwrap();
    let mut cfg = run_config("out");
    cfg["budget"] = json!({"target_gap": 1e-8});
    for method in ["acn", "restarted_acn", "cubic_newton", "agd"] {
        let o = acn(dir.path(), &cfg, &["--set", &format!("method={method}"), "run", "--strict"]);
        assert_eq!(code(&o), 0, "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let s: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(format!("out/{method}_summary.json"))).unwrap())
                .unwrap();
        assert!(s["rounds_to_target"].as_u64().unwrap() > 0, "{method}");
        assert!(s["final_gap"].as_f64().unwrap() <= 1e-8);
    }
}

#[test]
fn tcp_run_matches_inproc() {
    let dir = TempDir::new().unwrap();
    let cfg = run_config("inproc");
    assert_eq!(code(&acn(dir.path(), &cfg, &["run"])), 0);
    let mut tcp = cfg.clone();
    tcp["out_dir"] = json!("tcp");
    tcp["transport"] = json!("tcp:127.0.0.1:0");
    assert_eq!(code(&acn(dir.path(), &tcp, &["run"])), 0);
    assert_eq!(
        fs::read_to_string(dir.path().join("inproc/acn.csv")).unwrap(),
        fs::read_to_string(dir.path().join("tcp/acn.csv")).unwrap()
    );
}

#[test]
fn strict_mode_flags_violations() {
    let dir = TempDir::new().unwrap();
    let mut cfg = run_config("out");
    cfg["problem"] = json!({"kind": "logistic", "N": 256, "d": 5, "m": 8, "seed": 2, "mu_rule": "logN_over_N",
                            "beta_source": {"fixed": 1e-9}});
    cfg["method"] = json!("restarted_acn");
    cfg["budget"] = json!({"t_max": 30});
    assert_eq!(code(&acn(dir.path(), &cfg, &["run"])), 0);
    assert_eq!(code(&acn(dir.path(), &cfg, &["run", "--strict"])), 3);
}

#[test]
fn external_workers_time_out_with_exit_4() {
    let dir = TempDir::new().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let o = acn(dir.path(), &run_config("out"), &["run", "--listen", &addr, "--timeout", "1"]);
    assert_eq!(code(&o), 4);

    let cfg = run_config("out");
    assert_eq!(code(&acn(dir.path(), &cfg, &["gen"])), 0);
    let o = acn(dir.path(), &cfg, &["worker", "--connect", &addr, "--shard", "out/shard_1.bin", "--timeout", "1"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn studies_write_slopes() {
    let dir = TempDir::new().unwrap();
    let template = json!({"kind": "logistic", "N": 64, "d": 3, "m": 4, "seed": 1, "mu_rule": "logN_over_N"});
    let beta = json!({"template": template, "n_list": [16, 32, 64, 128], "replicates": 2, "out_dir": "out"});
    assert_eq!(code(&acn(dir.path(), &beta, &["beta-study"])), 0);
    let csv = fs::read_to_string(dir.path().join("out/beta_study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    let study: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/beta_study.json")).unwrap()).unwrap();
    assert!(study["slope"].as_f64().unwrap() < 0.0);

    let scaling = json!({"template": template, "N_list": [64, 128, 256, 512], "C": 0.01, "out_dir": "out"});
    let o = acn(dir.path(), &scaling, &["scaling"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/scaling.csv")).unwrap();
    assert!(csv.starts_with("N,m,n,method,target_gap,rounds,mu,beta,slope\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    assert!(csv.lines().skip(1).all(|l| !l.ends_with(',')));

    let short = json!({"template": template, "N_list": [64, 128], "out_dir": "short"});
    assert_eq!(code(&acn(dir.path(), &short, &["scaling"])), 2);
    assert!(dir.path().join("short/scaling.csv").exists());
}
