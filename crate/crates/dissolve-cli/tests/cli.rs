//! End-to-end CLI behavior: exit codes, config handling, output formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dissolve")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dissolve-cli-test-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn dissolve")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

#[test]
fn run_converges_on_the_bundled_config_and_writes_outputs() {
    let dir = scratch("run");
    let trace = dir.join("trace.csv");
    let summary = dir.join("summary.json");
    let out = run_cli(&[
        "run",
        "--config",
        &config("qll_smooth.cfg"),
        "--override",
        &format!("output.trace={}", trace.display()),
        "--override",
        &format!("output.summary={}", summary.display()),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,eta_k,eps1_k,eps2_k,h,f_at_A,feas,stat_x,dir_norm,cg_iters_w,cg_iters_v,wall_nanos"
    );
    let rows = lines.count();
    assert!(rows > 100, "expected a full trace, got {rows} rows");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(summary["status"], "converged");
    assert_eq!(summary["version"], env!("CARGO_PKG_VERSION"));
    assert!(summary["final"]["feas"].as_f64().unwrap() <= 1e-5);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn rerun_produces_bit_identical_traces_modulo_wall_nanos() {
    let dir = scratch("golden");
    let strip_wall = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let mut traces = Vec::new();
    for tag in ["a", "b"] {
        let trace = dir.join(format!("{tag}.csv"));
        let out = run_cli(&[
            "run",
            "--config",
            &config("qll_smooth.cfg"),
            "--override",
            &format!("output.trace={}", trace.display()),
            "--override",
            &format!("output.summary={}", dir.join(format!("{tag}.json")).display()),
        ]);
        assert_eq!(exit_code(&out), 0);
        traces.push(strip_wall(&trace));
    }
    assert_eq!(traces[0], traces[1], "traces differ beyond wall_nanos");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn trace_stride_thins_the_trace() {
    let dir = scratch("stride");
    let trace = dir.join("strided.csv");
    let out = run_cli(&[
        "run",
        "--config",
        &config("qll_smooth.cfg"),
        "--trace-stride",
        "50",
        "--override",
        &format!("output.trace={}", trace.display()),
        "--override",
        &format!("output.summary={}", dir.join("s.json").display()),
    ]);
    assert_eq!(exit_code(&out), 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    // 1610 iterations at stride 50: records at k = 0, 50, ..., 1600.
    assert_eq!(rows.len(), 33);
    assert!(rows[0].starts_with("0,"));
    assert!(rows[1].starts_with("50,"));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn exactly_max_iters_records_with_override() {
    let dir = scratch("maxiters");
    let trace = dir.join("ten.csv");
    let out = run_cli(&[
        "run",
        "--config",
        &config("qll_l1_alg1.cfg"),
        "--override",
        "solver.max_iters=10",
        "--override",
        &format!("output.trace={}", trace.display()),
        "--override",
        &format!("output.summary={}", dir.join("ten.json").display()),
    ]);
    assert_eq!(exit_code(&out), 2, "budget exhausted must exit 2");
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 11, "header plus exactly 10 records");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn sub_threshold_beta_exits_1_naming_the_inequality() {
    let out = run_cli(&[
        "run",
        "--config",
        &config("verify_nqll.cfg"),
        "--override",
        "solver.beta=0.5",
    ]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("β ≥ 2·M_f·Q_g/μ³"), "stderr: {stderr}");

    // The force flag pushes the run through validation.
    let out = run_cli(&[
        "run",
        "--config",
        &config("verify_nqll.cfg"),
        "--override",
        "solver.beta=0.5",
        "--override",
        "solver.max_iters=50",
        "--force-thresholds",
    ]);
    assert_eq!(exit_code(&out), 2, "forced run proceeds to the budget");
}

#[test]
fn unknown_and_missing_keys_are_rejected_with_paths() {
    let dir = scratch("badcfg");
    let bad = dir.join("bad.cfg");
    std::fs::write(
        &bad,
        "[problem]\npreset = qll_smooth\nn = 2\np = 2\nwidgets = 7\n",
    )
    .unwrap();
    let out = run_cli(&["run", "--config", &bad.to_string_lossy()]);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key problem.widgets"));

    let missing = dir.join("missing.cfg");
    std::fs::write(&missing, "[problem]\npreset = qll_smooth\nn = 2\n").unwrap();
    let out = run_cli(&["run", "--config", &missing.to_string_lossy()]);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing required key problem.p"));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn verify_passes_on_the_plain_presets() {
    for cfg in ["verify_qll.cfg", "verify_nqll.cfg"] {
        let out = run_cli(&["verify", "--config", &config(cfg)]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert_eq!(exit_code(&out), 0, "{cfg}: {stdout}");
        assert!(stdout.contains("verify: ALL PASS"));
    }
}

#[test]
fn verify_fails_on_a_corrupted_oracle_naming_the_check() {
    let out = run_cli(&[
        "verify",
        "--config",
        &config("verify_qll.cfg"),
        "--override",
        "problem.preset=qll_smooth_bad_grad",
    ]);
    assert_ne!(exit_code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("problem_contract: FAIL"), "{stdout}");
    assert!(stdout.contains("grad_fd_consistency"), "{stdout}");
}

#[test]
fn compare_runs_all_three_algorithms_deterministically() {
    let args = [
        "compare",
        "--config",
        &config("qll_l1_alg1.cfg"),
        "--config",
        &config("qll_l1_alg2.cfg"),
        "--config",
        &config("qll_l1_alg3.cfg"),
    ];
    let strip_wall = |out: &Output| -> Vec<String> {
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .map(|l| l.rsplit_once(' ').unwrap().0.trim_end().to_string())
            .collect()
    };
    let first = run_cli(&args);
    assert_eq!(exit_code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert_eq!(stdout.matches("converged").count(), 3, "{stdout}");

    let second = run_cli(&args);
    assert_eq!(strip_wall(&first), strip_wall(&second), "tables differ beyond wall time");
}

#[test]
fn compare_with_an_invalid_config_exits_1() {
    let out = run_cli(&[
        "compare",
        "--config",
        &config("qll_l1_alg1.cfg"),
        "--config",
        &config("qll_l1_alg2.cfg"),
        "--override",
        "solver.beta=-1.0",
    ]);
    assert_eq!(exit_code(&out), 1);
}
