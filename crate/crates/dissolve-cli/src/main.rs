//! Command-line harness: build a problem from a config file, run a solver,
//! verify the library's guarantees on it, or compare algorithms.
//!
//! Exit codes for `run`: 0 converged, 2 iteration budget exhausted,
//! 3 diverged (or aborted on a non-finite direction), 1 configuration
//! error. `verify` exits 0 iff every check passes; `compare` exits with the
//! worst per-run code.

mod config;
mod output;

use std::process::ExitCode;
use std::time::Instant;

use dissolve::diagnostics::{check_equivalence_at_solution, run_battery, EquivalenceTols};
use dissolve::field::FieldVariant;
use dissolve::problem::validate_problem;
use dissolve::problems::{build_preset, Preset};
use dissolve::solver::{run, Algorithm, NullSink, RunStatus, SolverError};

use config::RunConfigFile;
use output::{write_json, CsvSink, FeasWatch};

const USAGE: &str = "\
usage: dissolve <run|verify|compare> [options]

  run      --config PATH [--override KEY=VALUE]... [--force-thresholds] [--trace-stride N]
  verify   --config PATH [--override KEY=VALUE]...
  compare  --config PATH [--config PATH]... [--override KEY=VALUE]... [--force-thresholds]

Overrides use dotted paths into the config sections, e.g.
  --override solver.max_iters=1000";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprintln!("{USAGE}");
        return ExitCode::from(1);
    };
    let code = match command.as_str() {
        "run" => cmd_run(&args[1..]),
        "verify" => cmd_verify(&args[1..]),
        "compare" => cmd_compare(&args[1..]),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            0
        }
        other => {
            eprintln!("unknown subcommand `{other}`\n{USAGE}");
            1
        }
    };
    ExitCode::from(code)
}

struct CommonArgs {
    configs: Vec<String>,
    overrides: Vec<String>,
    force_thresholds: bool,
    trace_stride: Option<usize>,
}

fn parse_args(args: &[String]) -> Result<CommonArgs, String> {
    let mut parsed = CommonArgs {
        configs: Vec::new(),
        overrides: Vec::new(),
        force_thresholds: false,
        trace_stride: None,
    };
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => {
                let value = it.next().ok_or("--config needs a path")?;
                parsed.configs.push(value.clone());
            }
            "--override" => {
                let value = it.next().ok_or("--override needs KEY=VALUE")?;
                parsed.overrides.push(value.clone());
            }
            "--force-thresholds" => parsed.force_thresholds = true,
            "--trace-stride" => {
                let value = it.next().ok_or("--trace-stride needs a number")?;
                let n: usize = value
                    .parse()
                    .map_err(|_| format!("--trace-stride: `{value}` is not a number"))?;
                parsed.trace_stride = Some(n);
            }
            other if !other.starts_with('-') => parsed.configs.push(other.to_string()),
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    if parsed.configs.is_empty() {
        return Err("no --config given".into());
    }
    Ok(parsed)
}

fn status_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Converged => 0,
        RunStatus::MaxIters => 2,
        RunStatus::Diverged => 3,
    }
}

fn run_error_code(err: &SolverError) -> u8 {
    match err {
        SolverError::Config(_) => 1,
        // Oracle blow-ups and stalled inner solves are runtime failures of
        // the same family as divergence.
        _ => 3,
    }
}

fn build_from(file: &RunConfigFile) -> Result<Preset<f64>, String> {
    build_preset::<f64>(
        &file.problem.preset,
        file.problem.n,
        file.problem.p,
        file.problem.seed,
    )
    .map_err(|e| e.to_string())
}

fn variant_of(algorithm: Algorithm) -> FieldVariant {
    match algorithm {
        Algorithm::Alg1Basic => FieldVariant::HatDh,
        Algorithm::Alg2Modified => FieldVariant::HatDs,
        Algorithm::Alg3Inexact => FieldVariant::HatDp,
        Algorithm::ExactDhDescent => FieldVariant::ExactDh,
    }
}

fn cmd_run(args: &[String]) -> u8 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}\n{USAGE}");
            return 1;
        }
    };
    if parsed.configs.len() != 1 {
        eprintln!("error: run takes exactly one --config");
        return 1;
    }
    match run_one(&parsed, &parsed.configs[0], true) {
        Ok((_, code)) => code,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

type RunOutcome = (serde_json::Value, u8);

fn run_one(parsed: &CommonArgs, path: &str, write_outputs: bool) -> Result<RunOutcome, (String, u8)> {
    let file = RunConfigFile::load(path, &parsed.overrides, parsed.trace_stride)
        .map_err(|e| (e.to_string(), 1u8))?;
    let preset = build_from(&file).map_err(|e| (e, 1))?;
    let prob = preset.problem.as_ref();
    let constants = prob.constants();

    let Some(solver_section) = &file.solver else {
        return Err((format!("{path}: missing required section [solver]"), 1));
    };
    let config = solver_section.resolve(&constants, parsed.force_thresholds);
    config.validate(&constants).map_err(|e| (e.to_string(), 1))?;

    let x0 = solver_section
        .x0
        .materialize(prob.dim_x(), "x0")
        .map_err(|e| (e.to_string(), 1))?;
    let y0 = solver_section
        .y0
        .materialize(prob.dim_y(), "y0")
        .map_err(|e| (e.to_string(), 1))?;

    let clock = Instant::now();
    let mut csv = match (&file.output.trace, write_outputs) {
        (Some(trace_path), true) => Some(
            CsvSink::create(trace_path, file.output.trace_stride)
                .map_err(|e| (format!("cannot create trace `{trace_path}`: {e}"), 1))?,
        ),
        _ => None,
    };
    let mut null = NullSink;
    let mut watch = FeasWatch {
        inner: match &mut csv {
            Some(sink) => sink,
            None => &mut null,
        },
        feas_tol: config.stop.feas_tol,
        first_feasible: None,
    };

    let result = run(prob, &config, &x0, &y0, &mut watch).map_err(|e| {
        let code = run_error_code(&e);
        (e.to_string(), code)
    })?;
    let first_feasible = watch.first_feasible;
    let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
    if let Some(sink) = csv {
        sink.finish().map_err(|e| (format!("trace flush failed: {e}"), 1))?;
    }

    let summary = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": "run",
        "config_path": path,
        "problem": file.problem,
        "solver": config,
        "output": file.output,
        "status": result.status,
        "iterations": result.iterations,
        "first_feasible_iteration": first_feasible,
        "final": {
            "h": result.final_h,
            "f_at_A": result.final_f_at_a,
            "feas": result.final_feas,
            "stat_x": result.final_stat_x,
            "dir_norm": result.final_dir_norm,
        },
        "wall_ms": wall_ms,
    });
    if write_outputs {
        if let Some(summary_path) = &file.output.summary {
            write_json(summary_path, &summary)
                .map_err(|e| (format!("cannot write summary `{summary_path}`: {e}"), 1))?;
        }
        println!(
            "{}: {} after {} iterations (feas {:.3e}, stat_x {:.3e}, h {:.9e})",
            file.problem.preset,
            match result.status {
                RunStatus::Converged => "converged",
                RunStatus::MaxIters => "iteration budget exhausted",
                RunStatus::Diverged => "diverged",
            },
            result.iterations,
            result.final_feas,
            result.final_stat_x,
            result.final_h,
        );
    }
    Ok((summary, status_code(result.status)))
}

fn cmd_verify(args: &[String]) -> u8 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}\n{USAGE}");
            return 1;
        }
    };
    if parsed.configs.len() != 1 {
        eprintln!("error: verify takes exactly one --config");
        return 1;
    }
    let path = &parsed.configs[0];
    match verify_one(&parsed, path) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn verify_one(parsed: &CommonArgs, path: &str) -> Result<u8, String> {
    let file =
        RunConfigFile::load(path, &parsed.overrides, parsed.trace_stride).map_err(|e| e.to_string())?;
    let preset = build_from(&file)?;
    let prob = preset.problem.as_ref();

    let mut all_passed = true;
    let mut check_values: Vec<serde_json::Value> = Vec::new();

    // Contract validation first; an unusable problem ends the battery.
    let validation = validate_problem(prob, 25, file.problem.seed);
    println!(
        "check problem_contract: {}",
        if validation.all_passed { "PASS" } else { "FAIL" }
    );
    for check in validation.checks.iter().filter(|c| !c.passed) {
        println!("  - {}: {}", check.name, check.detail);
    }
    all_passed &= validation.all_passed;

    if validation.usable && validation.all_passed {
        let reports = run_battery(&preset, 200, file.problem.seed).map_err(|e| e.to_string())?;
        for report in &reports {
            println!(
                "check {}: {} (worst margin {:+.3e})",
                report.name,
                if report.passed { "PASS" } else { "FAIL" },
                report.worst_margin
            );
            all_passed &= report.passed;
            check_values.push(serde_json::to_value(report).unwrap());
        }

        // With a solver section, certify stationarity equivalence at the
        // endpoint of the configured run.
        if let Some(solver_section) = &file.solver {
            let constants = prob.constants();
            let config = solver_section.resolve(&constants, parsed.force_thresholds);
            config.validate(&constants).map_err(|e| e.to_string())?;
            let x0 = solver_section
                .x0
                .materialize(prob.dim_x(), "x0")
                .map_err(|e| e.to_string())?;
            let y0 = solver_section
                .y0
                .materialize(prob.dim_y(), "y0")
                .map_err(|e| e.to_string())?;
            let mut sink = NullSink;
            let result = run(prob, &config, &x0, &y0, &mut sink).map_err(|e| e.to_string())?;
            let converged = result.status == RunStatus::Converged;
            println!(
                "check solver_convergence: {} ({} iterations)",
                if converged { "PASS" } else { "FAIL" },
                result.iterations
            );
            all_passed &= converged;
            let equivalence = check_equivalence_at_solution(
                prob,
                variant_of(config.algorithm),
                config.beta,
                config.beta_hat,
                &result.x,
                &result.y,
                EquivalenceTols {
                    dir: 1e-3,
                    feas: 1e-3,
                    stat: 1e-2,
                },
            )
            .map_err(|e| e.to_string())?;
            println!(
                "check {}: {} ({})",
                equivalence.name,
                if equivalence.passed { "PASS" } else { "FAIL" },
                equivalence.detail
            );
            all_passed &= equivalence.passed;
            check_values.push(serde_json::to_value(&equivalence).unwrap());
        }
    } else {
        all_passed = false;
    }

    let verdicts = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": "verify",
        "config_path": path,
        "problem": file.problem,
        "validation": validation,
        "checks": check_values,
        "all_passed": all_passed,
    });
    if let Some(summary_path) = &file.output.summary {
        write_json(summary_path, &verdicts).map_err(|e| e.to_string())?;
    }
    println!("verify: {}", if all_passed { "ALL PASS" } else { "FAILED" });
    Ok(if all_passed { 0 } else { 4 })
}

fn cmd_compare(args: &[String]) -> u8 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}\n{USAGE}");
            return 1;
        }
    };
    if parsed.configs.len() < 2 {
        eprintln!("error: compare needs at least two --config paths");
        return 1;
    }

    let mut rows: Vec<(String, serde_json::Value)> = Vec::new();
    let mut worst = 0u8;
    for path in &parsed.configs {
        match run_one(&parsed, path, false) {
            Ok((summary, code)) => {
                worst = worst.max(code);
                rows.push((path.clone(), summary));
            }
            Err((msg, code)) => {
                eprintln!("error in `{path}`: {msg}");
                return code;
            }
        }
    }

    println!(
        "{:<32} {:<16} {:<12} {:>10} {:>10} {:>12} {:>12} {:>10}",
        "config", "algorithm", "status", "iters", "to_feas", "feas", "stat_x", "wall_ms"
    );
    for (path, summary) in &rows {
        let name = std::path::Path::new(path)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.clone());
        let fin = &summary["final"];
        println!(
            "{:<32} {:<16} {:<12} {:>10} {:>10} {:>12.3e} {:>12.3e} {:>10.1}",
            name,
            summary["solver"]["algorithm"].as_str().unwrap_or("?"),
            summary["status"].as_str().unwrap_or("?"),
            summary["iterations"].as_u64().unwrap_or(0),
            summary["first_feasible_iteration"]
                .as_u64()
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".into()),
            fin["feas"].as_f64().unwrap_or(f64::NAN),
            fin["stat_x"].as_f64().unwrap_or(f64::NAN),
            summary["wall_ms"].as_f64().unwrap_or(f64::NAN),
        );
    }
    worst
}
