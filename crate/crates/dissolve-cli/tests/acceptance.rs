//! Acceptance suite for the harness: determinism of the bundled run and
//! the full verification battery through the binary.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

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

#[test]
fn criterion_8_determinism_and_verification() {
    let clock = Instant::now();
    let dir = std::env::temp_dir().join(format!("dissolve-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    // Two identical runs of the bundled config: traces must agree bitwise
    // once the wall-clock column is stripped.
    let mut traces: Vec<Vec<String>> = Vec::new();
    for tag in ["first", "second"] {
        let trace = dir.join(format!("{tag}.csv"));
        let status = Command::new(bin())
            .args([
                "run",
                "--config",
                &config("qll_smooth.cfg"),
                "--override",
                &format!("output.trace={}", trace.display()),
                "--override",
                &format!("output.summary={}", dir.join(format!("{tag}.json")).display()),
            ])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "bundled run must converge");
        traces.push(
            std::fs::read_to_string(&trace)
                .unwrap()
                .lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect(),
        );
    }
    let identical = traces[0] == traces[1];

    // Full battery on the quadratic and non-quadratic presets.
    let mut verified = true;
    for cfg in ["verify_qll.cfg", "verify_nqll.cfg"] {
        let status = Command::new(bin())
            .args(["verify", "--config", &config(cfg)])
            .status()
            .unwrap();
        verified &= status.code() == Some(0);
    }

    let elapsed = clock.elapsed().as_secs_f64();
    let pass = identical && verified && elapsed <= 180.0;
    println!(
        "criterion 8 (determinism and verification): {} — traces identical modulo wall_nanos: \
         {identical}; verify batteries exit 0: {verified}; {elapsed:.1}s",
        if pass { "PASS" } else { "FAIL" }
    );
    std::fs::remove_dir_all(dir).ok();
    assert!(pass);
}
