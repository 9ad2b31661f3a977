//! Exit-code and validation behavior of the `panel` binary.

use std::process::Command;

fn panel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_panel"))
}

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("panel_cli_test_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn missing_physics_section_exits_2_naming_it() {
    let cfg = tmp("nophys.ini");
    std::fs::write(
        &cfg,
        "[domain]\nlx = 1.0\nly = 1.0\n\n[basis]\nnx = 2\nny = 2\n\n[delay]\nn_s = 8\n\n[time]\nn_steps = 4\n",
    )
    .unwrap();
    let out = panel()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp("nophys_out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("[physics]"),
        "stderr must name the section: {err}"
    );
}

#[test]
fn unknown_keys_exit_2_with_all_problems() {
    let cfg = tmp("unknown.ini");
    std::fs::write(
        &cfg,
        "[domain]\nlx = 1.0\nly = 1.0\nbogus = 3\n\n[nonsense]\na = 1\n",
    )
    .unwrap();
    let out = panel()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp("unknown_out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("nonsense"), "{err}");
}

#[test]
fn blow_up_exits_3_with_diagnostics_file() {
    // Strongly buckled linear part with negligible cubic saturation.
    let cfg = tmp("blowup.ini");
    std::fs::write(
        &cfg,
        "[domain]\nlx = 1.0\nly = 1.0\n\n[basis]\nnx = 2\nny = 2\n\n[physics]\nflow_speed = 0.0\nstiffness = 1e-12\nprestress = 1e5\nload = zero\nflow_coupling = false\n\n[delay]\nn_s = 64\n\n[time]\nn_steps = 100000\nu0 = 0,0:1.0\n",
    )
    .unwrap();
    let out_dir = tmp("blowup_out");
    let out = panel()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let diag = std::fs::read_to_string(out_dir.join("blowup.txt")).unwrap();
    assert!(diag.contains("blow_up_step"), "{diag}");
}

#[test]
fn check_battery_passes() {
    let out = panel().arg("check").output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 15);
}
