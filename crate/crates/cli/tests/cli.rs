use std::path::PathBuf;
use std::process::{Command, Output};

fn diffsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffsim")).args(args).output().expect("running diffsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn scenes_lists_the_bundled_scenes() {
    let o = diffsim(&["scenes"]);
    assert!(o.status.success());
    let names: Vec<_> = stdout(&o).lines().map(str::to_string).collect();
    for n in ["cube_on_plane", "cube_slide", "chain12", "quadruped", "free_fall", "sphere_drop"] {
        assert!(names.iter().any(|x| x == n), "{n} missing from {names:?}");
    }
}

#[test]
fn free_fall_follows_symplectic_euler() {
    let o = diffsim(&["simulate", "--scene", "free_fall", "--steps", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&stdout(&o));
    let header = &table[0];
    let z = header.iter().position(|h| h == "q2").unwrap();
    let vz = header.iter().position(|h| h == "v5").unwrap();
    assert_eq!(table.len(), 52);
    let (g, dt) = (9.81, 0.01);
    for (k, row) in table[1..].iter().enumerate() {
        let k = k as f64;
        let z_k: f64 = row[z].parse().unwrap();
        let v_k: f64 = row[vz].parse().unwrap();
        assert!((v_k + g * dt * k).abs() < 1e-12, "step {k}: v {v_k}");
        assert!((z_k - (10.0 - g * dt * dt * k * (k + 1.0) / 2.0)).abs() < 1e-12, "step {k}: z {z_k}");
    }
}

#[test]
fn simulate_writes_contacts() {
    let traj = tmp("sphere_traj.csv");
    let contacts = tmp("sphere_contacts.csv");
    let o = diffsim(&[
        "simulate",
        "--scene",
        "sphere_drop",
        "--steps",
        "100",
        "--out",
        traj.to_str().unwrap(),
        "--contacts",
        contacts.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let c = rows(&std::fs::read_to_string(contacts).unwrap());
    assert_eq!(c[0], ["step", "pair", "corner", "mode", "signed_distance", "lambda_x", "lambda_y", "lambda_n"]);
    assert!(c.len() > 1, "the sphere should land within 100 steps");
}

#[test]
fn fdcheck_passes_on_cube_slide() {
    let o = diffsim(&["fdcheck", "--scene", "cube_slide"]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("pass"));
}

#[test]
fn fdcheck_fails_with_an_impossible_tolerance() {
    let o = diffsim(&["fdcheck", "--scene", "cube_slide", "--tol", "1e-300"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn jacobian_has_one_row_per_output() {
    let o = diffsim(&["jacobian", "--scene", "chain12", "--theta", "tau"]);
    assert!(o.status.success());
    let table = rows(&stdout(&o));
    assert_eq!(table.len(), 1 + 12 + 12);
    assert!(table.iter().all(|r| r.len() == table[0].len()));
}

#[test]
fn inverse_dynamics_converges_on_the_quadruped() {
    let trace = tmp("invdyn_trace.csv");
    let o =
        diffsim(&["solve-inverse", "--scene", "quadruped", "--problem", "invdyn", "--out", trace.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("status converged"));
    assert!(rows(&std::fs::read_to_string(trace).unwrap()).len() > 1);
}

#[test]
fn initial_velocity_is_recovered_from_a_simulated_target() {
    let target = tmp("slide_target.csv");
    let o = diffsim(&["simulate", "--scene", "cube_slide", "--steps", "20", "--out", target.to_str().unwrap()]);
    assert!(o.status.success());
    let mut scene: serde_json::Value =
        serde_json::from_slice(&diffsim(&["dump", "--scene", "cube_slide"]).stdout).unwrap();
    scene["initial"]["v"][3] = 1.7.into();
    scene["initial"]["v"][4] = 0.7.into();
    let guess = tmp("slide_guess.json");
    std::fs::write(&guess, scene.to_string()).unwrap();
    let o = diffsim(&[
        "solve-inverse",
        "--scene",
        guess.to_str().unwrap(),
        "--problem",
        "estimate-v0",
        "--target",
        target.to_str().unwrap(),
        "--dofs",
        "3,4",
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let estimate: Vec<f64> = text
        .lines()
        .find_map(|l| l.strip_prefix("estimate "))
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((estimate[3] - 2.0).abs() < 1e-6 && (estimate[4] - 0.5).abs() < 1e-6, "{estimate:?}");
}

#[test]
fn dump_round_trips_through_a_file() {
    let path = tmp("chain12_dump.json");
    assert!(diffsim(&["dump", "--scene", "chain12", "--out", path.to_str().unwrap()]).status.success());
    let first = std::fs::read_to_string(&path).unwrap();
    let again = diffsim(&["dump", "--scene", path.to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), first);
}

#[test]
fn bench_writes_a_report() {
    let out = tmp("bench.csv");
    let o = diffsim(&[
        "bench",
        "--scene",
        "cube_on_plane",
        "--reps",
        "100",
        "--warmup",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(rows(&std::fs::read_to_string(out).unwrap()).len() >= 4);
}

#[test]
fn invalid_arguments_exit_with_status_2() {
    for args in [
        &["simulate", "--scene", "free_fall", "--steps", "0"][..],
        &["simulate", "--scene", "no_such_scene"],
        &["bench", "--scene", "free_fall", "--reps", "5"],
        &["jacobian", "--scene", "free_fall", "--theta", "bogus"],
        &["solve-inverse", "--scene", "cube_slide", "--problem", "estimate-v0"],
        &["frobnicate"],
    ] {
        let o = diffsim(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn sim_log_enables_logging() {
    let o = Command::new(env!("CARGO_BIN_EXE_diffsim"))
        .args(["simulate", "--scene", "free_fall", "--steps", "1"])
        .env("SIM_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("scene free_fall"));
}
