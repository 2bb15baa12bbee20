//! End-to-end runs of the shapetrack binary: generation, training, fitting
//! and scoring, plus the exit-code contract for bad input.

use std::path::Path;
use std::process::{Command, Output};

use shapetrack::sdf_grid::GridSpec;
use shapetrack::synth::car_shape_family;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapetrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        stdout(out),
        stderr(out)
    );
}

fn assert_input_error(out: &Output) {
    assert_eq!(
        out.status.code(),
        Some(2),
        "expected exit 2\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_preset(name: &str, dir: &Path) {
    assert_ok(&run(&["gen", "--preset", name, "--out", path_str(dir)]));
}

#[test]
fn static_preset_pipeline_recovers_the_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    gen_preset("static-20-frames", &scene);
    for file in ["track.json", "gt.json", "manifold.sman"] {
        assert!(scene.join(file).is_file(), "{file} missing after gen");
    }
    assert!(scene.join("clouds").join("frame_000.xyz").is_file());

    let fit_path = tmp.path().join("static.fit.json");
    let surf_dir = tmp.path().join("surfaces");
    let traj_path = tmp.path().join("trajectory.csv");
    let out = run(&[
        "fit",
        "--track",
        path_str(&scene.join("track.json")),
        "--manifold",
        path_str(&scene.join("manifold.sman")),
        "--out",
        path_str(&fit_path),
        "--report",
        "--export-surfaces",
        path_str(&surf_dir),
        "--export-trajectory",
        path_str(&traj_path),
    ]);
    assert_ok(&out);
    assert!(stdout(&out).contains("converged true"));

    let ply = std::fs::read_to_string(surf_dir.join("frame_000.ply")).unwrap();
    assert!(surf_dir.join("frame_019.ply").is_file(), "one cloud per frame");
    let mut lines = ply.lines();
    assert_eq!(lines.next(), Some("ply"));
    assert_eq!(lines.next(), Some("format ascii 1.0"));
    let vertices: usize = ply
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .expect("vertex count in header")
        .parse()
        .unwrap();
    assert!(vertices > 0);
    assert_eq!(ply.lines().count(), vertices + 7, "declared count matches the data");

    let traj = std::fs::read_to_string(&traj_path).unwrap();
    let rows: Vec<&str> = traj.lines().collect();
    assert_eq!(rows[0], "frame,t_s,t_x,t_y,t_z,yaw_rad,v_mps,omega_radps");
    assert_eq!(rows.len(), 21, "header plus one row per frame:\n{traj}");

    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fit_path).unwrap()).unwrap();
    assert_eq!(fit["converged"], serde_json::Value::Bool(true));
    let energy = fit["energy"].as_f64().unwrap();
    // noise-free scene at the mean shape: nothing left to explain
    assert!(energy < 1e-6, "energy {energy}");

    let report_path = tmp.path().join("static.fit.report.json");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(!report["passes"].as_array().unwrap().is_empty());

    let csv_path = tmp.path().join("scores.csv");
    let out = run(&[
        "eval",
        "--fit",
        path_str(&fit_path),
        "--gt",
        path_str(&scene.join("gt.json")),
        "--manifold",
        path_str(&scene.join("manifold.sman")),
        "--tau",
        "0.2,0.1",
        "--out",
        path_str(&csv_path),
    ]);
    assert_ok(&out);
    assert!(tmp.path().join("scores.json").is_file());
    assert!(tmp.path().join("scores.dat").is_file());

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header plus one row per threshold:\n{csv}");
    assert!(lines[0].starts_with("track_id,tau_m,completeness_pct"));
    let f1: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert!(f1 >= 99.0, "F1 {f1} at tau 0.2 on a noise-free static scene");
}

#[test]
fn generation_is_deterministic_in_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_preset("straight-20-frames", &a);
    gen_preset("straight-20-frames", &b);
    for file in ["track.json", "gt.json", "clouds/frame_007.xyz"] {
        let lhs = std::fs::read(a.join(file)).unwrap();
        let rhs = std::fs::read(b.join(file)).unwrap();
        assert_eq!(lhs, rhs, "{file} differs between same-seed runs");
    }

    let c = tmp.path().join("c");
    assert_ok(&run(&[
        "gen",
        "--preset",
        "straight-20-frames",
        "--out",
        path_str(&c),
        "--seed",
        "999",
    ]));
    let base = std::fs::read(a.join("track.json")).unwrap();
    let reseeded = std::fs::read(c.join("track.json")).unwrap();
    assert_ne!(base, reseeded, "seed override had no effect");
}

#[test]
fn unknown_preset_lists_the_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--preset", "bogus", "--out", path_str(tmp.path())]);
    assert_input_error(&out);
    let err = stderr(&out);
    assert!(err.contains("available"), "{err}");
    assert!(err.contains("static-20-frames"), "{err}");
}

#[test]
fn gen_needs_exactly_one_scenario_source() {
    let tmp = tempfile::tempdir().unwrap();
    assert_input_error(&run(&["gen", "--out", path_str(tmp.path())]));
    assert_input_error(&run(&[
        "gen",
        "--preset",
        "static-20-frames",
        "--spec",
        "whatever.toml",
        "--out",
        path_str(tmp.path()),
    ]));
}

#[test]
fn missing_manifold_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    gen_preset("static-20-frames", &scene);
    let out = run(&[
        "fit",
        "--track",
        path_str(&scene.join("track.json")),
        "--manifold",
        path_str(&tmp.path().join("nope.sman")),
        "--out",
        path_str(&tmp.path().join("x.fit.json")),
    ]);
    assert_input_error(&out);
}

#[test]
fn zero_components_is_rejected_by_the_parser() {
    let out = run(&[
        "build-manifold",
        "--shapes",
        "x.sdfg",
        "--out",
        "y.sman",
        "--dim",
        "0",
    ]);
    assert_input_error(&out);
}

#[test]
fn training_needs_at_least_two_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let grids = car_shape_family(&GridSpec::default_vehicle(), 2).unwrap();
    let lone = tmp.path().join("only.sdfg");
    grids[0].save(&lone).unwrap();
    let out = run(&[
        "build-manifold",
        "--shapes",
        path_str(tmp.path()),
        "--out",
        path_str(&tmp.path().join("m.sman")),
        "--dim",
        "1",
    ]);
    assert_input_error(&out);
    assert!(stderr(&out).contains("at least 2"));
}

#[test]
fn training_is_deterministic_and_prints_the_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let shapes = tmp.path().join("shapes");
    std::fs::create_dir(&shapes).unwrap();
    for (i, grid) in car_shape_family(&GridSpec::default_vehicle(), 5)
        .unwrap()
        .iter()
        .enumerate()
    {
        grid.save(shapes.join(format!("car_{i:02}.sdfg"))).unwrap();
    }

    let first = tmp.path().join("first.sman");
    let second = tmp.path().join("second.sman");
    for out_path in [&first, &second] {
        let out = run(&[
            "build-manifold",
            "--shapes",
            path_str(&shapes),
            "--out",
            path_str(out_path),
            "--dim",
            "3",
        ]);
        assert_ok(&out);
        let text = stdout(&out);
        assert!(text.contains("cumulative variance"), "{text}");
        assert!(text.contains("trained 3 components from 5 shapes"), "{text}");
    }
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap(),
        "retraining on the same shapes changed the manifold bytes"
    );
}

#[test]
fn directory_fit_covers_every_track() {
    let tmp = tempfile::tempdir().unwrap();
    let pool = tmp.path().join("pool");
    gen_preset("static-20-frames", &pool.join("alpha"));
    gen_preset("straight-20-frames", &pool.join("beta"));

    let fits = tmp.path().join("fits");
    let surf = tmp.path().join("surfaces");
    let traj = tmp.path().join("trajectories");
    let out = run(&[
        "fit",
        "--track",
        path_str(&pool),
        "--manifold",
        path_str(&pool.join("alpha").join("manifold.sman")),
        "--out",
        path_str(&fits),
        "--export-surfaces",
        path_str(&surf),
        "--export-trajectory",
        path_str(&traj),
    ]);
    assert_ok(&out);
    assert!(fits.join("alpha.fit.json").is_file());
    assert!(fits.join("beta.fit.json").is_file());
    // exports fan out per track in directory mode
    assert!(surf.join("alpha").join("frame_000.ply").is_file());
    assert!(surf.join("beta").join("frame_019.ply").is_file());
    assert!(traj.join("alpha.trajectory.csv").is_file());
    assert!(traj.join("beta.trajectory.csv").is_file());

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = run(&[
        "fit",
        "--track",
        path_str(&empty),
        "--manifold",
        path_str(&pool.join("alpha").join("manifold.sman")),
        "--out",
        path_str(&fits),
    ]);
    assert_input_error(&out);
}

#[test]
fn spec_file_generation_and_frame_count_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = tmp.path().join("short.toml");
    std::fs::write(
        &spec_path,
        "name = \"three-frame\"\nframes = 3\nmax_points_per_frame = 200\nrender_stride = 4\nseed = 11\n",
    )
    .unwrap();
    let short = tmp.path().join("short");
    assert_ok(&run(&[
        "gen",
        "--spec",
        path_str(&spec_path),
        "--out",
        path_str(&short),
    ]));

    let fit_path = tmp.path().join("short.fit.json");
    assert_ok(&run(&[
        "fit",
        "--track",
        path_str(&short.join("track.json")),
        "--manifold",
        path_str(&short.join("manifold.sman")),
        "--out",
        path_str(&fit_path),
    ]));

    // scoring a 3-frame fit against a 20-frame ground truth must refuse
    let long = tmp.path().join("long");
    gen_preset("static-20-frames", &long);
    let out = run(&[
        "eval",
        "--fit",
        path_str(&fit_path),
        "--gt",
        path_str(&long.join("gt.json")),
        "--manifold",
        path_str(&short.join("manifold.sman")),
        "--out",
        path_str(&tmp.path().join("bad.csv")),
    ]);
    assert_input_error(&out);

    let out = run(&[
        "eval",
        "--fit",
        path_str(&fit_path),
        "--gt",
        path_str(&short.join("gt.json")),
        "--manifold",
        path_str(&short.join("manifold.sman")),
        "--tau",
        "0,-1",
        "--out",
        path_str(&tmp.path().join("bad.csv")),
    ]);
    assert_input_error(&out);
}
