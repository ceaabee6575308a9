//! End-to-end tests of the `eitkit` binary: exit codes, CSV shapes,
//! error wording, and run-to-run determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eitkit"))
}

/// Fresh scratch directory under the target-managed temp dir.
fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("eitkit-cli-test-{tag}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "exit code; stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

// ---- invocation surface ---------------------------------------------------

#[test]
fn test_no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_exit(&out, 1);
}

#[test]
fn test_help_succeeds_and_lists_commands() {
    let out = run(&["--help"]);
    assert_exit(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["converge", "forward", "synth", "denoise", "reconstruct", "grad-check"] {
        assert!(text.contains(cmd), "help lists {cmd}: {text}");
    }
}

#[test]
fn test_unknown_config_key_is_named() {
    let dir = scratch("unknown-key");
    let cfg = dir.join("run.cfg");
    write(&cfg, "example=linear_ramp\nalpha=1e-4\nalhpa=1\n");
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_exit(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alhpa"), "stderr names the typo: {err}");
}

// ---- converge -------------------------------------------------------------

#[test]
fn test_converge_single_mesh_leaves_orders_empty() {
    let dir = scratch("converge-single");
    let cfg = dir.join("run.cfg");
    write(&cfg, "meshes=8\n");
    let out_dir = dir.join("out");
    let out = run(&[
        "converge",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = read(&out_dir.join("converge.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("h,err_u,order_u,err_U,order_U"));
    let row = lines.next().expect("one data row");
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields.len(), 5, "row: {row}");
    assert_eq!(fields[0], "0.125");
    assert_eq!(fields[2], "", "no previous mesh, no order");
    assert_eq!(fields[4], "", "no previous mesh, no order");
    assert!(lines.next().is_none(), "exactly one row");
    assert!(!csv.contains('\r'), "LF line endings");
    let manifest = read(&out_dir.join("manifest.txt"));
    assert!(manifest.contains("command converge"), "manifest: {manifest}");
    assert!(manifest.contains("config meshes 8"), "manifest: {manifest}");
}

#[test]
fn test_converge_two_meshes_reports_second_order() {
    let dir = scratch("converge-pair");
    let cfg = dir.join("run.cfg");
    write(&cfg, "meshes=8,16\n");
    let out_dir = dir.join("out");
    let out = run(&[
        "converge",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = read(&out_dir.join("converge.csv"));
    let last = csv.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    for idx in [2, 4] {
        let order: f64 = fields[idx].parse().expect("order present");
        assert!(
            (1.7..=2.3).contains(&order),
            "observed order {order} in the second-order window"
        );
    }
}

// ---- reconstruct ----------------------------------------------------------

#[test]
fn test_reconstruct_without_alpha_names_the_key() {
    let dir = scratch("recon-noalpha");
    let cfg = dir.join("run.cfg");
    write(&cfg, "example=linear_ramp\n");
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_exit(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha"), "stderr names the key: {err}");
}

#[test]
fn test_reconstruct_is_byte_identical_across_runs() {
    let dir = scratch("recon-determinism");
    let cfg = dir.join("run.cfg");
    // Tiny run: coarse data mesh, one two-iteration level.
    write(
        &cfg,
        "example=linear_ramp\nalpha=1e-4\nepsilon=0.001\nn_data=16\nschedule=8:2\n",
    );
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "reconstruct",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    for name in ["sigma_n8.csv", "history.csv", "mesh_n8.txt"] {
        assert_eq!(
            read(&out_a.join(name)),
            read(&out_b.join(name)),
            "{name} identical across runs"
        );
    }
    let history = read(&out_a.join("history.csv"));
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("level,h,iter,F,rel_l2_err"));
    assert_eq!(lines.count(), 2, "schedule 8:2 records two iterations");
}

// ---- synth ----------------------------------------------------------------

#[test]
fn test_synth_rows_are_zero_sum() {
    let dir = scratch("synth");
    let cfg = dir.join("run.cfg");
    write(&cfg, "example=gaussian_blob\nn_data=16\npatterns=4\nepsilon=0.01\n");
    let out_dir = dir.join("out");
    let out = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = read(&out_dir.join("data.csv"));
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 16, "one column per electrode");
    let mut rows = 0;
    for line in lines {
        let sum: f64 = line.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!(sum.abs() <= 1e-12, "noisy voltage row sums to {sum:.3e}");
        rows += 1;
    }
    assert_eq!(rows, 4, "one row per pattern");
}

#[test]
fn test_synth_output_is_independent_of_thread_count() {
    let dir = scratch("synth-threads");
    let cfg = dir.join("run.cfg");
    write(&cfg, "example=two_squares\nn_data=16\npatterns=3\n");
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (out_dir, threads) in [(&out_a, "1"), (&out_b, "2")] {
        let out = run(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_exit(&out, 0);
    }
    assert_eq!(
        read(&out_a.join("data.csv")),
        read(&out_b.join("data.csv")),
        "thread count never changes results"
    );
}

// ---- denoise --------------------------------------------------------------

#[test]
fn test_denoise_zero_weight_returns_clipped_input() {
    let dir = scratch("denoise-zero");
    let input = dir.join("grid.csv");
    // 9 exceeds the admissible box [0.25, 4]; 0.1 undershoots it.
    write(&input, "col_0,col_1,col_2,col_3\n1,9,2,0.1\n1,1,2,2\n");
    let cfg = dir.join("run.cfg");
    write(&cfg, &format!("input={}\nbeta=0\n", input.display()));
    let out_dir = dir.join("out");
    let out = run(&[
        "denoise",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = read(&out_dir.join("denoised.csv"));
    assert_eq!(csv, "col_0,col_1,col_2,col_3\n1,4,2,0.25\n1,1,2,2\n");
}

#[test]
fn test_denoise_smooths_a_noisy_grid() {
    let dir = scratch("denoise-smooth");
    let input = dir.join("grid.csv");
    // Alternating spikes around a flat level.
    write(&input, "1.4,0.6,1.4,0.6\n0.6,1.4,0.6,1.4\n1.4,0.6,1.4,0.6\n");
    let cfg = dir.join("run.cfg");
    write(&cfg, &format!("input={}\nbeta=0.5\n", input.display()));
    let out_dir = dir.join("out");
    let out = run(&[
        "denoise",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let csv = read(&out_dir.join("denoised.csv"));
    let values: Vec<f64> = csv
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()))
        .collect();
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(
        spread < 0.8,
        "smoothing shrinks the 0.8 input spread, got {spread}"
    );
}

#[test]
fn test_denoise_rejects_odd_column_grids() {
    let dir = scratch("denoise-odd");
    let input = dir.join("grid.csv");
    write(&input, "1,2,3\n4,5,6\n");
    let cfg = dir.join("run.cfg");
    write(&cfg, &format!("input={}\nbeta=0.1\n", input.display()));
    let out = run(&[
        "denoise",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_exit(&out, 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("even"), "stderr explains the shape: {err}");
}

// ---- grad-check -----------------------------------------------------------

#[test]
fn test_grad_check_finds_second_order_slope() {
    let dir = scratch("grad-check");
    let out_dir = dir.join("out");
    let out = run(&["grad-check", "--out", out_dir.to_str().unwrap()]);
    assert_exit(&out, 0);
    let manifest = read(&out_dir.join("manifest.txt"));
    let slope_line = manifest
        .lines()
        .find(|l| l.starts_with("result fd_slope "))
        .expect("manifest records the slope");
    let slope: f64 = slope_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(
        (1.8..=2.2).contains(&slope),
        "central differences are second order, got slope {slope}"
    );
    let csv = read(&out_dir.join("fd.csv"));
    assert_eq!(
        csv.lines().next(),
        Some("t,fd_value,analytic_value,rel_err")
    );
    assert_eq!(csv.lines().count(), 5, "header plus four steps");
}
