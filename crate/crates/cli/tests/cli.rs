//! End-to-end tests of the `cgspec` binary: exit codes, error JSON, CSV
//! determinism, and the physics-facing file contents.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cgspec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgspec"))
        .args(args)
        .current_dir(dir)
        .env_remove("CGSPEC_THREADS")
        .output()
        .expect("binary runs")
}

fn parse_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().expect("header").split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    (header, rows)
}

fn field(row: &[String], k: usize) -> f64 {
    row[k].parse().unwrap_or_else(|e| panic!("field {k} = {:?}: {e}", row[k]))
}

#[test]
fn validate_subcommand_passes_and_prints_one_line_per_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cgspec(&["validate"], tmp.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "exit: {:?}\n{stdout}", out.status);
    let check_lines: Vec<&str> =
        stdout.lines().filter(|l| l.contains(": pass — ") || l.contains(": FAIL — ")).collect();
    assert!(check_lines.len() >= 10, "expected ≥ 10 check lines:\n{stdout}");
    assert!(stdout.contains("all "), "missing summary line:\n{stdout}");
    assert!(!stdout.contains("FAIL"), "a check failed:\n{stdout}");
}

#[test]
fn empty_sweep_grid_is_rejected_before_compute_with_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.toml"), "[pulling_sweep]\nvalues = []\n").unwrap();
    let out = cgspec(&["pulling-sweep", "--config", "cfg.toml", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let json: serde_json::Value =
        serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr not JSON: {e}\n{stderr}"));
    assert_eq!(json["error"]["kind"], "config");
    let message = json["error"]["message"].as_str().unwrap();
    assert!(message.contains("pulling_sweep.values"), "{message}");
    // Rejected before compute: nothing may have been written.
    assert!(!tmp.path().join("o").join("pulling_sweep.csv").exists());
}

#[test]
fn bad_thread_env_and_bad_toggle_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cgspec"))
        .args(["validate"])
        .current_dir(tmp.path())
        .env("CGSPEC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("CGSPEC_THREADS"), "{stderr}");

    let out = cgspec(&["spectrum", "--toggle-cross-damping", "maybe"], tmp.path());
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn spectrum_outputs_are_deterministic_and_full_sphere_is_toggle_blind() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.toml"), "[detection]\nregion = \"full-sphere\"\n").unwrap();
    let run = |out_dir: &str, toggle: &str| {
        let out = cgspec(
            &[
                "spectrum",
                "--config",
                "cfg.toml",
                "--out",
                out_dir,
                "--threads",
                "1",
                "--toggle-cross-damping",
                toggle,
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a", "on");
    run("b", "on");
    run("c", "off");

    let csv_a = fs::read(tmp.path().join("a/spectrum.csv")).unwrap();
    let csv_b = fs::read(tmp.path().join("b/spectrum.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "same config must give byte-identical CSV");
    let svg_a = fs::read_to_string(tmp.path().join("a/spectrum.svg")).unwrap();
    assert!(svg_a.starts_with("<svg"), "not an SVG document");
    assert!(svg_a.contains("<polyline"), "no data drawn");

    // Full-sphere detection cannot feel the interference toggle.
    let (header, rows_on) = parse_csv(&tmp.path().join("a/spectrum.csv"));
    let (_, rows_off) = parse_csv(&tmp.path().join("c/spectrum.csv"));
    assert_eq!(header, ["detuning_hz", "rate_per_s"]);
    assert_eq!(rows_on.len(), rows_off.len());
    assert!(rows_on.len() >= 4001);
    for (on, off) in rows_on.iter().zip(&rows_off) {
        assert_eq!(on[0], off[0], "grids differ");
        let (a, b) = (field(on, 1), field(off, 1));
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()), "rates differ: {a} vs {b}");
    }
}

#[test]
fn pulling_sweep_emits_contract_columns_and_flips_sign_across_the_magic_angle() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.toml"), "[pulling_sweep]\nvalues = [0.3, 1.2]\n").unwrap();
    let out = cgspec(&["pulling-sweep", "--config", "cfg.toml", "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let (header, rows) = parse_csv(&tmp.path().join("o/pulling_sweep.csv"));
    assert_eq!(header, ["theta_rad", "pulling_P12_Hz", "pulling_P32_Hz", "definition", "residual"]);
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row[3], "fit-difference");
        assert!(field(row, 4) >= 0.0);
    }
    // Polar side of the magic angle vs equatorial side: both pullings flip.
    let (p12_polar, p12_equator) = (field(&rows[0], 1), field(&rows[1], 1));
    let (p32_polar, p32_equator) = (field(&rows[0], 2), field(&rows[1], 2));
    assert!(p12_polar > 0.0 && p12_equator < 0.0, "{p12_polar} vs {p12_equator}");
    assert!(p32_polar < 0.0 && p32_equator > 0.0, "{p32_polar} vs {p32_equator}");
    assert!(tmp.path().join("o/pulling_sweep.svg").exists());
}

#[test]
fn pulling_sweep_with_cross_damping_off_is_a_null_test() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.toml"), "[pulling_sweep]\nvalues = [1.5707963267948966]\n")
        .unwrap();
    let out = cgspec(
        &["pulling-sweep", "--config", "cfg.toml", "--out", "o", "--toggle-cross-damping", "off"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = parse_csv(&tmp.path().join("o/pulling_sweep.csv"));
    assert_eq!(rows.len(), 1);
    assert!(field(&rows[0], 1).abs() < 1.0, "null test broke: {:?}", rows[0]);
    assert!(field(&rows[0], 2).abs() < 1.0, "null test broke: {:?}", rows[0]);
}

#[test]
fn tauc_sweep_reports_a_flat_plateau_pair() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.toml"), "[tauc_sweep]\ntau_c_s = [1e-13, 1e-12]\n").unwrap();
    let out = cgspec(&["tauc-sweep", "--config", "cfg.toml", "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = parse_csv(&tmp.path().join("o/tauc_sweep.csv"));
    assert_eq!(
        header,
        [
            "tau_c_s",
            "pulling_P12_Hz",
            "pulling_P32_Hz",
            "definition",
            "residual",
            "max_abs_pulling_hz",
            "normalized"
        ]
    );
    assert_eq!(rows.len(), 2);
    assert_eq!(field(&rows[0], 6), 1.0, "first row defines the plateau");
    assert!((field(&rows[1], 6) - 1.0).abs() < 0.05, "plateau not flat: {:?}", rows[1]);
    assert!(tmp.path().join("o/tauc_sweep.svg").exists());

    // The toggle makes no sense here and must be refused.
    let out = cgspec(
        &["tauc-sweep", "--config", "cfg.toml", "--out", "o2", "--toggle-cross-damping", "off"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn coeffs_tables_are_hermitian_match_the_filter_oracle_and_honor_the_toggle() {
    let tmp = tempfile::tempdir().unwrap();
    let on = cgspec(&["coeffs", "--out", "on"], tmp.path());
    assert!(on.status.success(), "{}", String::from_utf8_lossy(&on.stderr));
    let off = cgspec(&["coeffs", "--out", "off", "--toggle-cross-damping", "off"], tmp.path());
    assert!(off.status.success(), "{}", String::from_utf8_lossy(&off.stderr));

    let (header, rows) = parse_csv(&tmp.path().join("on/gamma_matrix.csv"));
    assert_eq!(
        header,
        ["i", "j", "line_i", "line_j", "fc_re", "fc_im", "gamma_re_per_s", "gamma_im_per_s"]
    );
    let n = (rows.len() as f64).sqrt() as usize;
    assert_eq!(n * n, rows.len(), "not a square matrix listing");
    // Round-trip Hermiticity: γ[j,i] printed exactly as conj(γ[i,j]).
    let at = |i: usize, j: usize| &rows[i * n + j];
    let mut cross_energy = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            assert_eq!(field(at(i, j), 6), field(at(j, i), 6), "Re not symmetric at {i},{j}");
            assert_eq!(field(at(i, j), 7), -field(at(j, i), 7), "Im not antisymmetric at {i},{j}");
            if i != j {
                cross_energy += field(at(i, j), 6).abs();
            }
        }
    }
    assert!(cross_energy > 0.0, "cross damping on must leave nonzero off-diagonal entries");

    // The ℱ_c column is the correlation filter at ω_i − ω_j: rebuild the
    // (deterministic) level scheme and compare every row to the filter value
    // at the default coarse-graining time.
    let scheme = cgspec::hydrogen::build_level_scheme(&cgspec::hydrogen::ModelConfig::default())
        .unwrap();
    assert_eq!(scheme.transitions.len(), n, "CSV indexes the transition list");
    for row in &rows {
        let (i, j) = (field(row, 0) as usize, field(row, 1) as usize);
        let want =
            cgspec::coefficients::fc(scheme.transitions[i].omega - scheme.transitions[j].omega, 1e-12)
                .unwrap();
        assert!((field(row, 4) - want.re).abs() <= 1e-9, "fc_re at {i},{j}: {row:?}");
        assert!((field(row, 5) - want.im).abs() <= 1e-9, "fc_im at {i},{j}: {row:?}");
    }

    // Toggle off: every off-diagonal damping entry is exactly zero, the
    // diagonal unchanged.
    let (_, rows_off) = parse_csv(&tmp.path().join("off/gamma_matrix.csv"));
    assert_eq!(rows_off.len(), rows.len());
    for (row_on, row_off) in rows.iter().zip(&rows_off) {
        let (i, j) = (field(row_on, 0) as usize, field(row_on, 1) as usize);
        if i == j {
            assert_eq!(row_on[6], row_off[6], "diagonal must not feel the toggle");
        } else {
            assert_eq!(field(row_off, 6), 0.0);
            assert_eq!(field(row_off, 7), 0.0);
        }
    }

    // The static comparison table: on the diagonal the coarse-grained and
    // static coefficients coincide (the filter is 1 at zero frequency and
    // the mean frequency is the frequency itself).
    let (header, rows_cmp) = parse_csv(&tmp.path().join("on/gamma_static_comparison.csv"));
    assert_eq!(
        header,
        ["i", "j", "gamma_cg_re_per_s", "gamma_cg_im_per_s", "gamma_static_re_per_s", "relative_difference"]
    );
    assert_eq!(rows_cmp.len(), n * n);
    for row in &rows_cmp {
        let (i, j) = (field(row, 0) as usize, field(row, 1) as usize);
        if i == j {
            assert!(field(row, 5) <= 1e-12, "diagonal must agree: {row:?}");
            assert!(field(row, 2) > 0.0, "diagonal decay rate must be positive");
        }
    }

    // Shift estimates: the first-order formula is exact on the diagonal and
    // accurate for near-degenerate pairs; pairs far apart in frequency carry
    // no accuracy claim.
    let (header, rows_sh) = parse_csv(&tmp.path().join("on/shift_estimates.csv"));
    assert_eq!(
        header,
        ["i", "j", "branch", "exact_rad_per_s", "estimate_rad_per_s", "relative_error"]
    );
    assert!(!rows_sh.is_empty());
    let mut close_pairs = 0usize;
    for row in &rows_sh {
        let (i, j) = (field(row, 0) as usize, field(row, 1) as usize);
        let rel = field(row, 5);
        assert!(rel.is_finite(), "{row:?}");
        if i == j {
            assert!(rel <= 1e-12, "self shift must match its own estimate: {row:?}");
            continue;
        }
        let (ti, tj) = (&scheme.transitions[i], &scheme.transitions[j]);
        let spread = (ti.omega - tj.omega).abs() / (0.5 * (ti.omega_rate + tj.omega_rate));
        if spread <= 0.01 {
            close_pairs += 1;
            assert!(rel <= 0.01, "near-degenerate estimate off: {row:?}");
        }
    }
    assert!(close_pairs > 0, "no near-degenerate pairs exercised the estimate");
}
