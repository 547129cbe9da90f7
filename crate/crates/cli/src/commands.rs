//! Subcommand implementations: compute through the library, write CSV and
//! SVG files, print the written paths.

use cgspec::coefficients::{build_gamma_matrix, gamma_static, CrossShiftCalculator, FcCache, ShiftSign};
use cgspec::hydrogen::{build_level_scheme, LevelScheme};
use cgspec::liouvillian::Toggles;
use cgspec::spectra::{
    detuning_grid, fine_splitting_hz, line_pulling_fits, sweep_spectrum, tau_c_sweep,
    DetuningScan, PullingDefinition,
};
use cgspec::validation;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::config::RunConfig;
use crate::plot::{line_plot, Series};
use crate::table::{float, Csv};
use crate::CliError;

const P12_COLOR: &str = "#1f77b4";
const P32_COLOR: &str = "#d62728";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_csv(path: &Path, csv: &Csv) -> Result<(), CliError> {
    csv.write(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn line_label(scheme: &LevelScheme, transition: usize) -> String {
    let t = &scheme.transitions[transition];
    format!("{}->{}", scheme.states[t.upper].label, scheme.states[t.lower].label)
}

pub fn coeffs(cfg: &RunConfig, toggle: Option<bool>) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    let scheme = build_level_scheme(&cfg.model())?;
    let cg = cfg.coarse();
    let toggles = cfg.toggles(toggle);
    let gm = build_gamma_matrix(&scheme.transitions, &cg)?;
    let n = scheme.transitions.len();
    let mut cache = FcCache::new(cg.tau_c)?;

    // The pairwise damping matrix, with the interference toggle applied
    // exactly as the generator applies it: off zeroes every i ≠ j entry.
    let mut csv = Csv::new(&[
        "i",
        "j",
        "line_i",
        "line_j",
        "fc_re",
        "fc_im",
        "gamma_re_per_s",
        "gamma_im_per_s",
    ]);
    for i in 0..n {
        for j in 0..n {
            let g = if i != j && !toggles.cross_damping {
                Complex64::new(0.0, 0.0)
            } else {
                gm.matrix[(i, j)]
            };
            let f = cache.get(scheme.transitions[i].omega - scheme.transitions[j].omega)?;
            csv.row(&[
                i.to_string(),
                j.to_string(),
                line_label(&scheme, i),
                line_label(&scheme, j),
                float(f.re),
                float(f.im),
                float(g.re),
                float(g.im),
            ]);
        }
    }
    write_csv(&dir.join("gamma_matrix.csv"), &csv)?;

    // Coarse-grained vs static (frequency-asymmetric) damping coefficients.
    let mut csv = Csv::new(&[
        "i",
        "j",
        "gamma_cg_re_per_s",
        "gamma_cg_im_per_s",
        "gamma_static_re_per_s",
        "relative_difference",
    ]);
    for i in 0..n {
        for j in 0..n {
            let cgv = gm.matrix[(i, j)];
            let st = gamma_static(&scheme.transitions[i], &scheme.transitions[j]);
            let scale = cgv.norm().max(st.norm());
            let rel = if scale > 0.0 { (cgv - st).norm() / scale } else { 0.0 };
            csv.row(&[
                i.to_string(),
                j.to_string(),
                float(cgv.re),
                float(cgv.im),
                float(st.re),
                float(rel),
            ]);
        }
    }
    write_csv(&dir.join("gamma_static_comparison.csv"), &csv)?;

    // Exact cross shifts next to their first-order estimates, for every
    // coupled pair (the dot product decides) and every integral branch.
    let mut calc = CrossShiftCalculator::new(&cg)?;
    let branches: [(&str, ShiftSign, bool); 3] = [
        ("vacuum_minus", ShiftSign::Minus, false),
        ("thermal_minus", ShiftSign::Minus, true),
        ("thermal_plus", ShiftSign::Plus, true),
    ];
    let mut csv = Csv::new(&[
        "i",
        "j",
        "branch",
        "exact_rad_per_s",
        "estimate_rad_per_s",
        "relative_error",
    ]);
    for i in 0..n {
        for j in i..n {
            let t_i = &scheme.transitions[i];
            let t_j = &scheme.transitions[j];
            let dot = t_i.dot(t_j);
            if dot == 0.0 {
                continue;
            }
            for (name, sign, thermal) in branches {
                let exact = calc.shift(t_i, t_j, sign, thermal)?;
                let fc_re = cache.get(t_i.omega - t_j.omega)?.re;
                let self_i = calc.shift(t_i, t_i, sign, thermal)?;
                let self_j = calc.shift(t_j, t_j, sign, thermal)?;
                let estimate =
                    0.5 * dot * fc_re * (self_i / t_i.dipole_sq() + self_j / t_j.dipole_sq());
                let rel = if exact == 0.0 && estimate == 0.0 {
                    0.0
                } else {
                    (estimate - exact).abs() / exact.abs().max(estimate.abs())
                };
                csv.row(&[
                    i.to_string(),
                    j.to_string(),
                    name.to_string(),
                    float(exact),
                    float(estimate),
                    float(rel),
                ]);
            }
        }
    }
    write_csv(&dir.join("shift_estimates.csv"), &csv)?;

    println!(
        "damping matrix over {n} lines: eigenvalues in [{:.6e}, {:.6e}] 1/s, cross damping {}",
        gm.min_eigenvalue,
        gm.max_eigenvalue,
        if toggles.cross_damping { "on" } else { "off" },
    );
    Ok(())
}

pub fn spectrum(cfg: &RunConfig, toggle: Option<bool>) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    let scheme = build_level_scheme(&cfg.model())?;
    let grid = detuning_grid(&scheme, cfg.spectrum.grid_points)?;
    let region = cfg.region()?;
    let toggles = cfg.toggles(toggle);
    let spec = sweep_spectrum(&scheme, &cfg.drive(), &cfg.coarse(), toggles, &region, &grid)?;

    let mut csv = Csv::new(&["detuning_hz", "rate_per_s"]);
    for (delta, rate) in spec.detunings.iter().zip(&spec.rates) {
        csv.row(&[float(delta / (2.0 * PI)), float(*rate)]);
    }
    write_csv(&dir.join("spectrum.csv"), &csv)?;

    let points: Vec<(f64, f64)> = spec
        .detunings
        .iter()
        .zip(&spec.rates)
        .map(|(d, r)| (d / (2.0 * PI) / 1e6, *r))
        .collect();
    let svg = line_plot(
        "Angle-resolved fluorescence spectrum",
        "laser detuning [MHz]",
        "photon rate [1/s]",
        &[Series { label: "rate", color: P12_COLOR, points: &points }],
    );
    write_file(&dir.join("spectrum.svg"), &svg)?;

    let (k, peak) = spec
        .rates
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty spectrum");
    println!(
        "{} grid points, peak rate {peak:.6e} 1/s at detuning {:.6} MHz",
        grid.len(),
        spec.detunings[k] / (2.0 * PI) / 1e6,
    );
    Ok(())
}

pub fn pulling_sweep(cfg: &RunConfig, toggle: Option<bool>) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    let scheme = build_level_scheme(&cfg.model())?;
    let grid = detuning_grid(&scheme, cfg.spectrum.grid_points)?;
    let family = cfg.family()?;
    let values = cfg.family_values()?;
    let drive = cfg.drive();
    let cg = cfg.coarse();
    let omega0 = fine_splitting_hz(&scheme)?;

    // The reference scan always has every cross term off. The probe scan is
    // the configured physics; turning its cross damping off (the --toggle
    // flag) makes the two scans identical — the null test.
    let resolved = cfg.toggles(toggle);
    let probe = if resolved.cross_damping {
        Toggles { cross_damping: true, cross_shift: resolved.cross_shift }
    } else {
        Toggles { cross_damping: false, cross_shift: false }
    };
    let reference = Toggles { cross_damping: false, cross_shift: false };
    let scan_probe = DetuningScan::new(&scheme, &drive, &cg, probe, &grid)?;
    let scan_ref = DetuningScan::new(&scheme, &drive, &cg, reference, &grid)?;

    let definition = PullingDefinition::FitDifference.as_str();
    let mut csv = Csv::new(&[
        family.variable_name(),
        "pulling_P12_Hz",
        "pulling_P32_Hz",
        "definition",
        "residual",
    ]);
    let mut p12 = Vec::with_capacity(values.len());
    let mut p32 = Vec::with_capacity(values.len());
    for &v in &values {
        let region = family.region(v);
        let spec_probe = scan_probe.spectrum(&region)?;
        let spec_ref = scan_ref.spectrum(&region)?;
        let (pulling, fit_probe, fit_ref) = line_pulling_fits(&spec_probe, &spec_ref, omega0)?;
        let residual = fit_probe.residual.max(fit_ref.residual);
        csv.row(&[
            float(v),
            float(pulling.pulling_p12),
            float(pulling.pulling_p32),
            definition.to_string(),
            float(residual),
        ]);
        p12.push((v, pulling.pulling_p12 / 1e3));
        p32.push((v, pulling.pulling_p32 / 1e3));
    }
    write_csv(&dir.join("pulling_sweep.csv"), &csv)?;

    let svg = line_plot(
        "Line pulling across the detection-geometry family",
        family.variable_name(),
        "line pulling [kHz]",
        &[
            Series { label: "4P 1/2 resonance", color: P12_COLOR, points: &p12 },
            Series { label: "4P 3/2 resonance", color: P32_COLOR, points: &p32 },
        ],
    );
    write_file(&dir.join("pulling_sweep.svg"), &svg)?;
    Ok(())
}

pub fn tauc_sweep(cfg: &RunConfig, toggle: Option<bool>) -> Result<(), CliError> {
    if toggle == Some(false) {
        return Err(CliError::config(
            "tauc-sweep normalizes the interference pulling to its plateau; \
             --toggle-cross-damping off leaves nothing to normalize",
        ));
    }
    let dir = out_dir(cfg)?;
    let scheme = build_level_scheme(&cfg.model())?;
    let grid = detuning_grid(&scheme, cfg.spectrum.grid_points)?;
    let region = cfg.region()?;
    let taus = cfg.tau_values();
    let rows = tau_c_sweep(&scheme, &cfg.drive(), &cfg.coarse(), &region, &taus, &grid)?;

    let definition = PullingDefinition::FitDifference.as_str();
    let mut csv = Csv::new(&[
        "tau_c_s",
        "pulling_P12_Hz",
        "pulling_P32_Hz",
        "definition",
        "residual",
        "max_abs_pulling_hz",
        "normalized",
    ]);
    let mut points = Vec::with_capacity(rows.len());
    for row in &rows {
        csv.row(&[
            float(row.tau_c),
            float(row.pulling.pulling_p12),
            float(row.pulling.pulling_p32),
            definition.to_string(),
            float(row.residual),
            float(row.max_abs),
            float(row.normalized),
        ]);
        points.push((row.tau_c.log10(), row.normalized));
    }
    write_csv(&dir.join("tauc_sweep.csv"), &csv)?;

    let svg = line_plot(
        "Maximum line pulling vs coarse-graining time",
        "log10(coarse-graining time / s)",
        "pulling relative to the plateau",
        &[Series { label: "normalized", color: P12_COLOR, points: &points }],
    );
    write_file(&dir.join("tauc_sweep.svg"), &svg)?;
    Ok(())
}

pub fn validate() -> Result<ExitCode, CliError> {
    let reports = validation::run_all();
    let mut failed = 0usize;
    for r in &reports {
        println!(
            "{}: {} — {} ({:.2} s)",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.detail,
            r.elapsed.as_secs_f64(),
        );
        if !r.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("all {} checks passed", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let err = CliError {
            kind: "validation",
            message: format!("{failed} of {} checks failed", reports.len()),
        };
        eprintln!("{}", err.to_json());
        Ok(ExitCode::from(2))
    }
}
