//! Fluorescence spectra, double-Lorentzian fits, and line-pulling extraction.
//!
//! The observable is the angle-resolved photon count rate of the quasi-steady
//! driven atom as a function of the laser detuning δ,
//!
//! ```text
//! S^Ω(δ) = Σ_{ee′} G^Ω_{ee′} E_{e′e}(δ),
//! ```
//!
//! where G^Ω is the detector's emission matrix over the excited manifold and
//! E(δ) is the excited block of the quasi-steady state, normalized to the
//! population that has not yet leaked out of the driven/excited block (the
//! conditional state; recycling schemes use their honest trace-1 steady state
//! unchanged). Leak-through schemes evaluate E(δ) from the slowest eigenmode
//! of the active-block effective Hamiltonian — the direction every transient
//! collapses onto — and every ~512th grid point is re-derived through the
//! full time-evolution route; the two must agree to 5·10⁻⁶ relative or the
//! sweep aborts.
//!
//! Line positions come from a nonlinear least-squares fit of a sum of two
//! Lorentzians with the level splitting ω₀ held fixed,
//!
//! ```text
//! S(x) ≈ (a₁/π)(b₁/2)/[(x−x₁)² + (b₁/2)²]
//!      + (a₂/π)(b₂/2)/[(x−ω₀−x₂)² + (b₂/2)²],      x in Hz,
//! ```
//!
//! and the line pulling of each fine-structure resonance is the change of its
//! fitted position when the cross-interference terms are switched on,
//! Δ_L = x_n^on − x_n^off. An independent single-peak decomposition fits
//!
//! ```text
//! C/(x² + Γ_r²/4) + a·x + b·x/(x² + Γ_r²/4)
//! ```
//!
//! on a ±6Γ_r window about the bare resonance and converts the asymmetry
//! coefficients into the shift of the half-maximum midpoint,
//! Δ(Γ_r/2) = aΓ_r⁴/(8C) + bΓ_r²/(4C), and the shift of the maximum,
//! Δ(0) = aΓ_r⁴/(32C) + bΓ_r²/(8C) ≈ Δ(Γ_r/2)/2. For a Lorentzian
//! contaminated by a small dispersive admixture, the least-squares position
//! shift of a pure-Lorentzian fit equals Δ(Γ_r/2) exactly in the wide-window
//! limit (the projection ∫x²u³/∫x²u⁴ = 2(Γ_r/2)² of the dispersive shape
//! onto the translation mode), which is why the two pulling definitions agree
//! at the percent level.
//!
//! For hydrogen the master-equation cross-damping coefficients between 4P
//! states vanish identically (ground-sum completeness), so the interference
//! observable lives entirely in the off-diagonal of G^Ω contracted with the
//! drive-induced excited coherences. The cross_damping toggle therefore
//! switches both the generator's off-diagonal γ_ij and the off-diagonal part
//! of the detection contraction; over the full sphere that off-diagonal part
//! is itself zero, which is the 4π cancellation. The coarse-graining time
//! enters through the spectral filter ℱ_c(ω_e−ω_e′) inside G^Ω: the pulling
//! is flat while τ_c ≪ 1/ω_split and dies once the filter closes.
//!
//! Sweep points are independent work items executed in parallel; fits are
//! sequential per spectrum; aggregation is deterministic in grid order.

use crate::coefficients::CoarseGrainConfig;
use crate::detection::{excited_emission_matrix, DetectionRegion};
use crate::hydrogen::LevelScheme;
use crate::linalg::CMat;
use crate::liouvillian::{
    build_liouvillian, quasi_steady_state, DriveConfig, Liouvillian, Toggles,
};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

/// Default number of detuning grid points.
pub const DEFAULT_GRID_POINTS: usize = 4001;
/// Default grid margin beyond the outermost resonances [linewidths].
pub const GRID_MARGIN_LINEWIDTHS: f64 = 30.0;
/// Default angular width of a "thin" detection stripe [rad]; finite-width
/// corrections to the thin-ring limit are O(width²) ≈ 2.5·10⁻⁵.
pub const DEFAULT_STRIPE_WIDTH: f64 = 0.01;

/// Minimum sampling density of a sweep grid [points per linewidth].
const MIN_POINTS_PER_LINEWIDTH: f64 = 20.0;
/// Required grid margin around every resonance [linewidths].
const COVER_MARGIN_LINEWIDTHS: f64 = 3.0;
/// Stride of the full-route consistency checkpoints along the grid.
const CHECK_STRIDE: usize = 512;
/// Relative agreement required between the slow-mode fast path and the
/// time-evolution route at checkpoints.
const FAST_PATH_RTOL: f64 = 5e-6;
/// Half-width of the single-peak asymmetry-fit window [linewidths].
const SHIFT_WINDOW_LINEWIDTHS: f64 = 6.0;

/// Laser detunings [rad/s] at which the drive is resonant with an excited
/// level, mirroring the rotating-frame diagonal ω_e − ω_driven − ω_ref:
/// the distinct upper-state energies of the laser-coupled lines, clustered
/// at 10⁻⁶ γ_tot (magnetic sublevels of one hyperfine level are degenerate).
pub fn resonance_detunings(scheme: &LevelScheme) -> Result<Vec<f64>> {
    scheme.validate()?;
    if scheme.drive_lines.is_empty() {
        return Err(Error::Config("level scheme has no laser-coupled lines".into()));
    }
    let e_driven = scheme.states[scheme.driven].energy;
    let mut raw: Vec<f64> = scheme
        .drive_lines
        .iter()
        .map(|t| scheme.states[t.upper].energy - e_driven - scheme.omega_ref)
        .collect();
    raw.sort_by(f64::total_cmp);
    let tol = 1e-6 * scheme.gamma_tot;
    let mut clustered: Vec<f64> = Vec::new();
    for r in raw {
        match clustered.last() {
            Some(&last) if (r - last).abs() <= tol => {}
            _ => clustered.push(r),
        }
    }
    Ok(clustered)
}

/// The two resonance detunings [rad/s] of a double-peaked scheme, in
/// increasing order. Errors when the scheme does not drive exactly two
/// distinct lines, since every double-Lorentzian quantity is meaningless
/// then.
pub fn peak_pair(scheme: &LevelScheme) -> Result<(f64, f64)> {
    let r = resonance_detunings(scheme)?;
    if r.len() != 2 {
        return Err(Error::Config(format!(
            "expected exactly two driven resonances, found {}",
            r.len()
        )));
    }
    Ok((r[0], r[1]))
}

/// Splitting of the two driven resonances [Hz]: the ω₀ held fixed in the
/// double-Lorentzian fit.
pub fn fine_splitting_hz(scheme: &LevelScheme) -> Result<f64> {
    let (d1, d2) = peak_pair(scheme)?;
    Ok((d2 - d1) / (2.0 * PI))
}

/// Uniform detuning grid [rad/s] spanning both resonances with a
/// 30-linewidth margin on each side.
pub fn detuning_grid(scheme: &LevelScheme, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Config(format!("grid needs at least 2 points, got {points}")));
    }
    let (d1, d2) = peak_pair(scheme)?;
    let g = scheme.gamma_tot;
    let lo = d1 - GRID_MARGIN_LINEWIDTHS * g;
    let hi = d2 + GRID_MARGIN_LINEWIDTHS * g;
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|k| lo + step * k as f64).collect())
}

/// The default 4001-point detuning grid.
pub fn default_detuning_grid(scheme: &LevelScheme) -> Result<Vec<f64>> {
    detuning_grid(scheme, DEFAULT_GRID_POINTS)
}

/// The thin equatorial stripe: the Ω → 0 limit of the belt family and the
/// geometry of maximum line pulling.
pub fn equatorial_stripe() -> DetectionRegion {
    DetectionRegion::StripeTheta { theta: FRAC_PI_2, width: DEFAULT_STRIPE_WIDTH }
}

/// An angle-resolved fluorescence spectrum on a fixed detuning grid.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Laser detunings [rad/s], strictly increasing.
    pub detunings: Vec<f64>,
    /// Photon count rate at each detuning [photons/s], ≥ 0.
    pub rates: Vec<f64>,
    /// Detector geometry the rates refer to.
    pub region: DetectionRegion,
    /// Coarse-graining time of the spectral filter in the pair rates [s].
    pub tau_c: f64,
    /// Interference switches the spectrum was computed with.
    pub toggles: Toggles,
}

impl Spectrum {
    pub fn validate(&self) -> Result<()> {
        if self.detunings.len() != self.rates.len() {
            return Err(Error::Config(format!(
                "{} detunings but {} rates",
                self.detunings.len(),
                self.rates.len()
            )));
        }
        if self.detunings.len() < 2 {
            return Err(Error::Config("spectrum needs at least 2 points".into()));
        }
        for w in self.detunings.windows(2) {
            if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
                return Err(Error::Config(
                    "detunings must be finite and strictly increasing".into(),
                ));
            }
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("rates must be finite and non-negative".into()));
        }
        if !(self.tau_c.is_finite() && self.tau_c > 0.0) {
            return Err(Error::Config(format!("tau_c {} must be positive", self.tau_c)));
        }
        self.region.validate()
    }
}

/// Emission matrix over the excited manifold with the cross-interference
/// switch applied: with `cross_damping` off, the pair sum is restricted to
/// i = j, i.e. the off-diagonal of G^Ω is zeroed.
pub fn emission_matrix_for(
    scheme: &LevelScheme,
    region: &DetectionRegion,
    cfg: &CoarseGrainConfig,
    cross_damping: bool,
) -> Result<(Vec<usize>, CMat)> {
    let (excited, mut g) = excited_emission_matrix(scheme, region, cfg)?;
    if !cross_damping {
        let ne = excited.len();
        for k1 in 0..ne {
            for k2 in 0..ne {
                if k1 != k2 {
                    g[(k1, k2)] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
    Ok((excited, g))
}

/// Contraction S = Σ G_{ee′} E_{e′e} with Hermiticity and positivity gates;
/// a violation beyond roundoff signals a broken state upstream.
fn emission_rate(g: &CMat, e: &CMat) -> Result<f64> {
    let ne = g.nrows();
    let mut s = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for k1 in 0..ne {
        scale += g[(k1, k1)].norm() * e[(k1, k1)].norm();
        for k2 in 0..ne {
            s += g[(k1, k2)] * e[(k2, k1)];
        }
    }
    let tol = 1e-11 * scale.max(f64::MIN_POSITIVE);
    if s.im.abs() > tol {
        return Err(Error::Consistency(format!(
            "count rate has imaginary part {:e} (scale {scale:e})",
            s.im
        )));
    }
    if s.re < -tol {
        return Err(Error::Consistency(format!(
            "count rate {:e} is negative beyond tolerance (scale {scale:e})",
            s.re
        )));
    }
    Ok(s.re.max(0.0))
}

fn at_point(delta: f64, e: Error) -> Error {
    let wrap = |s: String| format!("sweep point δ = {delta:.9e} rad/s: {s}");
    match e {
        Error::Config(s) => Error::Config(wrap(s)),
        Error::Numerics(s) => Error::Numerics(wrap(s)),
        Error::Consistency(s) => Error::Consistency(wrap(s)),
    }
}

/// Detuning scan of the quasi-steady excited block: the expensive,
/// detector-independent half of a spectrum. One scan serves every detection
/// region (and, when the active dynamics is τ_c-independent, every τ_c),
/// since only the emission matrix changes.
pub struct DetuningScan {
    scheme: LevelScheme,
    drive: DriveConfig,
    cfg: CoarseGrainConfig,
    toggles: Toggles,
    grid: Vec<f64>,
    /// Conditional excited blocks E(δ), indexed like `excited`.
    blocks: Vec<CMat>,
    /// Full-route reference blocks at checkpoint indices (leak-through only).
    checks: Vec<(usize, CMat)>,
    excited: Vec<usize>,
    /// Active-block effective Hamiltonian of the base generator, kept for
    /// cheap "same dynamics?" comparisons; None for recycling schemes.
    base_h_eff: Option<CMat>,
    gamma_tot: f64,
}

impl DetuningScan {
    pub fn new(
        scheme: &LevelScheme,
        drive: &DriveConfig,
        cfg: &CoarseGrainConfig,
        toggles: Toggles,
        grid: &[f64],
    ) -> Result<Self> {
        let g = scheme.gamma_tot;
        if grid.len() < 2 {
            return Err(Error::Config("sweep grid needs at least 2 points".into()));
        }
        for w in grid.windows(2) {
            if !(w[1] > w[0] && w[0].is_finite() && w[1].is_finite()) {
                return Err(Error::Config(
                    "sweep grid must be finite and strictly increasing".into(),
                ));
            }
            if w[1] - w[0] > g / MIN_POINTS_PER_LINEWIDTH * (1.0 + 1e-9) {
                return Err(Error::Config(format!(
                    "sweep grid spacing {:.3e} rad/s is coarser than {} points per linewidth",
                    w[1] - w[0],
                    MIN_POINTS_PER_LINEWIDTH
                )));
            }
        }
        for r in resonance_detunings(scheme)? {
            let margin = COVER_MARGIN_LINEWIDTHS * g;
            if grid[0] > r - margin || grid[grid.len() - 1] < r + margin {
                return Err(Error::Config(format!(
                    "sweep grid does not cover the resonance at {r:.6e} rad/s \
                     with a {COVER_MARGIN_LINEWIDTHS}-linewidth margin"
                )));
            }
        }
        let base = build_liouvillian(scheme, &drive.at_detuning(grid[0]), cfg, toggles)?;
        let excited = scheme.excited_indices();
        let ne = excited.len();
        if ne == 0 {
            return Err(Error::Config("level scheme has no excited states".into()));
        }

        let (blocks, checks, base_h_eff) = if base.has_feedback() {
            // Recycling scheme: honest trace-1 steady state at every point.
            // The route self-gates against a null-space solve internally.
            let results: Vec<Result<CMat>> = grid
                .par_iter()
                .map(|&delta| {
                    full_route_block(&base, drive, delta, &excited, false)
                        .map_err(|e| at_point(delta, e))
                })
                .collect();
            let mut blocks = Vec::with_capacity(grid.len());
            for r in results {
                blocks.push(r?);
            }
            (blocks, Vec::new(), None)
        } else {
            // Leak-through fast path: the conditional excited block is the
            // outer product of the slow mode of H_eff.
            let active = base.active_indices().to_vec();
            let driven = base.driven_index();
            let mut pos = vec![usize::MAX; active.len()];
            for (p, &idx) in active.iter().enumerate() {
                if idx == driven {
                    continue;
                }
                pos[p] = excited.iter().position(|&e| e == idx).ok_or_else(|| {
                    Error::Consistency(
                        "active block contains a state outside the excited manifold".into(),
                    )
                })?;
            }
            let results: Vec<Result<CMat>> = grid
                .par_iter()
                .map(|&delta| {
                    let l = base.with_detuning(delta);
                    let sm = l.slow_mode().map_err(|e| at_point(delta, e))?;
                    let v = &sm.right;
                    let n2 = v.norm_squared();
                    if !(n2 > 0.0) {
                        return Err(at_point(
                            delta,
                            Error::Numerics("slow mode has zero norm".into()),
                        ));
                    }
                    let mut e = CMat::zeros(ne, ne);
                    for (p1, &k1) in pos.iter().enumerate() {
                        if k1 == usize::MAX {
                            continue;
                        }
                        for (p2, &k2) in pos.iter().enumerate() {
                            if k2 == usize::MAX {
                                continue;
                            }
                            e[(k1, k2)] = v[p1] * v[p2].conj() / n2;
                        }
                    }
                    Ok(e)
                })
                .collect();
            let mut blocks = Vec::with_capacity(grid.len());
            for r in results {
                blocks.push(r?);
            }
            let mut idxs: Vec<usize> = (0..grid.len()).step_by(CHECK_STRIDE).collect();
            if *idxs.last().unwrap() != grid.len() - 1 {
                idxs.push(grid.len() - 1);
            }
            let mut checks = Vec::with_capacity(idxs.len());
            for &i in &idxs {
                let delta = grid[i];
                let e = full_route_block(&base, drive, delta, &excited, true)
                    .map_err(|e| at_point(delta, e))?;
                checks.push((i, e));
            }
            (blocks, checks, Some(base.h_eff()?.clone()))
        };

        Ok(DetuningScan {
            scheme: scheme.clone(),
            drive: *drive,
            cfg: cfg.clone(),
            toggles,
            grid: grid.to_vec(),
            blocks,
            checks,
            excited,
            base_h_eff,
            gamma_tot: g,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Spectrum for a detection region, using the scan's own coarse-graining
    /// configuration for the emission matrix.
    pub fn spectrum(&self, region: &DetectionRegion) -> Result<Spectrum> {
        self.spectrum_with(region, &self.cfg)
    }

    /// Spectrum with an explicit emission-matrix configuration (the τ_c
    /// sweep varies the filter while the dynamics stays fixed).
    fn spectrum_with(&self, region: &DetectionRegion, cfg: &CoarseGrainConfig) -> Result<Spectrum> {
        let (exc, g) =
            emission_matrix_for(&self.scheme, region, cfg, self.toggles.cross_damping)?;
        if exc != self.excited {
            return Err(Error::Consistency(
                "emission matrix and sweep disagree on the excited manifold".into(),
            ));
        }
        let mut rates = Vec::with_capacity(self.blocks.len());
        for (i, e) in self.blocks.iter().enumerate() {
            rates.push(emission_rate(&g, e).map_err(|err| at_point(self.grid[i], err))?);
        }
        let peak = rates.iter().cloned().fold(0.0, f64::max);
        for (i, e_full) in &self.checks {
            let reference = emission_rate(&g, e_full).map_err(|err| at_point(self.grid[*i], err))?;
            let fast = rates[*i];
            let tol = FAST_PATH_RTOL * reference.abs().max(fast.abs()) + 1e-9 * peak;
            if (fast - reference).abs() > tol {
                return Err(Error::Consistency(format!(
                    "slow-mode sweep rate {fast:.9e} disagrees with the time-evolution \
                     route {reference:.9e} at δ = {:.6e} rad/s",
                    self.grid[*i]
                )));
            }
        }
        let spec = Spectrum {
            detunings: self.grid.clone(),
            rates,
            region: *region,
            tau_c: cfg.tau_c,
            toggles: self.toggles,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// True when a generator rebuilt with `cfg` has the same active-block
    /// dynamics, so this scan's quasi-steady blocks remain valid under it.
    fn reusable_with(&self, cfg: &CoarseGrainConfig) -> Result<bool> {
        let Some(h0) = &self.base_h_eff else {
            return Ok(false);
        };
        let base = build_liouvillian(
            &self.scheme,
            &self.drive.at_detuning(self.grid[0]),
            cfg,
            self.toggles,
        )?;
        if base.has_feedback() {
            return Ok(false);
        }
        let h = base.h_eff()?;
        if h.nrows() != h0.nrows() {
            return Ok(false);
        }
        let diff = (h - h0).iter().map(|x| x.norm()).fold(0.0, f64::max);
        Ok(diff <= 1e-12 * self.gamma_tot)
    }
}

/// Excited block of the full quasi-steady route at one detuning; leak-through
/// callers normalize by the active-block trace (conditional state).
fn full_route_block(
    base: &Liouvillian,
    drive: &DriveConfig,
    delta: f64,
    excited: &[usize],
    conditional: bool,
) -> Result<CMat> {
    let l = base.with_detuning(delta);
    let rho = quasi_steady_state(&l, &drive.at_detuning(delta))?;
    let m = rho.matrix();
    let norm = if conditional {
        let active_trace: f64 = l.active_indices().iter().map(|&a| m[(a, a)].re).sum();
        if !(active_trace > 0.0) {
            return Err(Error::Numerics(format!(
                "active-block population {active_trace:e} is not positive"
            )));
        }
        active_trace
    } else {
        1.0
    };
    let ne = excited.len();
    let mut e = CMat::zeros(ne, ne);
    for (k1, &e1) in excited.iter().enumerate() {
        for (k2, &e2) in excited.iter().enumerate() {
            e[(k1, k2)] = m[(e1, e2)] / norm;
        }
    }
    Ok(e)
}

/// Sweeps the detuning grid and returns the spectrum for one region: one
/// quasi-steady-state rate per grid point (fast path plus checkpoints as
/// described in the module docs).
pub fn sweep_spectrum(
    scheme: &LevelScheme,
    drive: &DriveConfig,
    cfg: &CoarseGrainConfig,
    toggles: Toggles,
    region: &DetectionRegion,
    grid: &[f64],
) -> Result<Spectrum> {
    DetuningScan::new(scheme, drive, cfg, toggles, grid)?.spectrum(region)
}

/// Parameters of the fixed-splitting double-Lorentzian fit. Positions and
/// widths in Hz; areas in rate·Hz.
#[derive(Clone, Copy, Debug)]
pub struct DoubleLorentzianFit {
    /// Position of the low-frequency peak.
    pub x1: f64,
    /// Full width at half maximum of the low-frequency peak, > 0.
    pub b1: f64,
    /// Area of the low-frequency peak, > 0.
    pub a1: f64,
    /// Position of the high-frequency peak relative to ω₀.
    pub x2: f64,
    pub b2: f64,
    pub a2: f64,
    /// The splitting held fixed during the fit [Hz].
    pub omega0: f64,
    /// Euclidean norm of the rate residuals.
    pub residual: f64,
    /// Final scaled gradient fell below threshold.
    pub converged: bool,
}

impl DoubleLorentzianFit {
    /// Model value at x [Hz].
    pub fn evaluate(&self, x: f64) -> f64 {
        lorentzian(x - self.x1, self.b1, self.a1)
            + lorentzian(x - self.omega0 - self.x2, self.b2, self.a2)
    }
}

/// Area-normalized Lorentzian (a/π)(b/2)/(t² + (b/2)²).
fn lorentzian(t: f64, b: f64, a: f64) -> f64 {
    let h = 0.5 * b;
    a / PI * h / (t * t + h * h)
}

const LM_MAX_ITER: usize = 400;
const LM_MAX_LAMBDA: f64 = 1e14;
/// Gradient-reduction factor that defines "converged".
const LM_GTOL: f64 = 1e-8;

/// Fits the sum of two Lorentzians with the splitting ω₀ held fixed, by
/// Levenberg–Marquardt with analytic derivatives. Initial values follow the
/// deterministic recipe: positions from the discrete argmax, widths from the
/// half-maximum crossings, areas from trapezoidal integrals.
pub fn fit_double_lorentzian(spec: &Spectrum, omega0: f64) -> Result<DoubleLorentzianFit> {
    spec.validate()?;
    if !(omega0.is_finite() && omega0 > 0.0) {
        return Err(Error::Config(format!("splitting {omega0} Hz must be positive")));
    }
    let xs: Vec<f64> = spec.detunings.iter().map(|d| d / (2.0 * PI)).collect();
    let y_scale = spec.rates.iter().cloned().fold(0.0, f64::max);
    if !(y_scale > 0.0) {
        return Err(Error::Config("spectrum is identically zero".into()));
    }
    let ys: Vec<f64> = spec.rates.iter().map(|r| r / y_scale).collect();

    let init = initial_guess(&xs, &ys, omega0)?;
    let (p, rnorm, converged) = levenberg_marquardt(&xs, &ys, omega0, init)?;

    Ok(DoubleLorentzianFit {
        x1: p[0],
        b1: p[1],
        a1: p[2] * y_scale,
        x2: p[3],
        b2: p[4],
        a2: p[5] * y_scale,
        omega0,
        residual: rnorm * y_scale,
        converged,
    })
}

/// Deterministic starting point [x1, b1, a1, x2, b2, a2] in normalized units.
fn initial_guess(xs: &[f64], ys: &[f64], omega0: f64) -> Result<[f64; 6]> {
    let n = xs.len();
    let i1 = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut i2: Option<usize> = None;
    for j in 0..n {
        if (xs[j] - xs[i1]).abs() > 0.5 * omega0 && i2.is_none_or(|k| ys[j] > ys[k]) {
            i2 = Some(j);
        }
    }
    let i2 = i2.ok_or_else(|| {
        Error::Config("grid does not extend a full splitting beyond the main peak".into())
    })?;
    for i in [i1, i2] {
        if i == 0 || i == n - 1 || ys[i] < ys[i - 1] || ys[i] < ys[i + 1] {
            return Err(Error::Config(
                "second resonance peak not found: single-peak or truncated spectrum".into(),
            ));
        }
    }
    let (lo, hi) = (i1.min(i2), i1.max(i2));
    let b_lo = half_max_width(xs, ys, lo)?;
    let b_hi = half_max_width(xs, ys, hi)?;
    // Split the grid halfway between the peaks for the area integrals.
    let xm = 0.5 * (xs[lo] + xs[hi]);
    let split = xs.partition_point(|&x| x <= xm);
    let a_lo = trapezoid(xs, ys, 0, split - 1);
    let a_hi = trapezoid(xs, ys, split - 1, n - 1);
    if !(a_lo > 0.0 && a_hi > 0.0) {
        return Err(Error::Config("peak areas are not positive".into()));
    }
    Ok([xs[lo], b_lo, a_lo, xs[hi] - omega0, b_hi, a_hi])
}

/// Full width at half maximum around the local maximum at index `i`, by
/// linear interpolation of the two half-height crossings.
fn half_max_width(xs: &[f64], ys: &[f64], i: usize) -> Result<f64> {
    let half = 0.5 * ys[i];
    let cross = |j_in: usize, j_out: usize| -> f64 {
        // ys[j_out] ≤ half < ys[j_in]; interpolate between the two.
        xs[j_in] + (xs[j_out] - xs[j_in]) * (ys[j_in] - half) / (ys[j_in] - ys[j_out])
    };
    let mut j = i;
    while j > 0 && ys[j] > half {
        j -= 1;
    }
    if ys[j] > half {
        return Err(Error::Config("half-maximum not reached on the low side".into()));
    }
    let left = cross(j + 1, j);
    let mut k = i;
    while k < ys.len() - 1 && ys[k] > half {
        k += 1;
    }
    if ys[k] > half {
        return Err(Error::Config("half-maximum not reached on the high side".into()));
    }
    let right = cross(k - 1, k);
    if !(right > left) {
        return Err(Error::Config("degenerate half-maximum window".into()));
    }
    Ok(right - left)
}

/// Trapezoidal integral of ys over the inclusive index range [from, to].
fn trapezoid(xs: &[f64], ys: &[f64], from: usize, to: usize) -> f64 {
    (from..to)
        .map(|i| 0.5 * (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i]))
        .sum()
}

/// Residuals and Jacobian of the normalized double-Lorentzian model.
fn dl_residuals(
    xs: &[f64],
    ys: &[f64],
    omega0: f64,
    p: &[f64; 6],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = xs.len();
    let mut r = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, 6);
    let inv_pi = 1.0 / PI;
    let (x1, b1, a1, x2, b2, a2) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let (h1, h2) = (0.5 * b1, 0.5 * b2);
    for i in 0..n {
        let t1 = xs[i] - x1;
        let d1 = t1 * t1 + h1 * h1;
        let t2 = xs[i] - omega0 - x2;
        let d2 = t2 * t2 + h2 * h2;
        r[i] = a1 * inv_pi * h1 / d1 + a2 * inv_pi * h2 / d2 - ys[i];
        jac[(i, 0)] = 2.0 * a1 * inv_pi * h1 * t1 / (d1 * d1);
        jac[(i, 1)] = 0.5 * a1 * inv_pi * (t1 * t1 - h1 * h1) / (d1 * d1);
        jac[(i, 2)] = inv_pi * h1 / d1;
        jac[(i, 3)] = 2.0 * a2 * inv_pi * h2 * t2 / (d2 * d2);
        jac[(i, 4)] = 0.5 * a2 * inv_pi * (t2 * t2 - h2 * h2) / (d2 * d2);
        jac[(i, 5)] = inv_pi * h2 / d2;
    }
    (r, jac)
}

/// Natural magnitude of parameter k for step-size tests: widths for the
/// positions (which may sit at 0), the parameters themselves otherwise.
fn lm_scale(p: &[f64; 6], k: usize) -> f64 {
    match k {
        0 => p[1],
        3 => p[4],
        _ => p[k].abs(),
    }
}

/// Levenberg–Marquardt on the 6 free parameters; ω₀ stays fixed. Steps that
/// would make a width or area non-positive are rejected like uphill steps.
fn levenberg_marquardt(
    xs: &[f64],
    ys: &[f64],
    omega0: f64,
    mut p: [f64; 6],
) -> Result<([f64; 6], f64, bool)> {
    let (mut r, mut jac) = dl_residuals(xs, ys, omega0, &p);
    let mut cost = r.norm_squared();
    let mut grad = jac.tr_mul(&r);
    let g0 = grad.amax().max(f64::MIN_POSITIVE);
    let gtol = LM_GTOL * g0;
    let mut lambda = 1e-3;
    let mut converged = grad.amax() <= gtol;
    let mut iters = 0;
    while !converged && iters < LM_MAX_ITER {
        iters += 1;
        let a = jac.tr_mul(&jac);
        let rhs = grad.map(|v| -v);
        let mut accepted = false;
        while lambda <= LM_MAX_LAMBDA {
            let mut m = a.clone();
            for k in 0..6 {
                m[(k, k)] += lambda * a[(k, k)].max(f64::MIN_POSITIVE);
            }
            let Some(chol) = m.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&rhs);
            let mut trial = p;
            for k in 0..6 {
                trial[k] += delta[k];
            }
            let domain_ok = trial.iter().all(|v| v.is_finite())
                && trial[1] > 0.0
                && trial[2] > 0.0
                && trial[4] > 0.0
                && trial[5] > 0.0;
            if domain_ok {
                let (rt, jt) = dl_residuals(xs, ys, omega0, &trial);
                let ct = rt.norm_squared();
                if ct.is_finite() && ct < cost {
                    let small = (0..6)
                        .all(|k| delta[k].abs() <= 1e-13 * lm_scale(&trial, k).max(1e-300));
                    p = trial;
                    r = rt;
                    jac = jt;
                    cost = ct;
                    grad = jac.tr_mul(&r);
                    lambda = (lambda / 3.0).max(1e-14);
                    accepted = true;
                    if small || grad.amax() <= gtol || cost <= 1e-24 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: the iterate is a minimum to
            // working precision.
            break;
        }
    }
    let gfin = grad.amax();
    let converged = converged || gfin <= gtol || cost <= 1e-24;
    if !converged && gfin > 1e-4 * g0 {
        return Err(Error::Numerics(format!(
            "double-Lorentzian fit did not converge after {LM_MAX_ITER} iterations; \
             gradient {gfin:.3e} of initial {g0:.3e}; last iterate x1={:.6e} b1={:.6e} \
             a1={:.6e} x2={:.6e} b2={:.6e} a2={:.6e}",
            p[0], p[1], p[2], p[3], p[4], p[5]
        )));
    }
    Ok((p, cost.sqrt(), converged))
}

/// Result of the single-peak asymmetry decomposition
/// C/(x²+Γ_r²/4) + a·x + b·x/(x²+Γ_r²/4) about one resonance.
#[derive(Clone, Copy, Debug)]
pub struct AsymmetricLineShift {
    /// Lorentzian weight, > 0.
    pub c: f64,
    /// Linear-background slope.
    pub a: f64,
    /// Dispersive admixture.
    pub b: f64,
    /// Shift of the half-maximum midpoint, Δ(Γ_r/2) = aΓ_r⁴/(8C) + bΓ_r²/(4C) [Hz].
    pub half_max: f64,
    /// Shift of the maximum, Δ(0) = aΓ_r⁴/(32C) + bΓ_r²/(8C) [Hz].
    pub maximum: f64,
    /// Euclidean norm of the rate residuals inside the window.
    pub residual: f64,
}

/// Linear least-squares fit of the three-term asymmetric line model on a
/// ±6Γ_r window centered on the bare resonance position `center_hz`, with
/// the linewidth Γ_r held fixed. The window coordinate is x − center, so the
/// returned shifts measure the apparent displacement of the contaminated
/// line from its unperturbed position.
pub fn asymmetric_line_shift(
    spec: &Spectrum,
    center_hz: f64,
    gamma_r_hz: f64,
) -> Result<AsymmetricLineShift> {
    spec.validate()?;
    if !(center_hz.is_finite() && gamma_r_hz.is_finite() && gamma_r_hz > 0.0) {
        return Err(Error::Config(format!(
            "bad window parameters: center {center_hz} Hz, linewidth {gamma_r_hz} Hz"
        )));
    }
    let halfspan = SHIFT_WINDOW_LINEWIDTHS * gamma_r_hz;
    let mut ts = Vec::new();
    let mut ws = Vec::new();
    for (d, rate) in spec.detunings.iter().zip(&spec.rates) {
        let t = d / (2.0 * PI) - center_hz;
        if t.abs() <= halfspan {
            ts.push(t);
            ws.push(*rate);
        }
    }
    if ts.len() < 12 {
        return Err(Error::Config(format!(
            "only {} grid points inside the ±{SHIFT_WINDOW_LINEWIDTHS}Γ window",
            ts.len()
        )));
    }
    let y_scale = ws.iter().cloned().fold(0.0, f64::max);
    if !(y_scale > 0.0) {
        return Err(Error::Config("window contains no signal".into()));
    }
    let q2 = 0.25 * gamma_r_hz * gamma_r_hz;

    // Column-normalized normal equations of the basis {u, t, t·u}.
    let mut norms = [0.0_f64; 3];
    for &t in &ts {
        let u = 1.0 / (t * t + q2);
        norms[0] += u * u;
        norms[1] += t * t;
        norms[2] += t * u * t * u;
    }
    let norms = norms.map(f64::sqrt);
    if norms.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::Numerics("degenerate fit basis".into()));
    }
    let mut m = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (&t, &w) in ts.iter().zip(&ws) {
        let u = 1.0 / (t * t + q2);
        let phi = [u / norms[0], t / norms[1], t * u / norms[2]];
        let y = w / y_scale;
        for row in 0..3 {
            rhs[row] += phi[row] * y;
            for col in 0..3 {
                m[(row, col)] += phi[row] * phi[col];
            }
        }
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerics("asymmetric-line normal equations are singular".into()))?;
    let c = sol[0] / norms[0] * y_scale;
    let a = sol[1] / norms[1] * y_scale;
    let b = sol[2] / norms[2] * y_scale;
    if !(c > 0.0) {
        return Err(Error::Numerics(format!("non-positive Lorentzian weight C = {c:e}")));
    }
    let g2 = gamma_r_hz * gamma_r_hz;
    let g4 = g2 * g2;
    let mut residual = 0.0;
    for (&t, &w) in ts.iter().zip(&ws) {
        let u = 1.0 / (t * t + q2);
        let model = c * u + a * t + b * t * u;
        residual += (model - w) * (model - w);
    }
    Ok(AsymmetricLineShift {
        c,
        a,
        b,
        half_max: a * g4 / (8.0 * c) + b * g2 / (4.0 * c),
        maximum: a * g4 / (32.0 * c) + b * g2 / (8.0 * c),
        residual: residual.sqrt(),
    })
}

/// How a line-pulling number was extracted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PullingDefinition {
    /// Difference of double-Lorentzian fit positions, cross-on minus cross-off.
    FitDifference,
    /// Half-maximum-midpoint shift Δ(Γ_r/2) of the asymmetry decomposition.
    HalfMaxShift,
    /// Peak-maximum shift Δ(0) of the asymmetry decomposition.
    PeakMaxShift,
}

impl PullingDefinition {
    pub fn as_str(self) -> &'static str {
        match self {
            PullingDefinition::FitDifference => "fit-difference",
            PullingDefinition::HalfMaxShift => "halfmax-shift",
            PullingDefinition::PeakMaxShift => "peakmax-shift",
        }
    }
}

/// Line pulling of the two fine-structure resonances [Hz].
#[derive(Clone, Copy, Debug)]
pub struct LinePullingResult {
    /// Pulling of the low-frequency (J = 1/2) resonance.
    pub pulling_p12: f64,
    /// Pulling of the high-frequency (J = 3/2) resonance.
    pub pulling_p32: f64,
    pub definition: PullingDefinition,
}

/// Fit-difference line pulling plus the two underlying fits. The spectra
/// must share the grid and the detector; only the interference switches may
/// differ (both-off inputs are legal and give zero pulling).
pub fn line_pulling_fits(
    spec_cross_on: &Spectrum,
    spec_cross_off: &Spectrum,
    omega0: f64,
) -> Result<(LinePullingResult, DoubleLorentzianFit, DoubleLorentzianFit)> {
    if spec_cross_on.detunings != spec_cross_off.detunings {
        return Err(Error::Config("line pulling needs identical detuning grids".into()));
    }
    if spec_cross_on.region != spec_cross_off.region
        || spec_cross_on.tau_c != spec_cross_off.tau_c
    {
        return Err(Error::Config(
            "line pulling needs identical detector and coarse-graining metadata".into(),
        ));
    }
    let fit_on = fit_double_lorentzian(spec_cross_on, omega0)?;
    let fit_off = fit_double_lorentzian(spec_cross_off, omega0)?;
    let result = LinePullingResult {
        pulling_p12: fit_on.x1 - fit_off.x1,
        pulling_p32: fit_on.x2 - fit_off.x2,
        definition: PullingDefinition::FitDifference,
    };
    if !(result.pulling_p12.is_finite() && result.pulling_p32.is_finite()) {
        return Err(Error::Numerics("line pulling is not finite".into()));
    }
    Ok((result, fit_on, fit_off))
}

/// Fit-difference line pulling Δ_L = x_n^on − x_n^off per peak.
pub fn line_pulling(
    spec_cross_on: &Spectrum,
    spec_cross_off: &Spectrum,
    omega0: f64,
) -> Result<LinePullingResult> {
    Ok(line_pulling_fits(spec_cross_on, spec_cross_off, omega0)?.0)
}

/// Line pulling from the asymmetry decomposition of the cross-on spectrum
/// alone: windows centered on the scheme's bare resonances, Γ_r fixed at the
/// natural linewidth.
pub fn asymmetry_pulling(
    spec_cross_on: &Spectrum,
    scheme: &LevelScheme,
    definition: PullingDefinition,
) -> Result<LinePullingResult> {
    let (d1, d2) = peak_pair(scheme)?;
    let gamma_r = scheme.gamma_tot / (2.0 * PI);
    let s1 = asymmetric_line_shift(spec_cross_on, d1 / (2.0 * PI), gamma_r)?;
    let s2 = asymmetric_line_shift(spec_cross_on, d2 / (2.0 * PI), gamma_r)?;
    let (p12, p32) = match definition {
        PullingDefinition::HalfMaxShift => (s1.half_max, s2.half_max),
        PullingDefinition::PeakMaxShift => (s1.maximum, s2.maximum),
        PullingDefinition::FitDifference => {
            return Err(Error::Config(
                "fit-difference pulling requires a cross-off reference spectrum".into(),
            ))
        }
    };
    Ok(LinePullingResult { pulling_p12: p12, pulling_p32: p32, definition })
}

/// One-parameter families of detection regions for the geometry sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegionFamily {
    /// Cone about +y, swept in solid angle [sr].
    ConeAboutY,
    /// Double polar cone about z, swept in half-angle [rad].
    DoubleConeZ,
    /// Equatorial belt (complement of the double cone), swept in half-angle [rad].
    InvertedDoubleConeZ,
    /// Thin polar stripe of the given width, swept in center angle θ [rad].
    StripeTheta { width: f64 },
}

impl RegionFamily {
    pub fn region(&self, value: f64) -> DetectionRegion {
        match *self {
            RegionFamily::ConeAboutY => DetectionRegion::ConeAboutY { solid_angle: value },
            RegionFamily::DoubleConeZ => DetectionRegion::DoubleConeZ { half_angle: value },
            RegionFamily::InvertedDoubleConeZ => {
                DetectionRegion::InvertedDoubleConeZ { half_angle: value }
            }
            RegionFamily::StripeTheta { width } => {
                DetectionRegion::StripeTheta { theta: value, width }
            }
        }
    }

    /// CSV column name of the sweep variable.
    pub fn variable_name(&self) -> &'static str {
        match self {
            RegionFamily::ConeAboutY => "solid_angle_sr",
            RegionFamily::DoubleConeZ | RegionFamily::InvertedDoubleConeZ => "half_angle_rad",
            RegionFamily::StripeTheta { .. } => "theta_rad",
        }
    }
}

/// One row of a pulling sweep: the geometry (or τ_c) variable, the pulling,
/// and the larger of the two fit residual norms.
#[derive(Clone, Copy, Debug)]
pub struct PullingRow {
    pub variable: f64,
    pub pulling: LinePullingResult,
    pub residual: f64,
}

/// Fit-difference line pulling across a family of detection regions. The two
/// detuning scans (cross-interference on and off) are computed once; each
/// geometry only changes the emission matrix.
pub fn geometry_sweep(
    scheme: &LevelScheme,
    drive: &DriveConfig,
    cfg: &CoarseGrainConfig,
    family: RegionFamily,
    values: &[f64],
    grid: &[f64],
) -> Result<Vec<PullingRow>> {
    if values.is_empty() {
        return Err(Error::Config("geometry sweep needs at least one region".into()));
    }
    let omega0 = fine_splitting_hz(scheme)?;
    let scan_on = DetuningScan::new(scheme, drive, cfg, Toggles::default(), grid)?;
    let scan_off = DetuningScan::new(
        scheme,
        drive,
        cfg,
        Toggles { cross_damping: false, cross_shift: false },
        grid,
    )?;
    values
        .iter()
        .map(|&v| {
            let region = family.region(v);
            let spec_on = scan_on.spectrum(&region)?;
            let spec_off = scan_off.spectrum(&region)?;
            let (pulling, fit_on, fit_off) = line_pulling_fits(&spec_on, &spec_off, omega0)?;
            Ok(PullingRow { variable: v, pulling, residual: fit_on.residual.max(fit_off.residual) })
        })
        .collect()
}

/// One row of the τ_c sweep: pulling, the max of the two |pullings|, and the
/// same normalized to the first grid point (the deep-plateau reference).
#[derive(Clone, Copy, Debug)]
pub struct TauPullingRow {
    pub tau_c: f64,
    pub pulling: LinePullingResult,
    pub residual: f64,
    /// max(|Δ_L(P1/2)|, |Δ_L(P3/2)|).
    pub max_abs: f64,
    /// max_abs divided by its value at the first τ_c of the sweep.
    pub normalized: f64,
}

/// Logarithmic τ_c grid over [10⁻¹³, 10⁻⁹] s, three points per decade.
pub fn default_tau_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-13.0 + k as f64 / 3.0)).collect()
}

/// Maximum line pulling versus coarse-graining time at a fixed detector,
/// normalized to the plateau. The detuning scans are reused across τ_c
/// whenever the rebuilt active-block dynamics is unchanged (exactly the case
/// for hydrogen, where only the emission-matrix filter feels τ_c) and rebuilt
/// otherwise.
pub fn tau_c_sweep(
    scheme: &LevelScheme,
    drive: &DriveConfig,
    cfg: &CoarseGrainConfig,
    region: &DetectionRegion,
    taus: &[f64],
    grid: &[f64],
) -> Result<Vec<TauPullingRow>> {
    if taus.is_empty() {
        return Err(Error::Config("τ_c sweep needs at least one point".into()));
    }
    if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Config("τ_c values must be positive".into()));
    }
    let omega0 = fine_splitting_hz(scheme)?;
    let toggles_off = Toggles { cross_damping: false, cross_shift: false };
    let cfg_at = |tau: f64| CoarseGrainConfig { tau_c: tau, ..cfg.clone() };

    let mut scan_on = DetuningScan::new(scheme, drive, &cfg_at(taus[0]), Toggles::default(), grid)?;
    let mut scan_off = DetuningScan::new(scheme, drive, &cfg_at(taus[0]), toggles_off, grid)?;
    let mut scan_tau = taus[0];

    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let cfg_t = cfg_at(tau);
        if tau != scan_tau && !scan_on.reusable_with(&cfg_t)? {
            scan_on = DetuningScan::new(scheme, drive, &cfg_t, Toggles::default(), grid)?;
            scan_off = DetuningScan::new(scheme, drive, &cfg_t, toggles_off, grid)?;
            scan_tau = tau;
        }
        let spec_on = scan_on.spectrum_with(region, &cfg_t)?;
        let spec_off = scan_off.spectrum_with(region, &cfg_t)?;
        let (pulling, fit_on, fit_off) = line_pulling_fits(&spec_on, &spec_off, omega0)?;
        rows.push(TauPullingRow {
            tau_c: tau,
            pulling,
            residual: fit_on.residual.max(fit_off.residual),
            max_abs: pulling.pulling_p12.abs().max(pulling.pulling_p32.abs()),
            normalized: f64::NAN,
        });
    }
    let plateau = rows[0].max_abs;
    if !(plateau > 0.0) {
        return Err(Error::Numerics(
            "pulling vanishes at the first τ_c; nothing to normalize against".into(),
        ));
    }
    for row in &mut rows {
        row.normalized = row.max_abs / plateau;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydrogen::{build_level_scheme, ModelConfig};

    fn hydrogen() -> LevelScheme {
        build_level_scheme(&ModelConfig::default()).unwrap()
    }

    fn synthetic(fit: &DoubleLorentzianFit, lo: f64, hi: f64, n: usize) -> Spectrum {
        let step = (hi - lo) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
        Spectrum {
            detunings: xs.iter().map(|x| x * 2.0 * PI).collect(),
            rates: xs.iter().map(|&x| fit.evaluate(x)).collect(),
            region: DetectionRegion::Full4Pi,
            tau_c: 1e-12,
            toggles: Toggles::default(),
        }
    }

    fn base_params() -> DoubleLorentzianFit {
        DoubleLorentzianFit {
            x1: 3.21e3,
            b1: 1.29e7,
            a1: 2.0e9,
            x2: -1.1e4,
            b2: 1.31e7,
            a2: 4.2e9,
            omega0: 1.3644e9,
            residual: 0.0,
            converged: true,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn resonance_grid_and_splitting_match_the_level_ladder() {
        let scheme = hydrogen();
        let g = scheme.gamma_tot;
        let (d1, d2) = peak_pair(&scheme).unwrap();
        assert!(d1.abs() <= 1e-9 * g, "reference line sits at zero detuning, got {d1:e}");
        let splitting = fine_splitting_hz(&scheme).unwrap();
        assert!(
            (splitting - 1.3644e9).abs() < 2e6,
            "F=1 fine-structure splitting off: {splitting:e} Hz"
        );
        let grid = default_detuning_grid(&scheme).unwrap();
        assert_eq!(grid.len(), DEFAULT_GRID_POINTS);
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
        assert!((grid[0] - (d1 - 30.0 * g)).abs() <= 1e-6 * g);
        assert!((grid[grid.len() - 1] - (d2 + 30.0 * g)).abs() <= 1e-6 * g);
        let max_step = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(max_step <= g / 20.0, "grid coarser than 20 points per linewidth");

        // Sparse, truncated, and disordered grids are rejected up front.
        let sparse: Vec<f64> = (0..200).map(|k| grid[0] + k as f64 * g).collect();
        let drive = DriveConfig::default();
        let cfg = CoarseGrainConfig::default();
        assert!(matches!(
            DetuningScan::new(&scheme, &drive, &cfg, Toggles::default(), &sparse),
            Err(Error::Config(_))
        ));
        let truncated: Vec<f64> = grid.iter().cloned().take(1000).collect();
        assert!(matches!(
            DetuningScan::new(&scheme, &drive, &cfg, Toggles::default(), &truncated),
            Err(Error::Config(_))
        ));
        let mut disordered = grid.clone();
        disordered.swap(5, 6);
        assert!(matches!(
            DetuningScan::new(&scheme, &drive, &cfg, Toggles::default(), &disordered),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn synthetic_double_lorentzian_fit_is_exact_and_idempotent() {
        let truth = base_params();
        let spec = synthetic(&truth, -30.0 * truth.b1, truth.omega0 + 30.0 * truth.b2, 4001);
        let fit = fit_double_lorentzian(&spec, truth.omega0).unwrap();
        assert!(fit.converged);
        assert!((fit.x1 - truth.x1).abs() <= 1e-9 * truth.b1, "x1 {:e}", fit.x1 - truth.x1);
        assert!((fit.x2 - truth.x2).abs() <= 1e-9 * truth.b2, "x2 {:e}", fit.x2 - truth.x2);
        assert!(rel(fit.b1, truth.b1) <= 1e-9);
        assert!(rel(fit.b2, truth.b2) <= 1e-9);
        assert!(rel(fit.a1, truth.a1) <= 1e-9);
        assert!(rel(fit.a2, truth.a2) <= 1e-9);
        let peak = spec.rates.iter().cloned().fold(0.0, f64::max);
        assert!(fit.residual <= 1e-7 * peak);

        // Idempotence: a curve generated from the fit refits to itself.
        let regen = synthetic(&fit, -30.0 * fit.b1, fit.omega0 + 30.0 * fit.b2, 4001);
        let refit = fit_double_lorentzian(&regen, fit.omega0).unwrap();
        assert!((refit.x1 - fit.x1).abs() <= 1e-9 * fit.b1);
        assert!((refit.x2 - fit.x2).abs() <= 1e-9 * fit.b2);
        assert!(rel(refit.b1, fit.b1) <= 1e-9);
        assert!(rel(refit.a1, fit.a1) <= 1e-9);
        assert!(rel(refit.b2, fit.b2) <= 1e-9);
        assert!(rel(refit.a2, fit.a2) <= 1e-9);
    }

    #[test]
    fn dispersive_admixture_shifts_the_fit_by_the_half_maximum_formula() {
        let truth = base_params();
        let mut spec = synthetic(&truth, -30.0 * truth.b1, truth.omega0 + 30.0 * truth.b2, 4001);
        // Contaminate the first peak with β·t/(t² + (b₁/2)²), sized for a
        // 30 kHz half-maximum shift: β = 4CΔ/Γ_r² with C = a₁b₁/(2π²)·π = a₁b₁/(2π).
        let c_true = truth.a1 * truth.b1 / (2.0 * PI);
        let target = 3.0e4;
        let beta = 4.0 * c_true * target / (truth.b1 * truth.b1);
        let q2 = 0.25 * truth.b1 * truth.b1;
        for (d, r) in spec.detunings.iter().zip(spec.rates.iter_mut()) {
            let t = d / (2.0 * PI) - truth.x1;
            *r += beta * t / (t * t + q2);
        }
        spec.validate().unwrap();

        // The full-spectrum fit moves by the half-maximum shift formula.
        let fit = fit_double_lorentzian(&spec, truth.omega0).unwrap();
        let shift = fit.x1 - truth.x1;
        assert!(
            rel(shift, target) <= 0.01,
            "fitted shift {shift:e} Hz vs analytic {target:e} Hz"
        );
        // The other peak stays put at the few-Hz level.
        assert!((fit.x2 - truth.x2).abs() < 20.0);

        // The asymmetry decomposition recovers β and the same shift, and the
        // two shift definitions differ by the factor 2 of a pure-b line.
        let s = asymmetric_line_shift(&spec, truth.x1, truth.b1).unwrap();
        assert!(rel(s.b, beta) <= 5e-3, "dispersive weight {:e} vs {beta:e}", s.b);
        assert!(rel(s.half_max, target) <= 5e-3);
        assert!(s.half_max / s.maximum > 1.9 && s.half_max / s.maximum < 2.1);
        assert!(
            (shift - s.half_max).abs() / target <= 0.01,
            "fit-difference and half-max-shift definitions disagree: {shift:e} vs {:e}",
            s.half_max
        );
    }

    #[test]
    fn asymmetry_parameters_vanish_for_a_pure_lorentzian() {
        let truth = base_params();
        let spec = synthetic(&truth, -30.0 * truth.b1, truth.omega0 + 30.0 * truth.b2, 4001);
        let s = asymmetric_line_shift(&spec, truth.x1, truth.b1).unwrap();
        let c_true = truth.a1 * truth.b1 / (2.0 * PI);
        // The neighbor peak's far tail is the only contamination; it is ~1e-5
        // of the peak and almost purely even, so the shifts stay at the Hz level.
        assert!(rel(s.c, c_true) <= 1e-3, "C {:e} vs {c_true:e}", s.c);
        assert!(s.half_max.abs() < 10.0, "half-max shift {:e} Hz on a symmetric line", s.half_max);
        assert!(s.maximum.abs() < 5.0);
    }

    #[test]
    fn single_peak_spectrum_is_rejected_by_the_double_fit() {
        let mut truth = base_params();
        truth.a2 = 0.0;
        let mut spec = synthetic(&truth, -30.0 * truth.b1, truth.omega0 + 30.0 * truth.b2, 4001);
        // Rebuild rates with only the first Lorentzian.
        for (d, r) in spec.detunings.iter().zip(spec.rates.iter_mut()) {
            *r = lorentzian(d / (2.0 * PI) - truth.x1, truth.b1, truth.a1);
        }
        match fit_double_lorentzian(&spec, truth.omega0) {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("second resonance"), "unexpected message: {msg}")
            }
            other => panic!("single-peak input must be rejected, got {other:?}"),
        }
    }

    #[test]
    fn hydrogen_spectra_show_the_detection_interference_pulling() {
        let scheme = hydrogen();
        let drive = DriveConfig::default();
        let cfg = CoarseGrainConfig::default();
        let grid = default_detuning_grid(&scheme).unwrap();
        let scan_on = DetuningScan::new(&scheme, &drive, &cfg, Toggles::default(), &grid).unwrap();
        let scan_off = DetuningScan::new(
            &scheme,
            &drive,
            &cfg,
            Toggles { cross_damping: false, cross_shift: false },
            &grid,
        )
        .unwrap();
        let omega0 = fine_splitting_hz(&scheme).unwrap();
        let (d1, d2) = peak_pair(&scheme).unwrap();

        // Full sphere: the interference terms cancel identically, so the
        // cross toggle cannot move any rate and the pulling is fit noise.
        let sphere = DetectionRegion::Full4Pi;
        let sphere_on = scan_on.spectrum(&sphere).unwrap();
        let sphere_off = scan_off.spectrum(&sphere).unwrap();
        for (a, b) in sphere_on.rates.iter().zip(&sphere_off.rates) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(*b), "4π rates differ: {a:e} vs {b:e}");
        }
        let lp_sphere = line_pulling(&sphere_on, &sphere_off, omega0).unwrap();
        assert!(lp_sphere.pulling_p12.abs() < 1.0 && lp_sphere.pulling_p32.abs() < 1.0);

        // Two peaks separated by the fine-structure splitting.
        let imax = sphere_on
            .rates
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let far: Vec<usize> = (0..grid.len())
            .filter(|&j| (grid[j] - grid[imax]).abs() > PI * omega0)
            .collect();
        let jmax = *far
            .iter()
            .max_by(|a, b| sphere_on.rates[**a].total_cmp(&sphere_on.rates[**b]))
            .unwrap();
        let sep = (grid[imax] - grid[jmax]).abs();
        assert!(
            rel(sep, d2 - d1) <= 0.01,
            "peak separation {sep:e} rad/s vs splitting {:e}",
            d2 - d1
        );

        // Peak heights follow the perturbative rate oracle
        // h_n ∝ |d_n·ε̂|² G_nn: couplings from the drive lines, G from the
        // detector, both independent of the swept dynamics.
        let (excited, g4pi) = emission_matrix_for(&scheme, &sphere, &cfg, true).unwrap();
        let eps = drive.polarization;
        let mut weights: Vec<(f64, f64)> = Vec::new(); // (detuning, |amp|²·G_nn)
        for line in &scheme.drive_lines {
            let d = line.dipole_cartesian();
            let amp = d[0] * eps[0] + d[1] * eps[1] + d[2] * eps[2];
            if amp.norm() == 0.0 {
                continue;
            }
            let delta = scheme.states[line.upper].energy
                - scheme.states[scheme.driven].energy
                - scheme.omega_ref;
            let k = excited.iter().position(|&e| e == line.upper).unwrap();
            weights.push((delta, amp.norm_sqr() * g4pi[(k, k)].re));
        }
        assert_eq!(weights.len(), 2, "π light drives exactly two lines");
        weights.sort_by(|a, b| a.0.total_cmp(&b.0));
        let oracle = weights[1].1 / weights[0].1;
        let (h1, h2) = if grid[imax] < grid[jmax] {
            (sphere_on.rates[imax], sphere_on.rates[jmax])
        } else {
            (sphere_on.rates[jmax], sphere_on.rates[imax])
        };
        assert!(
            rel(h2 / h1, oracle) <= 0.02,
            "peak height ratio {:e} vs dipole-strength oracle {oracle:e}",
            h2 / h1
        );

        // Equatorial stripe: the off-diagonal detection terms pull the two
        // resonances in opposite directions, tens of kHz, and the two pulling
        // definitions agree at the percent level.
        let stripe = equatorial_stripe();
        let stripe_on = scan_on.spectrum(&stripe).unwrap();
        let stripe_off = scan_off.spectrum(&stripe).unwrap();
        let (lp, fit_on, fit_off) = line_pulling_fits(&stripe_on, &stripe_off, omega0).unwrap();
        assert!(fit_on.converged && fit_off.converged);
        assert!(lp.pulling_p12 < 0.0 && lp.pulling_p32 > 0.0, "{lp:?}");
        assert!(rel(lp.pulling_p12, -30326.1) <= 0.2, "P1/2 pulling {:e}", lp.pulling_p12);
        assert!(rel(lp.pulling_p32, 12139.5) <= 0.2, "P3/2 pulling {:e}", lp.pulling_p32);
        let jp = asymmetry_pulling(&stripe_on, &scheme, PullingDefinition::HalfMaxShift).unwrap();
        assert!(rel(jp.pulling_p12, -30547.9) <= 0.2);
        assert!(rel(jp.pulling_p32, 12175.9) <= 0.2);
        assert!((lp.pulling_p12 - jp.pulling_p12).abs() / lp.pulling_p12.abs() < 0.02);
        assert!((lp.pulling_p32 - jp.pulling_p32).abs() / lp.pulling_p32.abs() < 0.02);

        // The cross-off stripe spectrum is symmetric about each peak: the
        // symmetric double-Lorentzian model absorbs it to working precision,
        // while the interference asymmetry leaves a visibly larger residual.
        let peak = stripe_off.rates.iter().cloned().fold(0.0, f64::max);
        let rms_off = fit_off.residual / (grid.len() as f64).sqrt();
        assert!(rms_off <= 1e-4 * peak, "cross-off residual rms {rms_off:e} vs peak {peak:e}");
        assert!(fit_on.residual > 5.0 * fit_off.residual);
    }

    #[test]
    fn geometry_sweep_changes_sign_at_the_magic_angle_and_at_the_poles() {
        let scheme = hydrogen();
        let drive = DriveConfig::default();
        let cfg = CoarseGrainConfig::default();
        let grid = default_detuning_grid(&scheme).unwrap();
        let magic = 2.0_f64.sqrt().atan();
        let family = RegionFamily::StripeTheta { width: DEFAULT_STRIPE_WIDTH };
        let thetas = [0.0, magic - 0.1, magic + 0.1];
        let rows = geometry_sweep(&scheme, &drive, &cfg, family, &thetas, &grid).unwrap();
        assert_eq!(rows.len(), 3);
        // Poles: P1/2 pulled up by ≈ +60 kHz, P3/2 down by ≈ −60 kHz.
        let polar = &rows[0].pulling;
        assert!(polar.pulling_p12 > 0.0 && polar.pulling_p32 < 0.0, "{polar:?}");
        assert!(rel(polar.pulling_p12, 6.0e4) <= 0.2, "polar P1/2 {:e}", polar.pulling_p12);
        assert!(rel(polar.pulling_p32, -6.0e4) <= 0.2, "polar P3/2 {:e}", polar.pulling_p32);
        // The pulling changes sign across the magic angle.
        assert!(rows[1].pulling.pulling_p12 * rows[2].pulling.pulling_p12 < 0.0);
        assert!(rows[1].pulling.pulling_p32 * rows[2].pulling.pulling_p32 < 0.0);
    }

    #[test]
    fn pulling_is_flat_on_the_tau_plateau_and_dies_at_long_memory() {
        let scheme = hydrogen();
        let drive = DriveConfig::default();
        let cfg = CoarseGrainConfig::default();
        let grid = default_detuning_grid(&scheme).unwrap();
        let taus = [1e-13, 1e-12, 1e-11, 1e-9];
        let rows =
            tau_c_sweep(&scheme, &drive, &cfg, &equatorial_stripe(), &taus, &grid).unwrap();
        assert_eq!(rows[0].normalized, 1.0);
        for row in &rows[..3] {
            assert!(
                (row.normalized - 1.0).abs() <= 0.05,
                "plateau not flat at τ_c = {:e}: {:e}",
                row.tau_c,
                row.normalized
            );
        }
        assert!(
            rows[3].normalized < 0.5,
            "pulling must collapse at τ_c = 1e-9 s, got {:e}",
            rows[3].normalized
        );
    }
}
