//! Coarse-grained damping, cross-damping, and shift coefficients.
//!
//! Averaging the reservoir correlations over a coarse-graining time τ_c turns
//! the textbook one-sided rates into symmetric, Lindblad-compatible
//! coefficients. Everything here is built from three ingredients:
//!
//! * the filter function
//!
//!   ```text
//!   ℱ_c(Δω) = ∫₀^∞ dτ′ f(τ_c, τ′) · e^{iΔωτ′/2} sinc(Δωτ′/2),
//!   f(τ_c, τ′) = (2/(√π τ_c)) e^{−τ′²/τ_c²}   (normalized on τ′ ≥ 0),
//!   ```
//!
//!   which equals 1 at Δω = 0 and suppresses pairs of transitions whose
//!   frequency difference beats faster than 1/τ_c. In closed form
//!   Re ℱ_c = (√π/b) erf(b/2) and Im ℱ_c = (4/(√π b)) ∫₀^{b/2} D(x) dx with
//!   b = Δω τ_c and D the Dawson function;
//!
//! * the damping coefficients
//!
//!   ```text
//!   γ_ij = RATE_PREFACTOR · (d_i*·d_j) · ℱ_c(ω_i−ω_j) · ω̄_ij³,
//!   ω̄_ij = (ω_i + ω_j)/2,
//!   ```
//!
//!   whose ω̄³ kernel and thermal occupations use the gross Bohr frequencies
//!   carried by each [`Transition`] (`omega_rate`), while the ℱ_c argument
//!   uses the full fine+hyperfine ladder (`omega`) — see the level-scheme
//!   module for why that split keeps total rates isotropic;
//!
//! * the second-order (Lamb-type) shifts
//!
//!   ```text
//!   Δ_ij^± = (RATE_PREFACTOR/2π) (d_i*·d_j) Re ℱ_c(ω_i−ω_j)
//!            · 𝒫∫₀^{ω_cut} dω ω³ [n(ω,T)] / (ω ± ω̄_ij),
//!   ```
//!
//!   with the principal value taken by symmetric excision plus Richardson
//!   extrapolation. The shift integrals are dominated by the relativistic
//!   cutoff ω_cut ~ mc²/ħ (they renormalize the bare line positions); only
//!   their differential structure across the excited manifold is physical,
//!   which the Hamiltonian assembly accounts for by dropping the common
//!   diagonal.
//!
//! The static (single-sided) rates γ_ij^F = RATE_PREFACTOR (d_i*·d_j) ω_j³
//! are kept as a diagnostic: they are not Hermitian-symmetric across
//! frequency-mismatched pairs, which is exactly the defect coarse graining
//! repairs.

use crate::consts;
use crate::hydrogen::{LevelScheme, Transition};
use crate::linalg::{hermitian_eigen, CMat};
use crate::quad;
use crate::{Error, Result};
use num_complex::Complex64;
use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

/// Parameters of the coarse-graining procedure and reservoir state.
#[derive(Clone, Debug)]
pub struct CoarseGrainConfig {
    /// Coarse-graining time τ_c [s].
    pub tau_c: f64,
    /// Reservoir temperature [K].
    pub temperature: f64,
    /// Cutoff of the shift integrals [rad/s]; defaults to mc²/ħ.
    pub omega_cut: f64,
}

impl Default for CoarseGrainConfig {
    fn default() -> Self {
        CoarseGrainConfig {
            tau_c: 1e-12,
            temperature: 300.0,
            omega_cut: consts::OMEGA_CUT,
        }
    }
}

impl CoarseGrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c.is_finite() && self.tau_c > 0.0) {
            return Err(Error::Config(format!(
                "coarse-graining time {} must be positive and finite",
                self.tau_c
            )));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be non-negative and finite",
                self.temperature
            )));
        }
        if !(self.omega_cut.is_finite() && self.omega_cut > 0.0) {
            return Err(Error::Config(format!(
                "cutoff frequency {} must be positive and finite",
                self.omega_cut
            )));
        }
        Ok(())
    }

    /// Non-fatal diagnostics: the coarse-graining time should sit well inside
    /// the window between the reservoir correlation time τ_R ≃ ħ/(k_B T) and
    /// the atomic relaxation time τ_A (the spontaneous lifetime).
    pub fn warnings(&self, atomic_lifetime: f64) -> Vec<String> {
        let mut w = Vec::new();
        if self.temperature > 0.0 {
            let tau_r = consts::HBAR / (consts::KB * self.temperature);
            if self.tau_c < 10.0 * tau_r {
                w.push(format!(
                    "tau_c = {:.3e} s is within a decade of the reservoir correlation \
                     time {:.3e} s; coarse-grained coefficients assume tau_c >> hbar/kT",
                    self.tau_c, tau_r
                ));
            }
        }
        if atomic_lifetime.is_finite()
            && atomic_lifetime > 0.0
            && self.tau_c > 0.1 * atomic_lifetime
        {
            w.push(format!(
                "tau_c = {:.3e} s is within a decade of the atomic lifetime {:.3e} s; \
                 coarse graining assumes tau_c << 1/gamma",
                self.tau_c, atomic_lifetime
            ));
        }
        w
    }
}

// ---------------------------------------------------------------------------
// Dawson function and its running integral.
// ---------------------------------------------------------------------------

/// Dawson function D(x) = e^{−x²} ∫₀^x e^{t²} dt.
///
/// Three regimes: Maclaurin series for |x| ≤ 3 (alternating terms peak near
/// 3×10², so cancellation stays below ~1e-13), direct quadrature of the
/// defining integral for 3 < |x| < 6, and the asymptotic series
/// Σ_k (2k−1)!!/(2^{k+1} x^{2k+1}) for |x| ≥ 6 where its smallest term is
/// below 1e-15 relative.
pub fn dawson(x: f64) -> f64 {
    if x < 0.0 {
        return -dawson(-x);
    }
    if x <= 3.0 {
        let mut term = x;
        let mut sum = x;
        let mut k = 0u32;
        while term.abs() > 1e-17 * sum.abs().max(1e-300) {
            term *= -2.0 * x * x / (2.0 * k as f64 + 3.0);
            sum += term;
            k += 1;
        }
        sum
    } else if x < 6.0 {
        let (inner, _) = quad::integrate_real(|t| (t * t).exp(), 0.0, x, 1e-14, 1e-13)
            .expect("Dawson inner integral on a smooth finite range converges");
        (-x * x).exp() * inner
    } else {
        let mut term = 0.5 / x;
        let mut sum = term;
        let mut k = 1u32;
        loop {
            let next = term * (2.0 * k as f64 - 1.0) / (2.0 * x * x);
            if next.abs() >= term.abs() || next.abs() < 1e-17 * sum.abs() {
                sum += next;
                break;
            }
            sum += next;
            term = next;
            k += 1;
        }
        sum
    }
}

fn dawson_integral_to_8() -> f64 {
    static I8: OnceLock<f64> = OnceLock::new();
    *I8.get_or_init(|| {
        quad::integrate_real(dawson, 0.0, 8.0, 1e-11, 1e-11)
            .expect("Dawson running integral converges")
            .0
    })
}

/// Antiderivative tail of the asymptotic Dawson series:
/// ∫ D(x) dx = (1/2) ln x + T(x) + const for large x.
fn dawson_tail(x: f64) -> f64 {
    let x2 = x * x;
    let x4 = x2 * x2;
    let x6 = x4 * x2;
    let x8 = x4 * x4;
    -1.0 / (8.0 * x2) - 3.0 / (32.0 * x4) - 5.0 / (32.0 * x6) - 105.0 / (256.0 * x8)
        - 945.0 / (640.0 * x8 * x2)
        - 10395.0 / (1536.0 * x8 * x4)
        - 135135.0 / (3584.0 * x8 * x6)
}

/// Running integral ∫₀^X D(x) dx for X ≥ 8, anchored on the quadrature value
/// at 8 and continued with the integrated asymptotic series.
fn dawson_integral(x: f64) -> f64 {
    debug_assert!(x >= 8.0);
    dawson_integral_to_8() + 0.5 * (x / 8.0).ln() + dawson_tail(x) - dawson_tail(8.0)
}

// ---------------------------------------------------------------------------
// Filter function.
// ---------------------------------------------------------------------------

/// Direct-quadrature branch, valid for moderate b = Δω τ_c: substituting
/// u = τ′/τ_c turns the filter into
/// ∫₀^∞ du (2/√π) e^{−u²} [sin(bu) + i(1 − cos(bu))]/(bu),
/// truncated at u = 8 where the Gaussian is below 1e-28.
fn fc_quadrature(b: f64) -> Result<Complex64> {
    debug_assert!(b > 0.0);
    let two_over_sqrt_pi = std::f64::consts::FRAC_2_SQRT_PI;
    let f = move |u: f64| {
        let w = b * u;
        let (re, im) = if w < 1e-4 {
            let w2 = w * w;
            (
                1.0 - w2 / 6.0 + w2 * w2 / 120.0,
                w / 2.0 - w * w2 / 24.0 + w * w2 * w2 / 720.0,
            )
        } else {
            (w.sin() / w, (1.0 - w.cos()) / w)
        };
        let g = two_over_sqrt_pi * (-u * u).exp();
        Complex64::new(g * re, g * im)
    };
    let result = quad::integrate(f, 0.0, 8.0, 1e-14, 1e-10)?;
    Ok(result.value)
}

/// Closed-form branch for large b: erf(b/2) = 1 to below 1e-99 once b > 30,
/// so Re ℱ_c = √π/b exactly at working precision, and the Dawson running
/// integral continues analytically.
fn fc_closed_form(b: f64) -> Complex64 {
    debug_assert!(b > 16.0);
    let sqrt_pi = 2.0 / std::f64::consts::FRAC_2_SQRT_PI;
    let re = sqrt_pi / b;
    let im = 4.0 / (sqrt_pi * b) * dawson_integral(0.5 * b);
    Complex64::new(re, im)
}

/// Filter function ℱ_c(Δω) of the coarse-graining procedure.
///
/// ℱ_c(0) = 1, ℱ_c(−Δω) = ℱ_c(Δω)*, |ℱ_c| ≤ 1, and |ℱ_c| → 0 as
/// |Δω| τ_c → ∞ (algebraically: √π/b in the real part, ~2 ln b/(√π b) in
/// the imaginary part).
pub fn fc(delta_omega: f64, tau_c: f64) -> Result<Complex64> {
    if !(tau_c.is_finite() && tau_c > 0.0) {
        return Err(Error::Config(format!(
            "coarse-graining time {tau_c} must be positive and finite"
        )));
    }
    if !delta_omega.is_finite() {
        return Err(Error::Config(format!(
            "filter argument {delta_omega} must be finite"
        )));
    }
    let b = delta_omega * tau_c;
    if b == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    if b < 0.0 {
        return Ok(fc(-delta_omega, tau_c)?.conj());
    }
    if b <= 30.0 {
        fc_quadrature(b)
    } else {
        Ok(fc_closed_form(b))
    }
}

/// Memoized filter evaluations for one τ_c. Level-scheme energy differences
/// repeat exactly across transition pairs (same subtractions of the same
/// f64 energies), so keying on the bit pattern of |Δω| deduplicates the
/// expensive quadrature calls.
pub struct FcCache {
    tau_c: f64,
    map: HashMap<u64, Complex64>,
}

impl FcCache {
    pub fn new(tau_c: f64) -> Result<Self> {
        if !(tau_c.is_finite() && tau_c > 0.0) {
            return Err(Error::Config(format!(
                "coarse-graining time {tau_c} must be positive and finite"
            )));
        }
        Ok(FcCache {
            tau_c,
            map: HashMap::new(),
        })
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c
    }

    pub fn get(&mut self, delta_omega: f64) -> Result<Complex64> {
        let key = delta_omega.abs();
        let value = match self.map.get(&key.to_bits()) {
            Some(&v) => v,
            None => {
                let v = fc(key, self.tau_c)?;
                self.map.insert(key.to_bits(), v);
                v
            }
        };
        Ok(if delta_omega < 0.0 { value.conj() } else { value })
    }
}

// ---------------------------------------------------------------------------
// Thermal occupation.
// ---------------------------------------------------------------------------

/// Bose–Einstein occupation n(ω, T) = 1/(e^{ħω/k_B T} − 1).
///
/// Returns exactly 0 at T = 0 and for ħω/k_B T > 700, where the occupation
/// is unrepresentable; callers that need a physical cold/hot decision apply
/// their own floor on the returned value.
pub fn thermal_n(omega: f64, temperature: f64) -> Result<f64> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Config(format!(
            "thermal occupation requires omega > 0, got {omega}"
        )));
    }
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::Config(format!(
            "thermal occupation requires T >= 0, got {temperature}"
        )));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    let x = consts::HBAR * omega / (consts::KB * temperature);
    if x > 700.0 {
        return Ok(0.0);
    }
    Ok(1.0 / x.exp_m1())
}

// ---------------------------------------------------------------------------
// Damping coefficients.
// ---------------------------------------------------------------------------

/// Coarse-grained damping coefficient γ_ij [1/s], without the thermal
/// (1 + n) factor — that belongs to the dissipator terms that use it.
///
/// γ_ij = RATE_PREFACTOR (d_i*·d_j) ℱ_c(ω_i−ω_j) ω̄_ij³ with the arithmetic
/// mean ω̄_ij of the Bohr rate frequencies. Hermitian by construction:
/// γ_ji = γ_ij* exactly.
pub fn gamma_cg(t_i: &Transition, t_j: &Transition, cfg: &CoarseGrainConfig) -> Result<Complex64> {
    let filter = fc(t_i.omega - t_j.omega, cfg.tau_c)?;
    Ok(filter * gamma_pair_scale(t_i, t_j))
}

/// The frequency-symmetric scalar part of γ_ij (everything except ℱ_c).
fn gamma_pair_scale(t_i: &Transition, t_j: &Transition) -> f64 {
    let wbar = 0.5 * (t_i.omega_rate + t_j.omega_rate);
    consts::RATE_PREFACTOR * t_i.dot(t_j) * (wbar * wbar * wbar)
}

/// Static (uncoarse-grained) damping coefficient γ̃_ij =
/// RATE_PREFACTOR (d_i*·d_j) ω_j³ [1/s]. Diagnostic only: it weighs each
/// pair by the *second* transition's frequency cubed and is therefore not
/// symmetric under i ↔ j unless ω_i = ω_j.
pub fn gamma_static(t_i: &Transition, t_j: &Transition) -> Complex64 {
    let w = t_j.omega_rate;
    Complex64::new(consts::RATE_PREFACTOR * t_i.dot(t_j) * (w * w * w), 0.0)
}

/// The full pairwise damping matrix over a transition list.
#[derive(Clone, Debug)]
pub struct GammaMatrix {
    /// γ_ij, Hermitian, indexed like the transition slice it was built from.
    pub matrix: CMat,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Builds the Hermitian damping matrix and verifies it is positive
/// semidefinite within tolerance (min eigenvalue ≥ −1e-8 × max eigenvalue);
/// a worse violation means the generator is not Lindblad-dissipative and is
/// reported as a consistency error.
pub fn build_gamma_matrix(
    transitions: &[Transition],
    cfg: &CoarseGrainConfig,
) -> Result<GammaMatrix> {
    cfg.validate()?;
    if transitions.is_empty() {
        return Err(Error::Config("no transitions to build a damping matrix from".into()));
    }
    let n = transitions.len();
    let mut cache = FcCache::new(cfg.tau_c)?;
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let filter = cache.get(transitions[i].omega - transitions[j].omega)?;
            let v = filter * gamma_pair_scale(&transitions[i], &transitions[j]);
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
    let (eigs, _) = hermitian_eigen(&m);
    let min_eigenvalue = eigs[0];
    let max_eigenvalue = eigs[n - 1];
    if min_eigenvalue < -1e-8 * max_eigenvalue.max(0.0) {
        return Err(Error::Consistency(format!(
            "damping matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e} \
             vs max {max_eigenvalue:e}"
        )));
    }
    Ok(GammaMatrix {
        matrix: m,
        min_eigenvalue,
        max_eigenvalue,
    })
}

// ---------------------------------------------------------------------------
// Principal-value shift integrals.
// ---------------------------------------------------------------------------

/// Which sign of the denominator ω ± ω̄_ij a shift integral carries.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum ShiftSign {
    Plus,
    Minus,
}

/// Upper limit beyond which a thermal integrand is numerically zero; keeps
/// the adaptive quadrature from sampling a support region that is an
/// invisible sliver of [0, ω_cut].
fn thermal_clip(temperature: f64) -> f64 {
    150.0 * consts::KB * temperature / consts::HBAR
}

/// ∫_lo^hi ω³ w(ω) dω with an optional hard clip on the upper limit.
fn shift_segment(
    weight: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    clip: Option<f64>,
) -> Result<f64> {
    let hi = clip.map_or(hi, |c| hi.min(c));
    if hi <= lo {
        return Ok(0.0);
    }
    let (v, _) = quad::integrate_real(|w| w * w * w * weight(w), lo, hi, 0.0, 5e-13)?;
    Ok(v)
}

/// 𝒫∫₀^upper dω ω³ w(ω)/(ω − a) by symmetric excision of half-width ε around
/// the pole and two-level Richardson extrapolation ε → 0 (the excision error
/// is odd in ε, so 2P(ε/2) − P(ε) cancels the linear term and the 8:1
/// combination cancels the cubic one).
fn principal_value(
    weight: &dyn Fn(f64) -> f64,
    a: f64,
    upper: f64,
    clip: Option<f64>,
) -> Result<f64> {
    let margin = a.min(upper - a);
    if margin <= 1e-12 * upper {
        return Err(Error::Config(format!(
            "principal-value pole at {a:e} coincides with an integration endpoint \
             of [0, {upper:e}]"
        )));
    }
    let eps0 = 1e-3 * margin;
    let mut pv = [0.0; 3];
    for (k, p) in pv.iter_mut().enumerate() {
        let eps = eps0 / (1 << k) as f64;
        let f = |w: f64| weight(w) / (w - a);
        let left = shift_segment(&f, 0.0, a - eps, clip)?;
        let right = shift_segment(&f, a + eps, upper, clip)?;
        *p = left + right;
    }
    let r1a = 2.0 * pv[1] - pv[0];
    let r1b = 2.0 * pv[2] - pv[1];
    Ok((8.0 * r1b - r1a) / 7.0)
}

/// The scalar integral 𝒫∫₀^{ω_cut} dω ω³ [n(ω,T)]/(ω ± a) entering the
/// shifts; vacuum weight 1 when `thermal` is false.
fn shift_integral(
    a: f64,
    sign: ShiftSign,
    thermal: bool,
    cfg: &CoarseGrainConfig,
) -> Result<f64> {
    let upper = cfg.omega_cut;
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Config(format!(
            "shift integral requires a positive pole frequency, got {a:e}"
        )));
    }
    let (weight, clip): (Box<dyn Fn(f64) -> f64>, Option<f64>) = if thermal {
        if cfg.temperature == 0.0 {
            return Ok(0.0);
        }
        let t = cfg.temperature;
        (
            Box::new(move |w: f64| thermal_n(w, t).unwrap_or(0.0)),
            Some(thermal_clip(cfg.temperature)),
        )
    } else {
        (Box::new(|_| 1.0), None)
    };
    match sign {
        // Denominator ω + a never vanishes on (0, ω_cut].
        ShiftSign::Plus => shift_segment(&|w| weight(w) / (w + a), 0.0, upper, clip),
        ShiftSign::Minus => {
            if a >= upper {
                if (a - upper).abs() <= 1e-12 * upper {
                    return Err(Error::Config(format!(
                        "principal-value pole at {a:e} coincides with the cutoff {upper:e}"
                    )));
                }
                // Pole beyond the cutoff: plain integral.
                return shift_segment(&|w| weight(w) / (w - a), 0.0, upper, clip);
            }
            principal_value(&weight, a, upper, clip)
        }
    }
}

/// Vacuum (Δ_ij^±) or thermal (Δ_ij^{T±}) cross-shift [rad/s]:
///
/// ```text
/// Δ = (RATE_PREFACTOR/2π) (d_i*·d_j) Re ℱ_c(ω_i−ω_j)
///     · 𝒫∫₀^{ω_cut} dω ω³ [n(ω,T)]/(ω ± ω̄_ij).
/// ```
///
/// The real part of the filter enters because the shift is the Hermitian
/// (Hamiltonian) half of the second-order kernel. Errors if the pole sits on
/// an integration endpoint.
pub fn cross_shift(
    t_i: &Transition,
    t_j: &Transition,
    cfg: &CoarseGrainConfig,
    sign: ShiftSign,
    thermal: bool,
) -> Result<f64> {
    cfg.validate()?;
    let dot = t_i.dot(t_j);
    if dot == 0.0 {
        return Ok(0.0);
    }
    let filter = fc(t_i.omega - t_j.omega, cfg.tau_c)?.re;
    let a = 0.5 * (t_i.omega_rate + t_j.omega_rate);
    let integral = shift_integral(a, sign, thermal, cfg)?;
    Ok(consts::RATE_PREFACTOR / (2.0 * std::f64::consts::PI) * dot * filter * integral)
}

/// First-order estimate of a cross shift from the two self shifts:
/// Δ_ij ≈ ½ (d_i*·d_j) Re ℱ_c(ω_i−ω_j) (Δ_ii/|d_i|² + Δ_jj/|d_j|²),
/// accurate to first order in (ω_i−ω_j)/ω̄_ij.
pub fn cross_shift_estimate(
    t_i: &Transition,
    t_j: &Transition,
    cfg: &CoarseGrainConfig,
    sign: ShiftSign,
    thermal: bool,
) -> Result<f64> {
    let d2_i = t_i.dipole_sq();
    let d2_j = t_j.dipole_sq();
    if d2_i == 0.0 || d2_j == 0.0 {
        return Err(Error::Config(
            "cross-shift estimate needs transitions with nonzero dipoles".into(),
        ));
    }
    let dot = t_i.dot(t_j);
    let filter = fc(t_i.omega - t_j.omega, cfg.tau_c)?.re;
    let dii = cross_shift(t_i, t_i, cfg, sign, thermal)?;
    let djj = cross_shift(t_j, t_j, cfg, sign, thermal)?;
    Ok(0.5 * dot * filter * (dii / d2_i + djj / d2_j))
}

/// Cross-shift evaluator with memoized principal-value integrals. The PV
/// integral depends only on the pole frequency (and branch), which repeats
/// across every transition pair sharing the same Bohr frequencies — a few
/// distinct values per level scheme.
pub struct CrossShiftCalculator<'a> {
    cfg: &'a CoarseGrainConfig,
    fc_cache: FcCache,
    pv: HashMap<(u64, ShiftSign, bool), f64>,
}

impl<'a> CrossShiftCalculator<'a> {
    pub fn new(cfg: &'a CoarseGrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CrossShiftCalculator {
            cfg,
            fc_cache: FcCache::new(cfg.tau_c)?,
            pv: HashMap::new(),
        })
    }

    fn pole_integral(&mut self, a: f64, sign: ShiftSign, thermal: bool) -> Result<f64> {
        let key = (a.to_bits(), sign, thermal);
        if let Some(&v) = self.pv.get(&key) {
            return Ok(v);
        }
        let v = shift_integral(a, sign, thermal, self.cfg)?;
        self.pv.insert(key, v);
        Ok(v)
    }

    pub fn shift(
        &mut self,
        t_i: &Transition,
        t_j: &Transition,
        sign: ShiftSign,
        thermal: bool,
    ) -> Result<f64> {
        let dot = t_i.dot(t_j);
        if dot == 0.0 {
            return Ok(0.0);
        }
        let filter = self.fc_cache.get(t_i.omega - t_j.omega)?.re;
        let a = 0.5 * (t_i.omega_rate + t_j.omega_rate);
        let integral = self.pole_integral(a, sign, thermal)?;
        Ok(consts::RATE_PREFACTOR / (2.0 * std::f64::consts::PI) * dot * filter * integral)
    }
}

/// Raw excited-manifold shift matrix δ_ee′ = Σ_g (Δ⁻_{ge,ge′} + Δ^T_{ge,ge′})
/// with Δ^T = Δ^{T−} − Δ^{T+}, summed over the decay transitions' lower
/// states. Returns the excited-state indices and the symmetric real matrix
/// [rad/s], *including* the large uniform diagonal (the unrenormalized
/// Lamb-type shift of the whole manifold); the Hamiltonian assembly is
/// responsible for keeping only its traceless part.
///
/// Pair sums over complete lower multiplets cancel for distinct upper states
/// of equal principal quantum number; to keep that cancellation exact in the
/// face of the enormous cutoff-dominated scalars, each ground-sum factor is
/// clamped to zero when it is below 1e-12 of its diagonal normalization.
pub fn excited_cross_shift_matrix(
    scheme: &LevelScheme,
    cfg: &CoarseGrainConfig,
) -> Result<(Vec<usize>, nalgebra::DMatrix<f64>)> {
    cfg.validate()?;
    let excited = scheme.excited_indices();
    let ne = excited.len();
    let pos: HashMap<usize, usize> = excited.iter().enumerate().map(|(k, &e)| (e, k)).collect();

    // Ground-sum factors grouped by the (bit-exact) pole frequency of the
    // pair, so each group multiplies one principal-value scalar.
    // dsum[(k, k2)][a_bits] accumulates Σ_g d_ge·d_ge′ for that pole.
    // BTreeMaps: both the accumulation and the later iteration feed float
    // sums, so the order must not depend on the per-process hash seed.
    let mut dsum: Vec<BTreeMap<u64, f64>> = vec![BTreeMap::new(); ne * ne];
    let mut by_lower: BTreeMap<usize, Vec<&Transition>> = BTreeMap::new();
    for t in &scheme.transitions {
        by_lower.entry(t.lower).or_default().push(t);
    }
    for list in by_lower.values() {
        for t1 in list {
            for t2 in list.iter() {
                let k1 = pos[&t1.upper];
                let k2 = pos[&t2.upper];
                let a = 0.5 * (t1.omega_rate + t2.omega_rate);
                *dsum[k1 * ne + k2].entry(a.to_bits()).or_insert(0.0) += t1.dot(t2);
            }
        }
    }

    // Clamping normalization: total diagonal dipole weight per upper state.
    let total_weight: Vec<f64> = excited
        .iter()
        .map(|&e| {
            scheme
                .transitions
                .iter()
                .filter(|t| t.upper == e)
                .map(|t| t.dipole_sq())
                .sum::<f64>()
        })
        .collect();

    let mut calc = CrossShiftCalculator::new(cfg)?;
    let prefactor = consts::RATE_PREFACTOR / (2.0 * std::f64::consts::PI);
    let mut delta = nalgebra::DMatrix::<f64>::zeros(ne, ne);
    for k1 in 0..ne {
        for k2 in k1..ne {
            let e1 = excited[k1];
            let e2 = excited[k2];
            let filter = calc
                .fc_cache
                .get(scheme.states[e1].energy - scheme.states[e2].energy)?
                .re;
            let norm = (total_weight[k1] * total_weight[k2]).sqrt();
            let mut value = 0.0;
            for (&a_bits, &dfrak) in &dsum[k1 * ne + k2] {
                if dfrak.abs() < 1e-12 * norm {
                    continue;
                }
                let a = f64::from_bits(a_bits);
                let pv = calc.pole_integral(a, ShiftSign::Minus, false)?
                    + calc.pole_integral(a, ShiftSign::Minus, true)?
                    - calc.pole_integral(a, ShiftSign::Plus, true)?;
                value += prefactor * filter * dfrak * pv;
            }
            delta[(k1, k2)] = value;
            delta[(k2, k1)] = value;
        }
    }
    Ok((excited, delta))
}

// ---------------------------------------------------------------------------
// Mean-field (reservoir displacement) term.
// ---------------------------------------------------------------------------

/// First-order reservoir contribution ⟨V_R⟩: the linear coupling averages the
/// field operators over the thermal state, and a thermal state has zero
/// displacement, so the term vanishes identically. Verified here by tracing
/// the annihilation operator against a truncated thermal Fock distribution
/// rather than silently dropped; returns the zero operator on the scheme's
/// Hilbert space.
pub fn mean_field_term(scheme: &LevelScheme, temperature: f64) -> CMat {
    let omega = scheme.omega_ref.abs().max(1.0);
    let x = if temperature > 0.0 {
        (consts::HBAR * omega / (consts::KB * temperature)).min(700.0)
    } else {
        700.0
    };
    // ⟨a⟩ = Σ_k p_k ⟨k|a|k⟩ with p_k ∝ e^{−xk}; a|k⟩ = √k |k−1⟩ is strictly
    // off-diagonal, so every term is exactly zero.
    let mut displacement = 0.0;
    for k in 0..64u32 {
        let p = (-x * k as f64).exp();
        let diag_element_of_a = 0.0 * (k as f64).sqrt();
        displacement += p * diag_element_of_a;
    }
    assert_eq!(
        displacement, 0.0,
        "thermal reservoir displacement must vanish"
    );
    CMat::zeros(scheme.states.len(), scheme.states.len())
}

/// Detection-independent total photon emission weight between two excited
/// states, used by full-solid-angle observables: Σ over transition pairs
/// that share a lower state of γ_ij restricted to uppers (e, e′).
pub fn excited_pair_weight(
    scheme: &LevelScheme,
    e: usize,
    e2: usize,
    cache: &mut FcCache,
) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for t1 in scheme.transitions.iter().filter(|t| t.upper == e) {
        for t2 in scheme
            .transitions
            .iter()
            .filter(|t| t.upper == e2 && t.lower == t1.lower)
        {
            let filter = cache.get(t1.omega - t2.omega)?;
            sum += filter * gamma_pair_scale(t1, t2);
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydrogen::{build_level_scheme, ModelConfig};
    use approx::assert_abs_diff_eq;

    fn synthetic(dipole: [f64; 3], omega: f64, omega_rate: f64) -> Transition {
        Transition {
            lower: 0,
            upper: 1,
            dipole,
            omega,
            omega_rate,
        }
    }

    /// Independent filter oracle: ℱ_c(b) = ∫₀^∞ du (2/√π) e^{−u²} ∫₀^1 ds e^{i b u s},
    /// using the plain-exponential representation of e^{iw/2} sinc(w/2)
    /// instead of the production sin/(1−cos) split.
    fn fc_oracle(b: f64) -> Complex64 {
        let outer = quad::integrate(
            |u| {
                let inner = quad::integrate(
                    |s| {
                        let phase = b * u * s;
                        Complex64::new(phase.cos(), phase.sin())
                    },
                    0.0,
                    1.0,
                    1e-13,
                    1e-12,
                )
                .unwrap()
                .value;
                inner * std::f64::consts::FRAC_2_SQRT_PI * (-u * u).exp()
            },
            0.0,
            10.0,
            1e-13,
            1e-11,
        )
        .unwrap();
        outer.value
    }

    #[test]
    fn filter_matches_nested_quadrature_oracle() {
        for b in [0.3, 1.0, 3.0, 10.0, 20.0, 30.0] {
            let oracle = fc_oracle(b);
            let got = fc(b, 1.0).unwrap();
            assert!(
                (got - oracle).norm() <= 1e-9,
                "b = {b}: {got} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn filter_trivial_points_and_symmetry() {
        assert_eq!(fc(0.0, 1e-12).unwrap(), Complex64::new(1.0, 0.0));
        for dw in [1e9, 3.7e11, 2e13, 5e16] {
            let plus = fc(dw, 1e-12).unwrap();
            let minus = fc(-dw, 1e-12).unwrap();
            assert_eq!(plus.re, minus.re);
            assert_eq!(plus.im, -minus.im);
        }
        assert!(fc(1.0, 0.0).is_err());
        assert!(fc(1.0, -1e-12).is_err());
        assert!(fc(f64::NAN, 1e-12).is_err());
    }

    #[test]
    fn filter_branches_agree_on_overlap_window() {
        // The quadrature branch is valid past b = 30; the closed form is
        // valid down to b ≈ 16. They must agree across the seam.
        for b in [20.0, 25.0, 28.0, 30.0, 33.0, 40.0] {
            let q = fc_quadrature(b).unwrap();
            let c = fc_closed_form(b);
            assert!(
                (q - c).norm() <= 2e-10 * c.norm().max(1e-3),
                "b = {b}: quadrature {q} vs closed form {c}"
            );
        }
    }

    #[test]
    fn filter_magnitude_bounded_and_decaying() {
        let mut prev_mag = 1.0;
        for exp in 0..10 {
            let b = 10.0_f64.powi(exp - 2);
            let v = fc(b, 1.0).unwrap();
            assert!(v.norm() <= 1.0 + 1e-12, "|fc({b})| = {}", v.norm());
            if exp >= 4 {
                assert!(v.norm() < prev_mag, "not decaying at b = {b}");
            }
            prev_mag = v.norm();
        }
        assert!(fc(1e6, 1.0).unwrap().norm() < 1e-4);
        // Small-b imaginary part grows linearly: Im ≈ b/(2√π) = 0.2820948 b.
        let b = 1e-3;
        let v = fc(b, 1.0).unwrap();
        assert_abs_diff_eq!(v.im, 0.282_094_79 * b, epsilon = 1e-9);
    }

    #[test]
    fn dawson_branches_agree_and_match_reference() {
        // Published value at x = 1 anchors the Maclaurin branch.
        assert_abs_diff_eq!(dawson(1.0), 0.538_079_506_912_768_4, epsilon = 1e-14);
        assert_eq!(dawson(-1.0), -dawson(1.0));
        // High-precision references flanking the branch seams at 3 (series
        // vs quadrature) and 6 (quadrature vs asymptotic).
        for (x, reference) in [
            (2.9, 0.185_555_234_535_499_77),
            (3.1, 0.171_600_355_716_144_69),
            (5.9, 0.086_019_681_992_648_08),
            (6.1, 0.083_116_330_508_351_49),
        ] {
            assert_abs_diff_eq!(dawson(x), reference, epsilon = 1e-13);
        }
        // Asymptotic branch against the defining integral.
        let x = 6.5;
        let (inner, _) = quad::integrate_real(|t| (t * t).exp(), 0.0, x, 1e-14, 1e-13).unwrap();
        assert_abs_diff_eq!(dawson(x), (-x * x).exp() * inner, epsilon = 1e-13);
    }

    #[test]
    fn dawson_running_integral_matches_quadrature() {
        for x in [10.0, 20.0, 5000.0] {
            let (direct, _) = quad::integrate_real(dawson, 0.0, x, 1e-10, 1e-11).unwrap();
            let closed = dawson_integral(x);
            assert_abs_diff_eq!(closed, direct, epsilon = 1e-9 * direct);
        }
    }

    #[test]
    fn thermal_occupation_reference_points() {
        assert_eq!(thermal_n(1e15, 0.0).unwrap(), 0.0);
        // ħω = k_B T ln 2 gives exactly one photon on average.
        let t = 300.0;
        let omega = consts::KB * t * std::f64::consts::LN_2 / consts::HBAR;
        assert_abs_diff_eq!(thermal_n(omega, t).unwrap(), 1.0, epsilon = 1e-12);
        // Optical frequencies at room temperature: utterly negligible.
        let lyman = 2.0 * std::f64::consts::PI * 2.47e15;
        assert!(thermal_n(lyman, 300.0).unwrap() < 1e-100);
        // Classical limit n ≈ kT/ħω for ħω ≪ kT.
        let low = 1e10;
        let expected = consts::KB * t / (consts::HBAR * low);
        assert_abs_diff_eq!(
            thermal_n(low, t).unwrap() / expected,
            1.0,
            epsilon = 1e-3
        );
    }

    #[test]
    fn thermal_occupation_rejects_bad_inputs() {
        assert!(thermal_n(0.0, 300.0).is_err());
        assert!(thermal_n(-1e15, 300.0).is_err());
        assert!(thermal_n(1e15, -1.0).is_err());
        assert!(thermal_n(f64::INFINITY, 300.0).is_err());
    }

    #[test]
    fn damping_diagonal_reproduces_total_decay_rate() {
        let scheme = build_level_scheme(&ModelConfig::default()).unwrap();
        let cfg = CoarseGrainConfig::default();
        let u = scheme.excited_indices()[3];
        let total: f64 = scheme
            .transitions
            .iter()
            .filter(|t| t.upper == u)
            .map(|t| {
                let g = gamma_cg(t, t, &cfg).unwrap();
                assert_eq!(g.im, 0.0, "diagonal damping must be real");
                assert!(g.re > 0.0);
                g.re
            })
            .sum();
        assert_abs_diff_eq!(total, scheme.gamma_tot, epsilon = 1e-10 * scheme.gamma_tot);
    }

    #[test]
    fn damping_vanishes_for_orthogonal_dipoles() {
        let cfg = CoarseGrainConfig::default();
        let a = synthetic([0.0, 1.0, 0.0], 2e15, 2e15);
        let b = synthetic([1.0, 0.0, 0.0], 2e15, 2e15);
        assert_eq!(gamma_cg(&a, &b, &cfg).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn damping_hermitian_under_index_exchange() {
        let cfg = CoarseGrainConfig::default();
        let a = synthetic([0.1, 0.5, -0.2], 1.94e16, 1.94e16);
        let b = synthetic([0.3, 0.4, 0.1], 3.88e15, 3.87e15);
        let ab = gamma_cg(&a, &b, &cfg).unwrap();
        let ba = gamma_cg(&b, &a, &cfg).unwrap();
        assert_eq!(ab.re, ba.re);
        assert_eq!(ab.im, -ba.im);
    }

    #[test]
    fn cross_shell_damping_algebraically_suppressed() {
        // Transition pairs from different principal quantum numbers beat at
        // ~1e16 rad/s; at τ_c = 1e-12 s the filter leaves only ~1e-3-1e-4 of
        // the geometric mean (algebraic, not exponential, suppression: the
        // imaginary part decays as ln b / b).
        let scheme = build_level_scheme(&ModelConfig::default()).unwrap();
        let cfg = CoarseGrainConfig::default();
        let u = scheme.excited_indices()[0];
        let to_1s = scheme
            .transitions
            .iter()
            .find(|t| t.upper == u && scheme.states[t.lower].n == 1 && t.dipole_sq() > 1e-4)
            .unwrap();
        let to_2s = scheme
            .transitions
            .iter()
            .find(|t| t.upper == u && scheme.states[t.lower].n == 2 && t.dipole_sq() > 1e-4)
            .unwrap();
        let cross = gamma_cg(to_1s, to_2s, &cfg).unwrap().norm();
        let diag =
            (gamma_cg(to_1s, to_1s, &cfg).unwrap().re * gamma_cg(to_2s, to_2s, &cfg).unwrap().re)
                .sqrt();
        assert!(cross < 1e-2 * diag, "cross/diag = {:e}", cross / diag);
        assert!(cross > 1e-6 * diag, "suppression should be algebraic, not exponential");
    }

    #[test]
    fn damping_reduces_to_static_form_at_equal_frequencies() {
        let cfg = CoarseGrainConfig::default();
        let a = synthetic([0.2, 0.7, 0.1], 2.44e15, 2.44e15);
        let b = synthetic([0.5, -0.1, 0.3], 2.44e15, 2.44e15);
        let cg = gamma_cg(&a, &b, &cfg).unwrap();
        let flat = gamma_static(&a, &b);
        assert_eq!(cg, flat);
    }

    #[test]
    fn static_rates_are_asymmetric_across_frequency_mismatch() {
        let a = synthetic([0.0, 1.0, 0.0], 1.94e16, 1.94e16);
        let b = synthetic([0.0, 0.8, 0.0], 3.88e15, 3.88e15);
        let ab = gamma_static(&a, &b);
        let ba = gamma_static(&b, &a);
        assert!(
            (ab - ba.conj()).norm() > 0.1 * ab.norm(),
            "static rates should break Hermitian symmetry: {ab} vs {ba}"
        );
        // While for a mismatch well inside the filter bandwidth (Δω τ_c =
        // 0.01 here) the coarse-grained value stays close to the static one.
        let cfg = CoarseGrainConfig::default();
        let c = synthetic([0.0, 1.0, 0.0], 1.940_000e16, 1.940_000e16);
        let d = synthetic([0.0, 0.8, 0.0], 1.940_001e16, 1.940_001e16);
        let cg = gamma_cg(&c, &d, &cfg).unwrap();
        let f = gamma_static(&c, &d);
        assert!((cg - f).norm() < 0.01 * f.norm());
    }

    #[test]
    fn damping_scales_as_frequency_cubed() {
        let cfg = CoarseGrainConfig::default();
        let a = synthetic([0.0, 1.0, 0.0], 1e15, 1e15);
        let b = synthetic([0.0, 1.0, 0.0], 2e15, 2e15);
        let low = gamma_cg(&a, &a, &cfg).unwrap().re;
        let high = gamma_cg(&b, &b, &cfg).unwrap().re;
        assert_abs_diff_eq!(high / low, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn full_damping_matrix_hermitian_and_positive() {
        let scheme = build_level_scheme(&ModelConfig::default()).unwrap();
        let cfg = CoarseGrainConfig::default();
        let gm = build_gamma_matrix(&scheme.transitions, &cfg).unwrap();
        let n = scheme.transitions.len();
        for i in 0..n {
            for j in 0..n {
                let d = (gm.matrix[(i, j)] - gm.matrix[(j, i)].conj()).norm();
                assert!(d == 0.0, "Hermiticity violated at ({i},{j})");
            }
        }
        assert!(gm.max_eigenvalue > 0.0);
        assert!(
            gm.min_eigenvalue >= -1e-8 * gm.max_eigenvalue,
            "min eigenvalue {:e} vs max {:e}",
            gm.min_eigenvalue,
            gm.max_eigenvalue
        );
    }

    #[test]
    fn cross_shift_matches_closed_form_principal_value() {
        // 𝒫∫₀^Λ ω³/(ω−a) dω = Λ³/3 + aΛ²/2 + a²Λ + a³ ln((Λ−a)/a), and
        // ∫₀^Λ ω³/(ω+a) dω = Λ³/3 − aΛ²/2 + a²Λ − a³ ln((Λ+a)/a).
        let lambda = 10.0;
        let cfg = CoarseGrainConfig {
            tau_c: 1e-12,
            temperature: 0.0,
            omega_cut: lambda,
        };
        let pref = consts::RATE_PREFACTOR / (2.0 * std::f64::consts::PI);
        for a in [2.0, 7.0] {
            let t = synthetic([0.0, 1.0, 0.0], 5.0, a);
            let minus = cross_shift(&t, &t, &cfg, ShiftSign::Minus, false).unwrap();
            let expected_minus = lambda.powi(3) / 3.0
                + a * lambda * lambda / 2.0
                + a * a * lambda
                + a.powi(3) * ((lambda - a) / a).ln();
            assert_abs_diff_eq!(
                minus,
                pref * expected_minus,
                epsilon = 1e-9 * (pref * expected_minus).abs()
            );
            let plus = cross_shift(&t, &t, &cfg, ShiftSign::Plus, false).unwrap();
            let expected_plus = lambda.powi(3) / 3.0 - a * lambda * lambda / 2.0
                + a * a * lambda
                - a.powi(3) * ((lambda + a) / a).ln();
            assert_abs_diff_eq!(
                plus,
                pref * expected_plus,
                epsilon = 1e-9 * (pref * expected_plus).abs()
            );
        }
    }

    #[test]
    fn cross_shift_rejects_pole_at_endpoint() {
        let cfg = CoarseGrainConfig {
            tau_c: 1e-12,
            temperature: 0.0,
            omega_cut: 10.0,
        };
        let at_cutoff = synthetic([0.0, 1.0, 0.0], 5.0, 10.0);
        assert!(cross_shift(&at_cutoff, &at_cutoff, &cfg, ShiftSign::Minus, false).is_err());
        let near_zero = synthetic([0.0, 1.0, 0.0], 5.0, 1e-13);
        assert!(cross_shift(&near_zero, &near_zero, &cfg, ShiftSign::Minus, false).is_err());
        // The plus branch has no pole and accepts the same inputs.
        assert!(cross_shift(&at_cutoff, &at_cutoff, &cfg, ShiftSign::Plus, false).is_ok());
    }

    #[test]
    fn cross_shift_orthogonal_dipoles_vanish() {
        let cfg = CoarseGrainConfig::default();
        let a = synthetic([0.0, 1.0, 0.0], 1.94e16, 1.94e16);
        let b = synthetic([1.0, 0.0, 0.0], 1.94e16, 1.94e16);
        assert_eq!(
            cross_shift(&a, &b, &cfg, ShiftSign::Minus, false).unwrap(),
            0.0
        );
    }

    #[test]
    fn cross_shift_pair_estimate_consistent_for_near_degenerate_pairs() {
        // With a cutoff close enough to the pole that the a-dependence is a
        // visible few percent of the integral, the self-shift estimate must
        // agree to first order in the frequency mismatch (~1e-3 here).
        let cfg = CoarseGrainConfig {
            tau_c: 1e-12,
            temperature: 0.0,
            omega_cut: 1e17,
        };
        let a = synthetic([0.0, 1.0, 0.0], 1.0e16, 1.0e16);
        let b = synthetic([0.0, 0.9, 0.1], 1.001e16, 1.001e16);
        let exact = cross_shift(&a, &b, &cfg, ShiftSign::Minus, false).unwrap();
        let estimate = cross_shift_estimate(&a, &b, &cfg, ShiftSign::Minus, false).unwrap();
        assert_abs_diff_eq!(estimate / exact, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn thermal_cross_shift_suppressed_at_room_temperature() {
        let cfg = CoarseGrainConfig::default();
        let t = synthetic([0.0, 1.0, 0.0], 1.2e16, 1.2e16);
        let vacuum = cross_shift(&t, &t, &cfg, ShiftSign::Minus, false).unwrap();
        let thermal = cross_shift(&t, &t, &cfg, ShiftSign::Minus, true).unwrap();
        assert!(thermal.abs() > 1e-6, "thermal shift should be computed, got {thermal:e}");
        assert!(
            thermal.abs() < 1e-10 * vacuum.abs(),
            "thermal/vacuum = {:e}",
            thermal.abs() / vacuum.abs()
        );
        // Its magnitude is set by the Planck integral over the pole:
        // ≈ (π⁴/15)(kT/ħ)⁴/ω̄ in the far-detuned limit, with a minus sign.
        let kt = consts::KB * 300.0 / consts::HBAR;
        let planck = -6.493_939 * kt.powi(4) / 1.2e16;
        let pref = consts::RATE_PREFACTOR / (2.0 * std::f64::consts::PI);
        assert_abs_diff_eq!(thermal / (pref * planck), 1.0, epsilon = 0.05);
    }

    #[test]
    fn excited_shift_matrix_structure_for_hydrogen() {
        let scheme = build_level_scheme(&ModelConfig::default()).unwrap();
        let cfg = CoarseGrainConfig::default();
        let (excited, delta) = excited_cross_shift_matrix(&scheme, &cfg).unwrap();
        assert_eq!(excited.len(), 12);
        let d0 = delta[(0, 0)];
        assert!(d0 > 0.0);
        for k1 in 0..12 {
            for k2 in 0..12 {
                if k1 == k2 {
                    // Isotropy makes the manifold shift uniform.
                    assert_abs_diff_eq!(delta[(k1, k1)], d0, epsilon = 1e-9 * d0.abs());
                } else {
                    // Complete lower multiplets cancel every cross term.
                    assert_eq!(delta[(k1, k2)], 0.0);
                }
            }
        }
    }

    #[test]
    fn excited_shift_matrix_couples_shared_lower_states() {
        // A hand-built Λ-ish pair: two upper states decaying to one common
        // lower state with parallel dipoles must acquire a nonzero coupling.
        use crate::angular::HalfInt;
        use crate::hydrogen::{AtomicState, StateRole};
        let half = HalfInt::from_doubled(1);
        let mk = |energy: f64, role: StateRole, label: &str| AtomicState {
            n: 1,
            l: 0,
            j: half,
            f: half,
            mf: half,
            energy,
            role,
            label: label.into(),
        };
        let omega = 1.0e16;
        let split = 1.0e9;
        let scheme = LevelScheme {
            states: vec![
                mk(0.0, StateRole::Driven, "g"),
                mk(omega, StateRole::Excited, "e1"),
                mk(omega + split, StateRole::Excited, "e2"),
                mk(-1.0e14, StateRole::Sink, "s"),
            ],
            transitions: vec![
                Transition {
                    lower: 3,
                    upper: 1,
                    dipole: [0.0, 1.0, 0.0],
                    omega: omega + 1.0e14,
                    omega_rate: omega + 1.0e14,
                },
                Transition {
                    lower: 3,
                    upper: 2,
                    dipole: [0.0, 0.5, 0.0],
                    omega: omega + split + 1.0e14,
                    omega_rate: omega + split + 1.0e14,
                },
            ],
            drive_lines: vec![],
            driven: 0,
            gamma_tot: 1e8,
            omega_ref: omega,
        };
        let cfg = CoarseGrainConfig {
            tau_c: 1e-12,
            temperature: 0.0,
            omega_cut: 1e17,
        };
        let (_, delta) = excited_cross_shift_matrix(&scheme, &cfg).unwrap();
        assert!(delta[(0, 1)] != 0.0);
        assert_eq!(delta[(0, 1)], delta[(1, 0)]);
        // And it matches the direct pair shift (vacuum part; T = 0 kills the
        // thermal pieces).
        let direct = cross_shift(
            &scheme.transitions[0],
            &scheme.transitions[1],
            &cfg,
            ShiftSign::Minus,
            false,
        )
        .unwrap();
        assert_abs_diff_eq!(delta[(0, 1)], direct, epsilon = 1e-9 * direct.abs());
    }

    #[test]
    fn mean_field_vanishes_for_thermal_reservoir() {
        let scheme = build_level_scheme(&ModelConfig::default()).unwrap();
        for t in [0.0, 300.0, 1e4] {
            let v = mean_field_term(&scheme, t);
            assert_eq!(v.nrows(), scheme.states.len());
            assert!(v.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn config_validation_and_warnings() {
        assert!(CoarseGrainConfig::default().validate().is_ok());
        assert!(CoarseGrainConfig {
            tau_c: -1e-12,
            ..CoarseGrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(CoarseGrainConfig {
            temperature: -1.0,
            ..CoarseGrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(CoarseGrainConfig {
            omega_cut: 0.0,
            ..CoarseGrainConfig::default()
        }
        .validate()
        .is_err());

        let lifetime = 1.23e-8;
        assert!(CoarseGrainConfig::default().warnings(lifetime).is_empty());
        let short = CoarseGrainConfig {
            tau_c: 1e-14,
            ..CoarseGrainConfig::default()
        };
        assert_eq!(short.warnings(lifetime).len(), 1);
        let long = CoarseGrainConfig {
            tau_c: 2e-9,
            ..CoarseGrainConfig::default()
        };
        assert_eq!(long.warnings(lifetime).len(), 1);
    }

    #[test]
    fn fc_cache_returns_identical_values() {
        let mut cache = FcCache::new(1e-12).unwrap();
        let direct = fc(3.7e11, 1e-12).unwrap();
        assert_eq!(cache.get(3.7e11).unwrap(), direct);
        assert_eq!(cache.get(3.7e11).unwrap(), direct);
        assert_eq!(cache.get(-3.7e11).unwrap(), direct.conj());
        assert!(FcCache::new(0.0).is_err());
    }
}
