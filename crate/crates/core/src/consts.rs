//! Physical constants (CODATA 2018) and the derived prefactors used by the
//! rate kernels.
//!
//! All frequencies in this crate are angular frequencies in rad/s unless a
//! name says otherwise (`*_HZ`). Dipole matrix elements are stored in units
//! of e·a₀, so the spontaneous-emission kernel
//!
//! ```text
//! γ = (4/3) (d*·d / ħc³) ω³        (Gaussian units)
//! ```
//!
//! becomes γ = RATE_PREFACTOR · |d/(e a₀)|² · ω³ with
//! RATE_PREFACTOR = (4/3) α a₀²/c², using e²/(4πε₀) = αħc to absorb the
//! charge into the fine-structure constant.

/// Speed of light in vacuum [m/s] (exact).
pub const C: f64 = 299_792_458.0;

/// Reduced Planck constant [J·s] (exact).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant [J/K] (exact).
pub const KB: f64 = 1.380_649e-23;

/// Fine-structure constant (dimensionless).
pub const ALPHA: f64 = 7.297_352_569_3e-3;

/// Bohr radius [m].
pub const A0: f64 = 5.291_772_109_03e-11;

/// Electron mass [kg].
pub const ME: f64 = 9.109_383_701_5e-31;

/// Rydberg frequency c·R_∞ [Hz] (infinite nuclear mass).
pub const RINF_C_HZ: f64 = 3.289_841_960_250_8e15;

/// Electron-to-proton mass ratio m_e/m_p.
pub const ME_OVER_MP: f64 = 1.0 / 1836.152_673_43;

/// Proton g-factor g_p.
pub const GP: f64 = 5.585_694_689_3;

/// Hydrogen Rydberg frequency c·R_H = c·R_∞/(1 + m_e/m_p) [Hz]
/// (reduced-mass corrected; sets the gross and fine-structure ladder).
pub const RH_C_HZ: f64 = RINF_C_HZ / (1.0 + ME_OVER_MP);

/// Spontaneous-emission prefactor (4/3) α a₀²/c² [s² · (e a₀)⁻²]:
/// γ = RATE_PREFACTOR · |d|² · ω³ for |d| in e·a₀ and ω in rad/s.
pub const RATE_PREFACTOR: f64 = 4.0 / 3.0 * ALPHA * A0 * A0 / (C * C);

/// Relativistic frequency cutoff m_e c²/ħ [rad/s] for the level-shift
/// integrals; the lowest-order shift forms are evaluated with this cutoff.
pub const OMEGA_CUT: f64 = ME * C * C / HBAR;

/// Fermi-contact hyperfine constant of the hydrogen 1S ground state [Hz],
/// A_1S = (8/3) g_p (m_e/m_p) α² R_∞ c. Overridable through `ModelConfig`.
pub const A1S_HZ: f64 = 8.0 / 3.0 * GP * ME_OVER_MP * ALPHA * ALPHA * RINF_C_HZ;
