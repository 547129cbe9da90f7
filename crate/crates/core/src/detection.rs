//! Angle-resolved detection: geometry matrices and photon count rates.
//!
//! A detector covering the solid-angle region Ω weighs each pair of decay
//! dipoles by the detection matrix
//!
//! ```text
//! D_Ω = (3/8π) ∫_Ω dΩ_k (e_θ e_θᵀ + e_φ e_φᵀ) = (3/8π) ∫_Ω dΩ_k (𝟙 − k̂k̂ᵀ),
//! ```
//!
//! both transverse photon polarizations entering with equal weight (no
//! polarization filter is modeled). D_Ω is real symmetric with eigenvalues in
//! [0, 3/2], trace (3/4π)|Ω|, and D_{4π} = 𝟙. For any polar band between the
//! cosines u_hi > u_lo (full azimuth) the integral is elementary:
//!
//! ```text
//! D_xx = D_yy = (3/8)[Δu + Δu³/3],   D_zz = (3/4)[Δu − Δu³/3],
//! Δu = u_hi − u_lo,   Δu³ = u_hi³ − u_lo³,
//! ```
//!
//! and every supported region is a union of such bands about its own symmetry
//! axis. A thin stripe at polar angle θ has anisotropy density
//! D_zz − D_xx ∝ 1 − 3cos²θ, which vanishes at the magic angle
//! θ* = arctan √2: there the detection matrix is proportional to 𝟙 and the
//! detector sees the same interference pattern as the full sphere.
//!
//! The angle-resolved analogue of the damping coefficient,
//!
//! ```text
//! γ_ij^Ω = RATE_PREFACTOR (d_i† D_Ω d_j) ℱ_c(ω_i−ω_j) ω̄_ij³,
//! ```
//!
//! uses the Cartesian complex dipole vectors, and the photon count rate of a
//! state ρ is S^Ω = Σ_ij γ_ij^Ω Tr{σ_j ρ σ_i†} = Σ γ_ij^Ω ρ_{u_j u_i},
//! restricted to transition pairs sharing a lower state.
//!
//! All functions are pure; detection matrices are cheap closed forms meant to
//! be computed once per region and held immutably by the caller.

use crate::coefficients::{fc, CoarseGrainConfig, FcCache};
use crate::consts;
use crate::hydrogen::{LevelScheme, Transition};
use crate::linalg::CMat;
use crate::{Error, Result};
use nalgebra::Matrix3;
use num_complex::Complex64;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

/// Solid-angle region covered by the detector. Angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DetectionRegion {
    /// The full sphere.
    Full4Pi,
    /// Cone about the +y axis (the paper's detector placement), parameterized
    /// by its solid angle ∈ (0, 4π].
    ConeAboutY { solid_angle: f64 },
    /// Two opposite cones about the z axis, each of the given half-angle
    /// ∈ (0, π/2].
    DoubleConeZ { half_angle: f64 },
    /// The complement of the double cone: the equatorial belt
    /// θ ∈ (half_angle, π − half_angle), half-angle ∈ [0, π/2).
    InvertedDoubleConeZ { half_angle: f64 },
    /// Band of polar angles of the given full width centered on θ = `theta`,
    /// clipped to [0, π]; covers all azimuths.
    StripeTheta { theta: f64, width: f64 },
}

impl DetectionRegion {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            DetectionRegion::Full4Pi => Ok(()),
            DetectionRegion::ConeAboutY { solid_angle } => {
                if !(solid_angle.is_finite() && solid_angle > 0.0 && solid_angle <= 4.0 * PI) {
                    return bad(format!("cone solid angle {solid_angle} outside (0, 4*pi]"));
                }
                Ok(())
            }
            DetectionRegion::DoubleConeZ { half_angle } => {
                if !(half_angle.is_finite() && half_angle > 0.0 && half_angle <= PI / 2.0) {
                    return bad(format!("double-cone half-angle {half_angle} outside (0, pi/2]"));
                }
                Ok(())
            }
            DetectionRegion::InvertedDoubleConeZ { half_angle } => {
                if !(half_angle.is_finite() && half_angle >= 0.0 && half_angle < PI / 2.0) {
                    return bad(format!(
                        "inverted double-cone half-angle {half_angle} outside [0, pi/2)"
                    ));
                }
                Ok(())
            }
            DetectionRegion::StripeTheta { theta, width } => {
                if !(theta.is_finite() && (0.0..=PI).contains(&theta)) {
                    return bad(format!("stripe center {theta} outside [0, pi]"));
                }
                if !(width.is_finite() && width > 0.0) {
                    return bad(format!("stripe width {width} must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Solid angle |Ω| of the region [sr].
    pub fn solid_angle(&self) -> f64 {
        match *self {
            DetectionRegion::Full4Pi => 4.0 * PI,
            DetectionRegion::ConeAboutY { solid_angle } => solid_angle,
            DetectionRegion::DoubleConeZ { half_angle } => 4.0 * PI * (1.0 - half_angle.cos()),
            DetectionRegion::InvertedDoubleConeZ { half_angle } => 4.0 * PI * half_angle.cos(),
            DetectionRegion::StripeTheta { theta, width } => {
                let lo = (theta - 0.5 * width).max(0.0);
                let hi = (theta + 0.5 * width).min(PI);
                2.0 * PI * (lo.cos() - hi.cos())
            }
        }
    }
}

/// Real symmetric detection matrix D_Ω in the Cartesian lab basis, together
/// with the solid angle it integrates over.
#[derive(Clone, Copy, Debug)]
pub struct DetectionMatrix {
    pub matrix: Matrix3<f64>,
    pub solid_angle: f64,
}

/// Polar angles at which a thin detection stripe becomes isotropic
/// (D ∝ 𝟙): arctan √2 and its mirror image. Cross-damping then contributes
/// to the signal exactly as it does over the full sphere — not at all, for
/// hydrogen — so the line pulling changes sign across these angles.
pub fn magic_polar_angles() -> [f64; 2] {
    let m = std::f64::consts::SQRT_2.atan();
    [m, PI - m]
}

/// (D_xx, D_zz) contributions of the polar band u ∈ [u_lo, u_hi] (full
/// azimuth) about the band's own symmetry axis; D_yy = D_xx.
fn band_components(u_hi: f64, u_lo: f64) -> (f64, f64) {
    let d1 = u_hi - u_lo;
    let d3 = u_hi * u_hi * u_hi - u_lo * u_lo * u_lo;
    let transverse = 3.0 / 8.0 * (d1 + d3 / 3.0);
    let axial = 3.0 / 4.0 * (d1 - d3 / 3.0);
    (transverse, axial)
}

/// Closed-form detection matrix for the region. Errors on invalid regions;
/// the geometric invariants (trace = (3/4π)|Ω|, eigenvalues ∈ [0, 3/2]) are
/// asserted because their failure would be an implementation bug.
pub fn detection_matrix(region: &DetectionRegion) -> Result<DetectionMatrix> {
    region.validate()?;
    let matrix = match *region {
        DetectionRegion::Full4Pi => Matrix3::identity(),
        DetectionRegion::ConeAboutY { solid_angle } => {
            let c = 1.0 - solid_angle / (2.0 * PI);
            let (t, a) = band_components(1.0, c);
            // The cone axis is y; x and z are its transverse directions.
            Matrix3::from_diagonal(&nalgebra::Vector3::new(t, a, t))
        }
        DetectionRegion::DoubleConeZ { half_angle } => {
            let c = half_angle.cos();
            let (t_up, a_up) = band_components(1.0, c);
            let (t_dn, a_dn) = band_components(-c, -1.0);
            Matrix3::from_diagonal(&nalgebra::Vector3::new(
                t_up + t_dn,
                t_up + t_dn,
                a_up + a_dn,
            ))
        }
        DetectionRegion::InvertedDoubleConeZ { half_angle } => {
            let c = half_angle.cos();
            let (t, a) = band_components(c, -c);
            Matrix3::from_diagonal(&nalgebra::Vector3::new(t, t, a))
        }
        DetectionRegion::StripeTheta { theta, width } => {
            let lo = (theta - 0.5 * width).max(0.0);
            let hi = (theta + 0.5 * width).min(PI);
            let (t, a) = band_components(lo.cos(), hi.cos());
            Matrix3::from_diagonal(&nalgebra::Vector3::new(t, t, a))
        }
    };
    let solid_angle = region.solid_angle();
    let trace = matrix.trace();
    assert!(
        (trace - 3.0 / (4.0 * PI) * solid_angle).abs() <= 1e-10 * trace.max(1.0),
        "detection-matrix trace {trace} inconsistent with solid angle {solid_angle}"
    );
    let eigen = nalgebra::SymmetricEigen::new(matrix);
    for &lambda in eigen.eigenvalues.iter() {
        assert!(
            (-1e-12..=1.5 + 1e-12).contains(&lambda),
            "detection-matrix eigenvalue {lambda} outside [0, 3/2]"
        );
    }
    Ok(DetectionMatrix {
        matrix,
        solid_angle,
    })
}

/// Hermitian quadratic form d_i† D d_j of two complex Cartesian dipoles with
/// a real symmetric matrix between them.
fn quadratic_form(di: &[Complex64; 3], d: &Matrix3<f64>, dj: &[Complex64; 3]) -> Complex64 {
    let mut q = Complex64::new(0.0, 0.0);
    for a in 0..3 {
        for b in 0..3 {
            q += di[a].conj() * d[(a, b)] * dj[b];
        }
    }
    q
}

/// Angle-restricted damping coefficient
/// γ_ij^Ω = RATE_PREFACTOR (d_i† D_Ω d_j) ℱ_c(ω_i−ω_j) ω̄_ij³ [1/s].
pub fn gamma_omega(
    t_i: &Transition,
    t_j: &Transition,
    region: &DetectionRegion,
    cfg: &CoarseGrainConfig,
) -> Result<Complex64> {
    let dmat = detection_matrix(region)?;
    let filter = fc(t_i.omega - t_j.omega, cfg.tau_c)?;
    Ok(pair_rate(t_i, t_j, &dmat, filter))
}

fn pair_rate(
    t_i: &Transition,
    t_j: &Transition,
    dmat: &DetectionMatrix,
    filter: Complex64,
) -> Complex64 {
    let q = quadratic_form(
        &t_i.dipole_cartesian(),
        &dmat.matrix,
        &t_j.dipole_cartesian(),
    );
    let wbar = 0.5 * (t_i.omega_rate + t_j.omega_rate);
    q * filter * (consts::RATE_PREFACTOR * (wbar * wbar * wbar))
}

/// Emission matrix G_ee′ = Σ_g γ_{ge,ge′}^Ω over the excited manifold for an
/// explicit detection matrix: the sum over transition pairs sharing a lower
/// state, grouped by their upper states. Returns the excited-state indices
/// and the Hermitian matrix indexed by position in that list.
///
/// The photon count rate is its contraction with the excited block of ρ:
/// S^Ω = Σ_{ee′} G_{ee′} ρ_{e′e}. Over the full sphere G is diagonal for the
/// hydrogen scheme — every off-diagonal element is a ground-sum that cancels
/// by angular-momentum completeness, which is why cross-damping leaves the
/// 4π signal untouched.
pub fn emission_matrix_with(
    scheme: &LevelScheme,
    dmat: &DetectionMatrix,
    cfg: &CoarseGrainConfig,
) -> Result<(Vec<usize>, CMat)> {
    cfg.validate()?;
    let excited = scheme.excited_indices();
    let ne = excited.len();
    let pos: HashMap<usize, usize> = excited.iter().enumerate().map(|(k, &e)| (e, k)).collect();
    let mut cache = FcCache::new(cfg.tau_c)?;
    // BTreeMap: the group iteration order feeds float accumulation, so it
    // must not depend on the per-process hash seed.
    let mut by_lower: BTreeMap<usize, Vec<&Transition>> = BTreeMap::new();
    for t in &scheme.transitions {
        by_lower.entry(t.lower).or_default().push(t);
    }
    let mut g = CMat::zeros(ne, ne);
    for list in by_lower.values() {
        for t1 in list {
            for t2 in list.iter() {
                let k1 = pos[&t1.upper];
                let k2 = pos[&t2.upper];
                // Fill the upper triangle only (diagonal keeps both
                // orderings of distinct transitions) and mirror at the end,
                // so G is Hermitian to the bit.
                if k1 > k2 {
                    continue;
                }
                let filter = cache.get(t1.omega - t2.omega)?;
                g[(k1, k2)] += pair_rate(t1, t2, dmat, filter);
            }
        }
    }
    for k1 in 0..ne {
        for k2 in (k1 + 1)..ne {
            g[(k2, k1)] = g[(k1, k2)].conj();
        }
    }
    Ok((excited, g))
}

/// Emission matrix for a named detection region; see [`emission_matrix_with`].
pub fn excited_emission_matrix(
    scheme: &LevelScheme,
    region: &DetectionRegion,
    cfg: &CoarseGrainConfig,
) -> Result<(Vec<usize>, CMat)> {
    let dmat = detection_matrix(region)?;
    emission_matrix_with(scheme, &dmat, cfg)
}

/// Contraction S = Σ_{ee′} G_{ee′} ρ_{e′e} of an emission matrix with the
/// excited block of a density matrix.
pub fn emission_expectation(excited: &[usize], g: &CMat, rho: &CMat) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for (k1, &e1) in excited.iter().enumerate() {
        for (k2, &e2) in excited.iter().enumerate() {
            s += g[(k1, k2)] * rho[(e2, e1)];
        }
    }
    s
}

/// Photon count rate S^Ω = Σ_ij γ_ij^Ω ρ_{u_j u_i} [photons/s] for an
/// explicit detection matrix. Errors if the contraction has an imaginary
/// part or a negative value beyond roundoff — either signals a non-Hermitian
/// or non-positive ρ upstream.
pub fn photon_count_rate_with_matrix(
    rho: &CMat,
    dmat: &DetectionMatrix,
    scheme: &LevelScheme,
    cfg: &CoarseGrainConfig,
) -> Result<f64> {
    let n = scheme.states.len();
    if rho.nrows() != n || rho.ncols() != n {
        return Err(Error::Config(format!(
            "density matrix is {}x{} but the scheme has {n} states",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let (excited, g) = emission_matrix_with(scheme, dmat, cfg)?;
    let s = emission_expectation(&excited, &g, rho);
    let scale: f64 = excited
        .iter()
        .enumerate()
        .map(|(k, &e)| g[(k, k)].norm() * rho[(e, e)].norm())
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    if s.im.abs() > tol {
        return Err(Error::Consistency(format!(
            "count rate has imaginary part {:e} (scale {scale:e}); density matrix is not Hermitian",
            s.im
        )));
    }
    if s.re < -tol {
        return Err(Error::Consistency(format!(
            "count rate {:e} is negative beyond tolerance (scale {scale:e}); \
             density matrix is not positive semidefinite",
            s.re
        )));
    }
    Ok(s.re.max(0.0))
}

/// Photon count rate for a named detection region; see
/// [`photon_count_rate_with_matrix`].
pub fn photon_count_rate(
    rho: &CMat,
    region: &DetectionRegion,
    scheme: &LevelScheme,
    cfg: &CoarseGrainConfig,
) -> Result<f64> {
    let dmat = detection_matrix(region)?;
    photon_count_rate_with_matrix(rho, &dmat, scheme, cfg)
}
