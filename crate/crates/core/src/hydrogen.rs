//! Hydrogen level data and the 2S–4P hyperfine level scheme.
//!
//! Energies combine three rungs of the usual ladder, all in Hz before the
//! final 2π:
//!
//! * gross structure  E_n = −R_H c / n²,
//! * Dirac fine structure ΔE_fs = −(α² R_H c / n³)(1/(j+½) − 3/(4n)),
//! * Fermi-contact hyperfine A(n,l,j) = (3/4) A_1S / (n³ j(j+1)(2l+1)),
//!   with E_hf = (A/2)[F(F+1) − j(j+1) − I(I+1)] and nuclear spin I = 1/2.
//!
//! Radial matrix elements ⟨n'l'|r|nl⟩ are evaluated in closed form from the
//! associated-Laguerre expansion of the bound states (exact term-by-term
//! integrals m!/β^(m+1)), and angular factors from explicit
//! Clebsch–Gordan chains F → (J, I) → (L, S), so every dipole component is
//! real by construction.
//!
//! The driven 2S(F=0) state is modeled as metastable: all decay out of the
//! 4P levels terminates in stationary sink states (1S, 2S, 3S, 3D), and the
//! branch that physically returns to the driven sublevel lands on a sink
//! copy of it instead of re-feeding the drive cycle. Sink manifolds keep
//! their fine structure but not their hyperfine splittings — they only need
//! energies accurate enough to place emission lines, never to interfere.
//! Rate kernels (the ω³ factors and thermal occupations) use the gross Bohr
//! frequency of each decay channel, while interference filters and all
//! spectroscopy see the full fine+hyperfine ladder; this keeps the total
//! decay rate exactly uniform across the 12 upper sublevels, as it must be
//! for an isotropic-vacuum coupling.

use crate::angular::{clebsch_gordan, wigner3j, HalfInt};
use crate::consts;
use crate::{Error, Result};
use num_complex::Complex64;

/// Nuclear spin of hydrogen (the proton), I = 1/2.
pub const NUCLEAR_SPIN: HalfInt = HalfInt::from_doubled(1);

/// Dynamical role of a state in the master equation.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StateRole {
    /// The laser-driven lower state.
    Driven,
    /// Radiating upper states.
    Excited,
    /// Stationary collectors: populated by decay, never repumped.
    Sink,
}

/// One atomic basis state |n l j F M_F⟩.
#[derive(Clone, Debug)]
pub struct AtomicState {
    pub n: u32,
    pub l: u32,
    pub j: HalfInt,
    pub f: HalfInt,
    pub mf: HalfInt,
    /// Angular frequency relative to the driven state [rad/s].
    pub energy: f64,
    pub role: StateRole,
    pub label: String,
}

/// A dipole line between two states.
///
/// `dipole` holds the spherical tensor components ⟨lower|d_q|upper⟩ for
/// q = −1, 0, +1 in units of e·a₀; they are real by construction (real
/// radial integrals times real angular chains).
#[derive(Clone, Debug)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    pub dipole: [f64; 3],
    /// Full-ladder transition frequency E_upper − E_lower [rad/s].
    pub omega: f64,
    /// Gross Bohr frequency of the channel [rad/s], used by ω³ rate kernels
    /// and thermal occupation factors.
    pub omega_rate: f64,
}

impl Transition {
    /// Hermitian dot product d_i*·d_j; for real spherical components this is
    /// the plain component sum Σ_q d_q d'_q.
    pub fn dot(&self, other: &Transition) -> f64 {
        self.dipole
            .iter()
            .zip(other.dipole.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Squared magnitude |d|².
    pub fn dipole_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Cartesian components (d_x, d_y, d_z) of ⟨lower|**d**|upper⟩, from
    /// d_x = (d_{−1} − d_{+1})/√2, d_y = i(d_{−1} + d_{+1})/√2, d_z = d_0.
    pub fn dipole_cartesian(&self) -> [Complex64; 3] {
        let [dm, d0, dp] = self.dipole;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        [
            Complex64::new((dm - dp) * s, 0.0),
            Complex64::new(0.0, (dm + dp) * s),
            Complex64::new(d0, 0.0),
        ]
    }
}

/// A complete level scheme: basis states, decay transitions, and the laser
/// lines out of the driven state.
#[derive(Clone, Debug)]
pub struct LevelScheme {
    pub states: Vec<AtomicState>,
    /// Spontaneous decay channels; this list is the index space of every
    /// rate matrix in the crate.
    pub transitions: Vec<Transition>,
    /// Laser-coupled lines from the driven state (excluded from decay).
    pub drive_lines: Vec<Transition>,
    /// Index of the driven state.
    pub driven: usize,
    /// Total decay rate of each upper sublevel [1/s].
    pub gamma_tot: f64,
    /// Laser frequency reference: the full-ladder frequency of the
    /// reference line (hydrogen: 2S F=0 → 4P_1/2 F=1 M_F=0) [rad/s].
    pub omega_ref: f64,
}

impl LevelScheme {
    /// Structural sanity used by hand-built schemes as well as the builder.
    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Config("level scheme has no states".into()));
        }
        if self.driven >= self.states.len()
            || self.states[self.driven].role != StateRole::Driven
        {
            return Err(Error::Config("driven-state index is not a Driven state".into()));
        }
        if !(self.gamma_tot.is_finite() && self.gamma_tot > 0.0) {
            return Err(Error::Config(format!(
                "total decay rate {} must be finite and positive",
                self.gamma_tot
            )));
        }
        for (k, t) in self.transitions.iter().chain(self.drive_lines.iter()).enumerate() {
            if t.lower >= self.states.len() || t.upper >= self.states.len() {
                return Err(Error::Config(format!("transition {k} references missing state")));
            }
            if t.lower == t.upper {
                return Err(Error::Config(format!("transition {k} is diagonal")));
            }
            if !t.dipole.iter().all(|d| d.is_finite()) || !t.omega.is_finite() {
                return Err(Error::Config(format!("transition {k} has non-finite data")));
            }
            if t.omega <= 0.0 || t.omega_rate <= 0.0 {
                return Err(Error::Config(format!(
                    "transition {k} has non-positive frequency"
                )));
            }
        }
        for t in &self.transitions {
            if self.states[t.upper].role != StateRole::Excited {
                return Err(Error::Config("decay transition from a non-excited state".into()));
            }
        }
        Ok(())
    }

    pub fn excited_indices(&self) -> Vec<usize> {
        (0..self.states.len())
            .filter(|&i| self.states[i].role == StateRole::Excited)
            .collect()
    }

    /// Looks a state up by quantum numbers and role.
    pub fn state_index(
        &self,
        role: StateRole,
        n: u32,
        l: u32,
        j: HalfInt,
        f: HalfInt,
        mf: HalfInt,
    ) -> Option<usize> {
        self.states.iter().position(|s| {
            s.role == role && s.n == n && s.l == l && s.j == j && s.f == f && s.mf == mf
        })
    }

    /// Ground-sum dipole overlap between two upper states through one lower
    /// shell (n_g, l_g):
    ///
    /// ```text
    /// 𝔇_{ee'}(shell) = Σ_{g ∈ shell} d_{ge}* · d_{ge'}
    /// ```
    ///
    /// For e ≠ e' summed over a complete lower shell this vanishes
    /// identically — the selection-rule backbone of cross-damping
    /// cancellation in full-solid-angle observables.
    pub fn dfrak(&self, e: usize, e2: usize, n_g: u32, l_g: u32) -> f64 {
        let mut sum = 0.0;
        for t1 in self.transitions.iter().filter(|t| t.upper == e) {
            let g = &self.states[t1.lower];
            if g.n != n_g || g.l != l_g {
                continue;
            }
            for t2 in self
                .transitions
                .iter()
                .filter(|t| t.upper == e2 && t.lower == t1.lower)
            {
                sum += t1.dot(t2);
            }
        }
        sum
    }

    /// The distinct lower shells (n, l) reachable by decay.
    pub fn lower_shells(&self) -> Vec<(u32, u32)> {
        let mut shells: Vec<(u32, u32)> = Vec::new();
        for t in &self.transitions {
            let s = &self.states[t.lower];
            if !shells.contains(&(s.n, s.l)) {
                shells.push((s.n, s.l));
            }
        }
        shells.sort_unstable();
        shells
    }
}

/// Gross (Bohr) level energy −R_H c/n² [Hz].
pub fn gross_energy_hz(n: u32) -> f64 {
    -consts::RH_C_HZ / (n * n) as f64
}

/// Dirac fine-structure correction [Hz] to order α²:
/// ΔE = −(α² R_H c / n³) (1/(j+½) − 3/(4n)).
pub fn fine_structure_hz(n: u32, j: HalfInt) -> f64 {
    let n3 = (n * n * n) as f64;
    let inv_jhalf = 1.0 / (j.as_f64() + 0.5);
    -consts::ALPHA * consts::ALPHA * consts::RH_C_HZ / n3 * (inv_jhalf - 0.75 / n as f64)
}

/// Magnetic-dipole hyperfine constant A(n, l, j) [Hz], scaled from the 1S
/// contact constant: A = (3/4) A_1S / (n³ j(j+1) (2l+1)).
pub fn hyperfine_constant_hz(a1s_hz: f64, n: u32, l: u32, j: HalfInt) -> f64 {
    let jj = j.as_f64() * (j.as_f64() + 1.0);
    0.75 * a1s_hz / ((n * n * n) as f64 * jj * (2 * l + 1) as f64)
}

/// Hyperfine energy shift [Hz] of |j, F⟩: (A/2)[F(F+1) − j(j+1) − I(I+1)].
pub fn hyperfine_shift_hz(a_hz: f64, j: HalfInt, f: HalfInt) -> f64 {
    let fv = f.as_f64();
    let jv = j.as_f64();
    let iv = NUCLEAR_SPIN.as_f64();
    0.5 * a_hz * (fv * (fv + 1.0) - jv * (jv + 1.0) - iv * (iv + 1.0))
}

fn small_factorial(n: u32) -> f64 {
    (1..=n as u64).map(|k| k as f64).product()
}

/// Radial matrix element ⟨n₁ l₁ | r | n₂ l₂⟩ in units of a₀, evaluated in
/// closed form from the Laguerre expansion of the hydrogen bound states.
/// Errors on the electric-dipole selection rule |l₁ − l₂| ≠ 1 and on
/// invalid quantum numbers (l ≥ n).
pub fn radial_integral(n1: u32, l1: u32, n2: u32, l2: u32) -> Result<f64> {
    for (n, l) in [(n1, l1), (n2, l2)] {
        if n == 0 || l >= n {
            return Err(Error::Config(format!(
                "invalid hydrogen quantum numbers n={n}, l={l}"
            )));
        }
    }
    if (l1 as i32 - l2 as i32).abs() != 1 {
        return Err(Error::Config(format!(
            "radial integral requires |Δl| = 1, got l1={l1}, l2={l2}"
        )));
    }

    // R_nl(r) = N (2r/n)^l L^{2l+1}_{n-l-1}(2r/n) e^{-r/n},
    // N = sqrt((2/n)³ (n-l-1)! / (2n (n+l)!)).
    let norm = |n: u32, l: u32| -> f64 {
        let nf = n as f64;
        ((2.0 / nf).powi(3) * small_factorial(n - l - 1)
            / (2.0 * nf * small_factorial(n + l)))
        .sqrt()
    };
    // Coefficient of x^i in L^α_k(x): (-1)^i C(k+α, k-i)/i!.
    let laguerre_coeff = |k: u32, alpha: u32, i: u32| -> f64 {
        let binom = small_factorial(k + alpha)
            / (small_factorial(k - i) * small_factorial(alpha + i));
        let c = binom / small_factorial(i);
        if i % 2 == 0 {
            c
        } else {
            -c
        }
    };

    let (k1, a1) = (n1 - l1 - 1, 2 * l1 + 1);
    let (k2, a2) = (n2 - l2 - 1, 2 * l2 + 1);
    let beta = 1.0 / n1 as f64 + 1.0 / n2 as f64;
    let s1 = 2.0 / n1 as f64;
    let s2 = 2.0 / n2 as f64;

    let mut sum = 0.0;
    for i in 0..=k1 {
        for j in 0..=k2 {
            let m = (l1 + l2 + 3 + i + j) as i32;
            // ∫ r^m e^{-βr} dr = m!/β^(m+1)
            let integral = small_factorial(m as u32) / beta.powi(m + 1);
            sum += laguerre_coeff(k1, a1, i)
                * laguerre_coeff(k2, a2, j)
                * s1.powi(i as i32)
                * s2.powi(j as i32)
                * integral;
        }
    }
    Ok(norm(n1, l1) * norm(n2, l2) * s1.powi(l1 as i32) * s2.powi(l2 as i32) * sum)
}

/// Reduced angular chain ⟨l' m'|C¹_q|l m⟩ for the unit spherical tensor:
/// (−1)^(l'−m') √((2l'+1)(2l+1)) (l' 1 l; −m' q m)(l' 1 l; 0 0 0).
fn orbital_tensor_element(
    lp: u32,
    mp: HalfInt,
    l: u32,
    m: HalfInt,
    q: HalfInt,
) -> f64 {
    let lp_h = HalfInt::from_int(lp as i32);
    let l_h = HalfInt::from_int(l as i32);
    let one = HalfInt::from_int(1);
    let zero = HalfInt::from_int(0);
    let geom = wigner3j(lp_h, one, l_h, -mp, q, m);
    if geom == 0.0 {
        return 0.0;
    }
    let parity = wigner3j(lp_h, one, l_h, zero, zero, zero);
    let phase_exp = lp as i32 - (mp.doubled() / 2);
    let sign = if phase_exp.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    sign * (((2 * lp + 1) * (2 * l + 1)) as f64).sqrt() * geom * parity
}

/// Angular factor of ⟨(l' s) j' I; F' M'| d_q |(l s) j I; F M⟩ for s = I = 1/2,
/// via explicit Clebsch–Gordan chains F → (J, I) → (L, S).
fn hyperfine_dipole_angular(
    lp: u32,
    jp: HalfInt,
    fp: HalfInt,
    mfp: HalfInt,
    l: u32,
    j: HalfInt,
    f: HalfInt,
    mf: HalfInt,
    q: HalfInt,
) -> f64 {
    let half = HalfInt::from_doubled(1);
    let mut total = 0.0;
    // Nuclear projection is a spectator; electron spin likewise.
    for mi in NUCLEAR_SPIN.projections() {
        let mjp = mfp - mi;
        let mj = mf - mi;
        if mjp.doubled().abs() > jp.doubled() || mj.doubled().abs() > j.doubled() {
            continue;
        }
        let cf_p = clebsch_gordan(jp, mjp, NUCLEAR_SPIN, mi, fp, mfp);
        if cf_p == 0.0 {
            continue;
        }
        let cf = clebsch_gordan(j, mj, NUCLEAR_SPIN, mi, f, mf);
        if cf == 0.0 {
            continue;
        }
        for ms in half.projections() {
            let mlp = mjp - ms;
            let ml = mj - ms;
            if !mlp.is_integer() || !ml.is_integer() {
                continue;
            }
            if mlp.doubled().abs() > 2 * lp as i32 || ml.doubled().abs() > 2 * l as i32 {
                continue;
            }
            let cj_p = clebsch_gordan(HalfInt::from_int(lp as i32), mlp, half, ms, jp, mjp);
            if cj_p == 0.0 {
                continue;
            }
            let cj = clebsch_gordan(HalfInt::from_int(l as i32), ml, half, ms, j, mj);
            if cj == 0.0 {
                continue;
            }
            total += cf_p * cf * cj_p * cj * orbital_tensor_element(lp, mlp, l, ml, q);
        }
    }
    total
}

/// Configuration of the hydrogen 2S–4P model.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    /// Override for the 1S hyperfine contact constant [Hz]; all manifold
    /// constants scale from it. `None` uses the Fermi-contact value.
    pub a1s_hz: Option<f64>,
    /// Override for the 4P_1/2–4P_3/2 fine-structure splitting [Hz];
    /// `None` uses the Dirac value (≈ 1368 MHz).
    pub omega0_hz: Option<f64>,
    /// Uniform scale on all decay rates (dipoles scale by its square root).
    pub gamma_scale: f64,
    /// Lower shells (n, l) that collect decay; subset of the dipole-allowed
    /// {(1,0), (2,0), (3,0), (3,2)}.
    pub sink_shells: Vec<(u32, u32)>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            a1s_hz: None,
            omega0_hz: None,
            gamma_scale: 1.0,
            sink_shells: vec![(1, 0), (2, 0), (3, 0), (3, 2)],
        }
    }
}

fn shell_letter(l: u32) -> char {
    match l {
        0 => 'S',
        1 => 'P',
        2 => 'D',
        _ => '?',
    }
}

fn state_label(n: u32, l: u32, j: HalfInt, f: HalfInt, mf: HalfInt, role: StateRole) -> String {
    let core = format!("{n}{}{} F={f} MF={mf}", shell_letter(l), j);
    match role {
        StateRole::Sink => format!("{core} sink"),
        _ => core,
    }
}

/// Builds the hydrogen 2S–4P hyperfine scheme: one driven 2S(F=0, M_F=0)
/// state, the 12 4P hyperfine sublevels, and sink copies of every decay
/// destination.
pub fn build_level_scheme(cfg: &ModelConfig) -> Result<LevelScheme> {
    if !(cfg.gamma_scale.is_finite() && cfg.gamma_scale > 0.0) {
        return Err(Error::Config(format!(
            "gamma_scale must be positive and finite, got {}",
            cfg.gamma_scale
        )));
    }
    if cfg.sink_shells.is_empty() {
        return Err(Error::Config(
            "at least one sink shell is required; 4P states must decay somewhere".into(),
        ));
    }
    const ALLOWED: [(u32, u32); 4] = [(1, 0), (2, 0), (3, 0), (3, 2)];
    for &(n, l) in &cfg.sink_shells {
        if !ALLOWED.contains(&(n, l)) {
            return Err(Error::Config(format!(
                "sink shell ({n},{l}) is not dipole-coupled below 4P"
            )));
        }
    }
    if let Some(a) = cfg.a1s_hz {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Config(format!("a1s_hz override {a} must be positive")));
        }
    }
    if let Some(w) = cfg.omega0_hz {
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Config(format!("omega0_hz override {w} must be positive")));
        }
    }

    let a1s = cfg.a1s_hz.unwrap_or(consts::A1S_HZ);
    let half = HalfInt::from_doubled(1);
    let three_half = HalfInt::from_doubled(3);

    // Fine-structure energies of the two 4P levels; an ω₀ override moves the
    // j = 3/2 level, keeping j = 1/2 fixed.
    let e4p_fs = |j: HalfInt| -> f64 {
        match cfg.omega0_hz {
            Some(w0) if j == three_half => fine_structure_hz(4, half) + w0,
            _ => fine_structure_hz(4, j),
        }
    };

    // Driven-state energy [Hz]: gross + fs + its own hyperfine shift.
    let a_2s = hyperfine_constant_hz(a1s, 2, 0, half);
    let e_driven_hz = gross_energy_hz(2)
        + fine_structure_hz(2, half)
        + hyperfine_shift_hz(a_2s, half, HalfInt::from_int(0));

    let mut states = Vec::new();
    let to_rad = |e_hz: f64| 2.0 * std::f64::consts::PI * (e_hz - e_driven_hz);

    // 0: the driven state.
    states.push(AtomicState {
        n: 2,
        l: 0,
        j: half,
        f: HalfInt::from_int(0),
        mf: HalfInt::from_int(0),
        energy: 0.0,
        role: StateRole::Driven,
        label: state_label(2, 0, half, HalfInt::from_int(0), HalfInt::from_int(0), StateRole::Driven),
    });
    let driven = 0usize;

    // 4P hyperfine sublevels: j = 1/2 (F = 0, 1) and j = 3/2 (F = 1, 2).
    for j in [half, three_half] {
        let a_hf = hyperfine_constant_hz(a1s, 4, 1, j);
        let df_min = (j - half).doubled();
        let df_max = (j + half).doubled();
        for df in (df_min..=df_max).step_by(2) {
            let f = HalfInt::from_doubled(df);
            let e_hz = gross_energy_hz(4) + e4p_fs(j) + hyperfine_shift_hz(a_hf, j, f);
            for mf in f.projections() {
                states.push(AtomicState {
                    n: 4,
                    l: 1,
                    j,
                    f,
                    mf,
                    energy: to_rad(e_hz),
                    role: StateRole::Excited,
                    label: state_label(4, 1, j, f, mf, StateRole::Excited),
                });
            }
        }
    }

    // Sink states: every (n, l) shell with all its j and F multiplets, flat
    // at the gross + fine-structure energy of (n, j).
    let mut shells = cfg.sink_shells.clone();
    shells.sort_unstable();
    shells.dedup();
    for &(n, l) in &shells {
        let j_list: Vec<HalfInt> = if l == 0 {
            vec![half]
        } else {
            vec![
                HalfInt::from_doubled(2 * l as i32 - 1),
                HalfInt::from_doubled(2 * l as i32 + 1),
            ]
        };
        for j in j_list {
            let e_hz = gross_energy_hz(n) + fine_structure_hz(n, j);
            let df_min = (j - half).doubled();
            let df_max = (j + half).doubled();
            for df in (df_min..=df_max).step_by(2) {
                let f = HalfInt::from_doubled(df);
                for mf in f.projections() {
                    states.push(AtomicState {
                        n,
                        l,
                        j,
                        f,
                        mf,
                        energy: to_rad(e_hz),
                        role: StateRole::Sink,
                        label: state_label(n, l, j, f, mf, StateRole::Sink),
                    });
                }
            }
        }
    }

    // Decay transitions: every 4P sublevel to every sink state one dipole
    // step down. The sqrt(gamma_scale) on dipoles scales all rates linearly.
    let dipole_scale = cfg.gamma_scale.sqrt();
    let mut transitions = Vec::new();
    let excited: Vec<usize> = (0..states.len())
        .filter(|&i| states[i].role == StateRole::Excited)
        .collect();
    for &u in &excited {
        let su = states[u].clone();
        for (g, sg) in states.iter().enumerate() {
            if sg.role != StateRole::Sink || (sg.l as i32 - su.l as i32).abs() != 1 {
                continue;
            }
            let radial = radial_integral(sg.n, sg.l, su.n, su.l)?;
            let mut dip = [0.0; 3];
            let mut any = false;
            for (qi, dq) in [-1i32, 0, 1].into_iter().zip(0..3) {
                let ang = hyperfine_dipole_angular(
                    sg.l, sg.j, sg.f, sg.mf, su.l, su.j, su.f, su.mf,
                    HalfInt::from_int(qi),
                );
                let v = radial * ang * dipole_scale;
                if v.abs() > 1e-14 {
                    dip[dq] = v;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let omega = su.energy - sg.energy;
            let omega_rate = 2.0
                * std::f64::consts::PI
                * consts::RH_C_HZ
                * (1.0 / (sg.n * sg.n) as f64 - 1.0 / (su.n * su.n) as f64);
            transitions.push(Transition {
                lower: g,
                upper: u,
                dipole: dip,
                omega,
                omega_rate,
            });
        }
    }

    // Laser lines 2S(F=0) → 4P(F'): only F' = 1 survives the ΔF selection
    // rules (F = 0 → F' = 0 is forbidden, F' = 2 needs ΔF = 2).
    let sd = states[driven].clone();
    let mut drive_lines = Vec::new();
    for &u in &excited {
        let su = states[u].clone();
        let radial = radial_integral(sd.n, sd.l, su.n, su.l)?;
        let mut dip = [0.0; 3];
        let mut any = false;
        for (qi, dq) in [-1i32, 0, 1].into_iter().zip(0..3) {
            let ang = hyperfine_dipole_angular(
                sd.l, sd.j, sd.f, sd.mf, su.l, su.j, su.f, su.mf,
                HalfInt::from_int(qi),
            );
            let v = radial * ang * dipole_scale;
            if v.abs() > 1e-14 {
                dip[dq] = v;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let omega_rate = 2.0
            * std::f64::consts::PI
            * consts::RH_C_HZ
            * (1.0 / (sd.n * sd.n) as f64 - 1.0 / (su.n * su.n) as f64);
        drive_lines.push(Transition {
            lower: driven,
            upper: u,
            dipole: dip,
            omega: su.energy,
            omega_rate,
        });
    }

    // Per-sublevel total decay rate; isotropy of the vacuum coupling makes
    // it identical for every upper sublevel (Bohr-frequency rate kernel +
    // complete lower shells). A violation is a construction bug.
    let rate_of = |u: usize| -> f64 {
        transitions
            .iter()
            .filter(|t| t.upper == u)
            .map(|t| consts::RATE_PREFACTOR * t.dipole_sq() * t.omega_rate.powi(3))
            .sum()
    };
    let rates: Vec<f64> = excited.iter().map(|&u| rate_of(u)).collect();
    let gamma_tot = rates.iter().sum::<f64>() / rates.len() as f64;
    for (&u, &r) in excited.iter().zip(rates.iter()) {
        assert!(
            (r - gamma_tot).abs() <= 1e-10 * gamma_tot,
            "anisotropic total decay rate at state {}: {} vs mean {}",
            states[u].label,
            r,
            gamma_tot
        );
    }

    // Reference line: 2S F=0 → 4P_1/2 F=1 M_F=0.
    let ref_upper = states
        .iter()
        .position(|s| {
            s.role == StateRole::Excited
                && s.j == half
                && s.f == HalfInt::from_int(1)
                && s.mf == HalfInt::from_int(0)
        })
        .expect("reference 4P_1/2 F=1 M_F=0 state exists");
    let omega_ref = states[ref_upper].energy;

    let scheme = LevelScheme {
        states,
        transitions,
        drive_lines,
        driven,
        gamma_tot,
        omega_ref,
    };
    scheme.validate()?;
    Ok(scheme)
}
