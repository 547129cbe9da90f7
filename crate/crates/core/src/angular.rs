//! Angular-momentum algebra: half-integer quantum numbers, Wigner 3j
//! symbols, Clebsch–Gordan coefficients, and the ground-sum orthogonality
//! kernel behind cross-damping selection rules.
//!
//! The 3j symbol is evaluated with Racah's single-sum formula,
//!
//! ```text
//! (j1 j2 j3; m1 m2 m3) = (-1)^(j1-j2-m3) Δ(j1 j2 j3) ·
//!     √[(j1±m1)!(j2±m2)!(j3±m3)!] ·
//!     Σ_t (-1)^t / [t!(j3-j2+m1+t)!(j3-j1-m2+t)!(j1+j2-j3-t)!(j1-m1-t)!(j2+m2-t)!]
//! ```
//!
//! with Δ² = (j1+j2-j3)!(j1-j2+j3)!(-j1+j2+j3)!/(j1+j2+j3+1)!. Terms are
//! formed in log space from a compensated ln-factorial table and summed with
//! a Neumaier compensated accumulator, which keeps every symbol with
//! 2j ≤ 10 within ~1e-15 of the exact rational-arithmetic value.
//!
//! All selection-rule failures (triangle, m-sum, |m| ≤ j, j/m parity,
//! negative j) return exactly 0 rather than panicking, so callers can loop
//! over full multiplets without guarding.

use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::sync::OnceLock;

/// Half-integer angular momentum stored as twice its value, so j = 3/2 is
/// `HalfInt(3)` and m = -1 is `HalfInt(-2)`. Exact integer arithmetic makes
/// parity and triangle checks free of rounding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct HalfInt(i32);

impl HalfInt {
    /// Builds from twice the value: `from_doubled(3)` is 3/2.
    pub const fn from_doubled(twice: i32) -> Self {
        HalfInt(twice)
    }

    /// Builds from an integer value: `from_int(2)` is 2.
    pub const fn from_int(n: i32) -> Self {
        HalfInt(2 * n)
    }

    /// Twice the value, always an exact integer.
    pub const fn doubled(self) -> i32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub const fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Projection values -j, -j+1, …, +j.
    pub fn projections(self) -> impl Iterator<Item = HalfInt> {
        (-self.0..=self.0).step_by(2).map(HalfInt)
    }
}

impl Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

const LNFAC_MAX: usize = 256;

/// ln(n!) from a compensated cumulative table; exact to ~1 ulp of the sum.
fn ln_factorial(n: i32) -> f64 {
    assert!(
        (0..=LNFAC_MAX as i32).contains(&n),
        "factorial argument {n} outside supported range"
    );
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut v = vec![0.0f64; LNFAC_MAX + 1];
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (k, slot) in v.iter_mut().enumerate().skip(1) {
            let y = (k as f64).ln() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            *slot = sum;
        }
        v
    });
    table[n as usize]
}

/// Neumaier compensated sum of a signed sequence.
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn new() -> Self {
        Neumaier { sum: 0.0, comp: 0.0 }
    }

    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// True when (j, m) is a valid pair: j ≥ 0, |m| ≤ j, and j, m share parity
/// (both integer or both half-odd).
fn valid_jm(j: HalfInt, m: HalfInt) -> bool {
    j.0 >= 0 && m.0.abs() <= j.0 && (j.0 - m.0) % 2 == 0
}

/// Wigner 3j symbol (j1 j2 j3; m1 m2 m3). Returns exactly 0 whenever a
/// selection rule fails: m1+m2+m3 ≠ 0, triangle violation, |m| > j,
/// non-integer perimeter, or j/m parity mismatch.
pub fn wigner3j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    m1: HalfInt,
    m2: HalfInt,
    m3: HalfInt,
) -> f64 {
    if !valid_jm(j1, m1) || !valid_jm(j2, m2) || !valid_jm(j3, m3) {
        return 0.0;
    }
    if m1.0 + m2.0 + m3.0 != 0 {
        return 0.0;
    }
    // Triangle and integer-perimeter conditions.
    if j3.0 > j1.0 + j2.0 || j3.0 < (j1.0 - j2.0).abs() || (j1.0 + j2.0 + j3.0) % 2 != 0 {
        return 0.0;
    }

    // All of the following are exact integers by the parity checks above.
    let a = (j1.0 + j2.0 - j3.0) / 2;
    let b = (j1.0 - j2.0 + j3.0) / 2;
    let c = (-j1.0 + j2.0 + j3.0) / 2;
    let perim1 = (j1.0 + j2.0 + j3.0) / 2 + 1;
    let j1p = (j1.0 + m1.0) / 2;
    let j1m = (j1.0 - m1.0) / 2;
    let j2p = (j2.0 + m2.0) / 2;
    let j2m = (j2.0 - m2.0) / 2;
    let j3p = (j3.0 + m3.0) / 2;
    let j3m = (j3.0 - m3.0) / 2;

    let ln_pref = 0.5
        * (ln_factorial(a) + ln_factorial(b) + ln_factorial(c) - ln_factorial(perim1)
            + ln_factorial(j1p)
            + ln_factorial(j1m)
            + ln_factorial(j2p)
            + ln_factorial(j2m)
            + ln_factorial(j3p)
            + ln_factorial(j3m));

    // Racah-sum bounds.
    let k1 = (j2.0 - j3.0 - m1.0) / 2; // j2 - j3 - m1
    let k2 = (j1.0 - j3.0 + m2.0) / 2; // j1 - j3 + m2
    let t_min = 0.max(k1).max(k2);
    let t_max = a.min(j1m).min(j2p);
    if t_min > t_max {
        return 0.0;
    }

    let mut acc = Neumaier::new();
    for t in t_min..=t_max {
        let ln_den = ln_factorial(t)
            + ln_factorial(t - k1)
            + ln_factorial(t - k2)
            + ln_factorial(a - t)
            + ln_factorial(j1m - t)
            + ln_factorial(j2p - t);
        let term = (ln_pref - ln_den).exp();
        acc.add(if t % 2 == 0 { term } else { -term });
    }

    let phase = (j1.0 - j2.0 - m3.0) / 2;
    if phase.rem_euclid(2) == 0 {
        acc.value()
    } else {
        -acc.value()
    }
}

/// Clebsch–Gordan coefficient ⟨j1 m1; j2 m2 | J M⟩, expressed through the
/// 3j symbol as (-1)^(j1-j2+M) √(2J+1) (j1 j2 J; m1 m2 -M).
pub fn clebsch_gordan(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j: HalfInt,
    m: HalfInt,
) -> f64 {
    let w = wigner3j(j1, j2, j, m1, m2, -m);
    if w == 0.0 {
        return 0.0;
    }
    let phase = (j1.0 - j2.0 + m.0) / 2;
    let sign = if phase.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    sign * ((j.0 + 1) as f64).sqrt() * w
}

/// The double-3j ground sum
///
/// ```text
/// Σ_{M_g,q} (J_g 1 J_e; -M_g q M_e)(J_g 1 J_e'; -M_g q M_e')
///        = δ_{J_e J_e'} δ_{M_e M_e'} / (2J_e + 1),
/// ```
///
/// the kernel of the proof that cross-damping terms between distinct upper
/// sublevels cancel from any observable summed over a complete lower
/// multiplet. Returned as the explicit sum rather than the Kronecker closed
/// form so tests can verify the identity.
pub fn orthogonality_sum(
    j_g: HalfInt,
    j_e: HalfInt,
    j_e2: HalfInt,
    m_e: HalfInt,
    m_e2: HalfInt,
) -> f64 {
    let one = HalfInt::from_int(1);
    let mut acc = Neumaier::new();
    for m_g in j_g.projections() {
        for q in one.projections() {
            let w1 = wigner3j(j_g, one, j_e, -m_g, q, m_e);
            if w1 == 0.0 {
                continue;
            }
            let w2 = wigner3j(j_g, one, j_e2, -m_g, q, m_e2);
            acc.add(w1 * w2);
        }
    }
    acc.value()
}
