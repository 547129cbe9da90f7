//! Adaptive Gauss–Kronrod quadrature for the coefficient kernels.
//!
//! A 15-point Kronrod rule (exact through polynomial degree 22) paired with
//! its embedded 7-point Gauss rule supplies a per-panel error estimate
//! |K15 − G7|; panels live in a max-heap keyed on that estimate and the
//! worst panel is bisected until the summed estimate meets the requested
//! absolute/relative tolerance. This is the classic globally adaptive
//! QUADPACK strategy, which handles the oscillatory filter-function
//! integrands and the steep principal-value shoulders equally well.
//!
//! Integrands return `Complex64`; a thin wrapper serves real integrands.
//! Non-finite integrand values and failure to converge are reported as
//! `Error::Numerics` rather than silently returning garbage.

use crate::{Error, Result};
use num_complex::Complex64;
use std::collections::BinaryHeap;

/// Kronrod abscissae on [0, 1] side of the symmetric 15-point rule.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights for the embedded 7-point rule (nodes XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 10-point Gauss–Legendre nodes on [-1, 1] (positive half) and weights,
/// used for fixed-order panel integration of smooth transients.
pub(crate) const GL10_X: [f64; 5] = [
    0.148874338981631210884826001129720,
    0.433395394129247190799265943165784,
    0.679409568299024406234327365114874,
    0.865063366688984510732096688423493,
    0.973906528517171720077964012084452,
];

pub(crate) const GL10_W: [f64; 5] = [
    0.295524224714752870173892994651338,
    0.269266719309996355091226921569469,
    0.219086362515982043995534934228163,
    0.149451349150580593145776339657697,
    0.066671344308688137593568809893332,
];

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: Complex64,
    /// Summed per-panel |K15 − G7| estimates; an upper-bound flavored bound
    /// on the true error for integrands resolved by the final panels.
    pub error: f64,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error
            .partial_cmp(&other.error)
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

fn kronrod_panel<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> Result<Panel> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k15 = Complex64::new(0.0, 0.0);
    let mut g7 = Complex64::new(0.0, 0.0);
    for i in 0..8 {
        let contrib = if i == 7 {
            f(c)
        } else {
            f(c - h * XGK[i]) + f(c + h * XGK[i])
        };
        if !contrib.re.is_finite() || !contrib.im.is_finite() {
            return Err(Error::Numerics(format!(
                "integrand returned a non-finite value near x = {c:e}"
            )));
        }
        k15 += WGK[i] * contrib;
        if i % 2 == 1 {
            g7 += WG[i / 2] * contrib;
        } else if i == 7 {
            g7 += WG[3] * contrib;
        }
    }
    Ok(Panel {
        a,
        b,
        value: k15 * h,
        error: ((k15 - g7) * h).norm(),
    })
}

/// Globally adaptive Gauss–Kronrod integration of `f` over [a, b].
///
/// Converges when the summed panel-error estimate drops below
/// max(abs_tol, rel_tol·|value|); fails with `Error::Numerics` if more than
/// `MAX_PANELS` panels are needed or panels shrink to rounding width while
/// the tolerance is still unmet.
pub fn integrate<F: FnMut(f64) -> Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult> {
    const MAX_PANELS: usize = 30_000;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerics("integration limits must be finite".into()));
    }
    if a == b {
        return Ok(QuadResult {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            evaluations: 0,
        });
    }
    if a > b {
        let mut r = integrate(f, b, a, abs_tol, rel_tol)?;
        r.value = -r.value;
        return Ok(r);
    }

    let min_width = (b - a) * 1e-15;
    let mut evals = 15usize;
    let mut heap = BinaryHeap::new();
    let first = kronrod_panel(&mut f, a, b)?;
    let mut total = first.value;
    let mut live_err = first.error;
    let mut frozen = Complex64::new(0.0, 0.0);
    let mut frozen_err = 0.0f64;
    heap.push(first);

    let mut panels = 1usize;
    loop {
        let value = total + frozen;
        let tol = abs_tol.max(rel_tol * value.norm());
        if live_err + frozen_err <= tol {
            return Ok(QuadResult {
                value,
                error: live_err + frozen_err,
                evaluations: evals,
            });
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::Numerics(format!(
                "quadrature stalled at error {:.3e} > tolerance {:.3e}",
                live_err + frozen_err,
                tol
            )));
        };
        if worst.b - worst.a < min_width {
            // Can't be refined further; park it and move on.
            live_err -= worst.error;
            frozen_err += worst.error;
            frozen += worst.value;
            total -= worst.value;
            continue;
        }
        if panels >= MAX_PANELS {
            return Err(Error::Numerics(format!(
                "quadrature exceeded {MAX_PANELS} panels (error {:.3e} > tolerance {:.3e})",
                live_err + frozen_err,
                tol
            )));
        }
        let mid = 0.5 * (worst.a + worst.b);
        let left = kronrod_panel(&mut f, worst.a, mid)?;
        let right = kronrod_panel(&mut f, mid, worst.b)?;
        evals += 30;
        panels += 1;
        total += left.value + right.value - worst.value;
        live_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
}

/// Adaptive integration of a real integrand; see [`integrate`].
pub fn integrate_real<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    let r = integrate(|x| Complex64::new(f(x), 0.0), a, b, abs_tol, rel_tol)?;
    Ok((r.value.re, r.error))
}
