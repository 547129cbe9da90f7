//! Coarse-grained Lindblad spectroscopy of laser-driven multilevel atoms.
//!
//! This crate builds the coarse-grained master equation for a weakly driven
//! multilevel emitter whose decay channels interfere (cross-damping), and
//! computes the angle-resolved fluorescence spectrum that a detector of finite
//! solid angle records. The shipped level scheme is hydrogen 2S–4P with full
//! hyperfine structure, where interference between the 4P_1/2 and 4P_3/2 decay
//! pathways pulls the apparent line centers by tens of kHz — a real systematic
//! in Rydberg-constant spectroscopy — but the machinery is generic over any
//! level scheme expressed as states plus dipole-coupled transitions.
//!
//! Pipeline, in module order:
//!
//! * [`angular`] — exact angular-momentum algebra (Wigner 3j, Clebsch–Gordan)
//!   on half-integer quantum numbers.
//! * [`hydrogen`] — hydrogen energies (Dirac fine structure + hyperfine),
//!   nonrelativistic radial integrals, and the 2S–4P level-scheme builder.
//! * [`coefficients`] — coarse-grained decay/cross-damping rates γ_ij built
//!   from the finite-coarse-graining-time filter function, plus the
//!   principal-value cross-shifts entering the Lamb-shift-like Hamiltonian
//!   correction.
//! * [`detection`] — solid-angle detection geometry: the 3×3 polarization
//!   projector of a detector region and the detection-weighted rate matrix.
//! * [`liouvillian`] — the master equation itself: drive Hamiltonian in the
//!   rotating frame, dissipator, time evolution, and quasi-steady state.
//! * [`spectra`] — excitation spectra over detuning grids, Lorentzian and
//!   interference-aware line-shape fits, line-pulling extraction, and the
//!   geometry / coarse-graining-time sweeps.
//! * [`validation`] — cross-checks wired together from independent routes
//!   (closed forms vs quadrature, propagator vs null space), exposed so the
//!   CLI can run them on demand.
//!
//! Frequencies are angular (rad/s) throughout unless a name says otherwise;
//! conversions to the Hz quantities that spectroscopy tables quote happen at
//! the edges. Dipole moments are in units of e·a₀, rates in 1/s.

pub mod angular;
pub mod coefficients;
pub mod consts;
pub mod detection;
pub mod hydrogen;
pub mod linalg;
pub mod liouvillian;
pub mod quad;
pub mod spectra;
pub mod validation;

/// Errors surfaced by fallible operations across the crate.
///
/// Physics bugs (violated invariants that indicate broken code rather than
/// bad input) panic instead; `Error` is reserved for conditions a caller can
/// cause or must handle: inconsistent configuration, non-converged numerics,
/// and cross-route consistency checks that disagree beyond tolerance.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller-supplied configuration is inconsistent or out of range.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An iterative numerical method failed to converge.
    #[error("numerical failure: {0}")]
    Numerics(String),
    /// Two independent computation routes disagree beyond tolerance.
    #[error("consistency check failed: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
