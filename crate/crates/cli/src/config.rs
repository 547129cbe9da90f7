//! The TOML run configuration. Every key is optional and carries its unit in
//! the name (`tau_c_s`, `detuning_hz`, `theta_rad`); unknown keys are
//! rejected so a typo cannot silently fall back to a default. Parsing then
//! serializing is idempotent, and a serialized config is itself valid input.

use cgspec::coefficients::CoarseGrainConfig;
use cgspec::detection::DetectionRegion;
use cgspec::hydrogen::ModelConfig;
use cgspec::liouvillian::{DriveConfig, Toggles};
use cgspec::spectra::{default_tau_grid, RegionFamily};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::CliError;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub coarse_grain: CoarseGrainSection,
    pub drive: DriveSection,
    pub toggles: TogglesSection,
    pub detection: DetectionSection,
    pub spectrum: SpectrumSection,
    pub pulling_sweep: PullingSweepSection,
    pub tauc_sweep: TaucSweepSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Override of the 1S hyperfine contact constant [Hz].
    pub a1s_hz: Option<f64>,
    /// Override of the 4P fine-structure splitting [Hz].
    pub omega0_hz: Option<f64>,
    /// Uniform scale on all decay rates.
    pub gamma_scale: f64,
    /// Lower shells (n, l) collecting decay; subset of [[1,0],[2,0],[3,0],[3,2]].
    pub sink_shells: Option<Vec<(u32, u32)>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { a1s_hz: None, omega0_hz: None, gamma_scale: 1.0, sink_shells: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseGrainSection {
    pub tau_c_s: f64,
    pub temperature_k: f64,
    /// Cutoff of the shift integrals [rad/s]; defaults to the library value.
    pub omega_cut_rad_per_s: Option<f64>,
}

impl Default for CoarseGrainSection {
    fn default() -> Self {
        let d = CoarseGrainConfig::default();
        CoarseGrainSection { tau_c_s: d.tau_c, temperature_k: d.temperature, omega_cut_rad_per_s: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    /// Laser detuning from the reference line [Hz].
    pub detuning_hz: f64,
    /// Peak Rabi frequency in units of the total decay rate.
    pub rabi_scale: f64,
    /// Linear polarization direction (lab frame).
    pub polarization: [f64; 3],
    /// Propagation direction (fixes the detection geometry frame).
    pub propagation: [f64; 3],
}

impl Default for DriveSection {
    fn default() -> Self {
        let d = DriveConfig::default();
        DriveSection {
            detuning_hz: d.detuning / TWO_PI,
            rabi_scale: d.rabi_scale,
            polarization: d.polarization,
            propagation: d.propagation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TogglesSection {
    pub cross_damping: bool,
    pub cross_shift: bool,
}

impl Default for TogglesSection {
    fn default() -> Self {
        TogglesSection { cross_damping: true, cross_shift: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    /// One of: full-sphere, cone-about-y, double-cone-z,
    /// inverted-double-cone-z, stripe.
    pub region: String,
    /// Stripe center polar angle [rad].
    pub theta_rad: f64,
    /// Stripe full width [rad].
    pub width_rad: f64,
    /// Cone half-angle [rad] (double-cone families).
    pub half_angle_rad: f64,
    /// Cone solid angle [sr] (cone-about-y).
    pub solid_angle_sr: f64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        DetectionSection {
            region: "stripe".into(),
            theta_rad: PI / 2.0,
            width_rad: 0.01,
            half_angle_rad: 0.7,
            solid_angle_sr: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// Points of the detuning grid covering both resonances.
    pub grid_points: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection { grid_points: 4001 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PullingSweepSection {
    /// One of: stripe, cone-about-y, double-cone-z, inverted-double-cone-z.
    pub family: String,
    /// Stripe full width [rad] (stripe family only).
    pub stripe_width_rad: f64,
    /// Sweep values: θ [rad] for stripe, half-angle [rad] for the cone
    /// families, solid angle [sr] for cone-about-y. Omitted, a default grid
    /// for the family applies; present but empty is an error.
    pub values: Option<Vec<f64>>,
}

impl Default for PullingSweepSection {
    fn default() -> Self {
        PullingSweepSection { family: "stripe".into(), stripe_width_rad: 0.01, values: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaucSweepSection {
    /// Coarse-graining times [s]. Omitted, the default logarithmic grid over
    /// [1e-13, 1e-9] s applies; present but empty is an error.
    pub tau_c_s: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config parse: {e}")))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Field-path-labeled invariant checks, all before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |path: &str, msg: &str| Err(CliError::config(format!("{path}: {msg}")));
        if !(self.model.gamma_scale.is_finite() && self.model.gamma_scale > 0.0) {
            return bad("model.gamma_scale", "must be finite and positive");
        }
        if !(self.coarse_grain.tau_c_s.is_finite() && self.coarse_grain.tau_c_s > 0.0) {
            return bad("coarse_grain.tau_c_s", "must be finite and positive");
        }
        if !(self.coarse_grain.temperature_k.is_finite() && self.coarse_grain.temperature_k >= 0.0)
        {
            return bad("coarse_grain.temperature_k", "must be finite and non-negative");
        }
        if let Some(w) = self.coarse_grain.omega_cut_rad_per_s {
            if !(w.is_finite() && w > 0.0) {
                return bad("coarse_grain.omega_cut_rad_per_s", "must be finite and positive");
            }
        }
        if !self.drive.detuning_hz.is_finite() {
            return bad("drive.detuning_hz", "must be finite");
        }
        if !(self.drive.rabi_scale.is_finite() && self.drive.rabi_scale > 0.0) {
            return bad("drive.rabi_scale", "must be finite and positive");
        }
        for (path, v) in
            [("drive.polarization", self.drive.polarization), ("drive.propagation", self.drive.propagation)]
        {
            let norm2: f64 = v.iter().map(|c| c * c).sum();
            if !(norm2.is_finite() && norm2 > 0.0) {
                return bad(path, "must be a finite nonzero vector");
            }
        }
        self.region().map_err(|e| CliError::config(format!("detection: {}", e.message)))?;
        if self.spectrum.grid_points < 2 {
            return bad("spectrum.grid_points", "needs at least two points");
        }
        if !(self.pulling_sweep.stripe_width_rad.is_finite()
            && self.pulling_sweep.stripe_width_rad > 0.0)
        {
            return bad("pulling_sweep.stripe_width_rad", "must be finite and positive");
        }
        let family = self.family()?;
        if let Some(values) = &self.pulling_sweep.values {
            if values.is_empty() {
                return bad("pulling_sweep.values", "must not be empty");
            }
            if values.iter().any(|v| !v.is_finite()) {
                return bad("pulling_sweep.values", "must be finite");
            }
            for &v in values {
                family
                    .region(v)
                    .validate()
                    .map_err(|e| CliError::config(format!("pulling_sweep.values: {e}")))?;
            }
        }
        if let Some(taus) = &self.tauc_sweep.tau_c_s {
            if taus.is_empty() {
                return bad("tauc_sweep.tau_c_s", "must not be empty");
            }
            if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return bad("tauc_sweep.tau_c_s", "must be finite and positive");
            }
        }
        if self.output.dir.is_empty() {
            return bad("output.dir", "must not be empty");
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        let defaults = ModelConfig::default();
        ModelConfig {
            a1s_hz: self.model.a1s_hz,
            omega0_hz: self.model.omega0_hz,
            gamma_scale: self.model.gamma_scale,
            sink_shells: self.model.sink_shells.clone().unwrap_or(defaults.sink_shells),
        }
    }

    pub fn coarse(&self) -> CoarseGrainConfig {
        let defaults = CoarseGrainConfig::default();
        CoarseGrainConfig {
            tau_c: self.coarse_grain.tau_c_s,
            temperature: self.coarse_grain.temperature_k,
            omega_cut: self.coarse_grain.omega_cut_rad_per_s.unwrap_or(defaults.omega_cut),
        }
    }

    pub fn drive(&self) -> DriveConfig {
        DriveConfig {
            detuning: self.drive.detuning_hz * TWO_PI,
            rabi_scale: self.drive.rabi_scale,
            polarization: self.drive.polarization,
            propagation: self.drive.propagation,
        }
    }

    /// Toggles with an optional command-line override of cross damping.
    pub fn toggles(&self, cross_override: Option<bool>) -> Toggles {
        Toggles {
            cross_damping: cross_override.unwrap_or(self.toggles.cross_damping),
            cross_shift: self.toggles.cross_shift,
        }
    }

    pub fn region(&self) -> Result<DetectionRegion, CliError> {
        let d = &self.detection;
        let region = match d.region.as_str() {
            "full-sphere" => DetectionRegion::Full4Pi,
            "cone-about-y" => DetectionRegion::ConeAboutY { solid_angle: d.solid_angle_sr },
            "double-cone-z" => DetectionRegion::DoubleConeZ { half_angle: d.half_angle_rad },
            "inverted-double-cone-z" => {
                DetectionRegion::InvertedDoubleConeZ { half_angle: d.half_angle_rad }
            }
            "stripe" => DetectionRegion::StripeTheta { theta: d.theta_rad, width: d.width_rad },
            other => {
                return Err(CliError::config(format!(
                    "detection.region: unknown region {other:?} (expected full-sphere, \
                     cone-about-y, double-cone-z, inverted-double-cone-z, or stripe)"
                )))
            }
        };
        region.validate()?;
        Ok(region)
    }

    pub fn family(&self) -> Result<RegionFamily, CliError> {
        match self.pulling_sweep.family.as_str() {
            "stripe" => Ok(RegionFamily::StripeTheta { width: self.pulling_sweep.stripe_width_rad }),
            "cone-about-y" => Ok(RegionFamily::ConeAboutY),
            "double-cone-z" => Ok(RegionFamily::DoubleConeZ),
            "inverted-double-cone-z" => Ok(RegionFamily::InvertedDoubleConeZ),
            other => Err(CliError::config(format!(
                "pulling_sweep.family: unknown family {other:?} (expected stripe, cone-about-y, \
                 double-cone-z, or inverted-double-cone-z)"
            ))),
        }
    }

    /// The sweep grid for the configured family; a built-in default when the
    /// config gives none.
    pub fn family_values(&self) -> Result<Vec<f64>, CliError> {
        if let Some(values) = &self.pulling_sweep.values {
            return Ok(values.clone());
        }
        Ok(match self.family()? {
            RegionFamily::StripeTheta { .. } => {
                (0..25).map(|k| k as f64 * PI / 24.0).collect()
            }
            RegionFamily::DoubleConeZ => (1..=13).map(|k| 0.115 * k as f64).collect(),
            RegionFamily::InvertedDoubleConeZ => (0..13).map(|k| 0.12 * k as f64).collect(),
            RegionFamily::ConeAboutY => (0..13).map(|k| 0.5 + k as f64).collect(),
        })
    }

    pub fn tau_values(&self) -> Vec<f64> {
        self.tauc_sweep.tau_c_s.clone().unwrap_or_else(default_tau_grid)
    }
}
