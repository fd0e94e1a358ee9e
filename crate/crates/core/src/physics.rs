//! Physical constants, optical/microwave wave geometry, near-field region
//! classification and the Autler–Townes splitting ↔ field conversion.
//!
//! All frequencies are ordinary frequencies in Hz. Wavenumbers follow the same
//! convention (`k = 1/λ`), so a Doppler shift is simply `k·v` in Hz.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "physics";

/// Planck constant h in J·s (exact, SI 2019).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum c in m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Boltzmann constant k_B in J/K (exact).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Atomic unit of electric dipole moment e·a₀ in C·m (CODATA 2018).
pub const E_A0: f64 = 8.478_353_625_5e-30;

/// Default transition dipole for the 44D5/2 → 45P3/2 microwave transition.
/// This is a configurable placeholder, not a measured value.
pub const DEFAULT_DIPOLE: f64 = 1000.0 * E_A0;

/// Caesium-133 atomic mass in kg.
pub const CESIUM_MASS: f64 = 2.2069e-25;

/// Microwave frequency of the 44D5/2 → 45P3/2 transition used throughout the examples.
pub const MICROWAVE_FREQUENCY: f64 = 8.556e9;

/// Constants bundled as a value, for callers that want to echo them in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysConstants {
    pub h: f64,
    pub c: f64,
    pub e_a0: f64,
}

impl Default for PhysConstants {
    fn default() -> Self {
        Self {
            h: PLANCK,
            c: SPEED_OF_LIGHT,
            e_a0: E_A0,
        }
    }
}

/// Probe and coupling laser wavelengths of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveGeometry {
    /// Probe wavelength in m.
    #[serde(rename = "lambda_p_m")]
    pub lambda_p: f64,
    /// Coupling wavelength in m.
    #[serde(rename = "lambda_c_m")]
    pub lambda_c: f64,
}

impl WaveGeometry {
    pub fn new(lambda_p: f64, lambda_c: f64) -> Result<Self> {
        let geometry = Self { lambda_p, lambda_c };
        geometry.validate()?;
        Ok(geometry)
    }

    /// 852 nm probe, 510 nm coupling.
    pub fn cesium() -> Self {
        Self {
            lambda_p: 852e-9,
            lambda_c: 510e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p.is_finite() && self.lambda_p > 0.0) {
            return Err(Error::domain(
                MODULE,
                "lambda_p must be positive and finite",
            ));
        }
        if !(self.lambda_c.is_finite() && self.lambda_c > 0.0) {
            return Err(Error::domain(
                MODULE,
                "lambda_c must be positive and finite",
            ));
        }
        Ok(())
    }

    /// Probe wavenumber 1/λ_p in 1/m.
    #[inline]
    pub fn k_p(&self) -> f64 {
        1.0 / self.lambda_p
    }

    /// Coupling wavenumber 1/λ_c in 1/m.
    #[inline]
    pub fn k_c(&self) -> f64 {
        1.0 / self.lambda_c
    }
}

impl Default for WaveGeometry {
    fn default() -> Self {
        Self::cesium()
    }
}

/// Rectangular antenna aperture driven at a single frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaAperture {
    pub width: f64,
    pub height: f64,
    pub frequency: f64,
}

impl AntennaAperture {
    pub fn new(width: f64, height: f64, frequency: f64) -> Result<Self> {
        let aperture = Self {
            width,
            height,
            frequency,
        };
        aperture.validate()?;
        Ok(aperture)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width >= 0.0 && self.height >= 0.0)
            || !self.width.is_finite()
            || !self.height.is_finite()
        {
            return Err(Error::domain(
                MODULE,
                "aperture sides must be finite and non-negative",
            ));
        }
        if self.max_dimension() <= 0.0 {
            return Err(Error::domain(MODULE, "degenerate aperture: D = 0"));
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(Error::domain(MODULE, "aperture frequency must be positive"));
        }
        Ok(())
    }

    /// Maximum linear aperture D: the diagonal of the rectangle.
    pub fn max_dimension(&self) -> f64 {
        self.width.hypot(self.height)
    }

    /// Free-space wavelength c/f.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency
    }
}

/// Field region of an aperture antenna along its axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRegion {
    ReactiveNearField,
    RadiatingNearField,
    FarField,
}

impl FieldRegion {
    pub fn abbreviation(&self) -> &'static str {
        match self {
            FieldRegion::ReactiveNearField => "RNF",
            FieldRegion::RadiatingNearField => "RDNF",
            FieldRegion::FarField => "FF",
        }
    }
}

impl std::fmt::Display for FieldRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FieldRegion::ReactiveNearField => "reactive near field",
            FieldRegion::RadiatingNearField => "radiating near field",
            FieldRegion::FarField => "far field",
        };
        f.write_str(name)
    }
}

/// Outer bound 2D²/λ of the radiating near field.
pub fn rdnf_outer_bound(aperture: &AntennaAperture) -> Result<f64> {
    aperture.validate()?;
    let lambda = aperture.wavelength();
    if lambda <= 0.0 {
        return Err(Error::domain(MODULE, "wavelength must be positive"));
    }
    let d = aperture.max_dimension();
    Ok(2.0 * d * d / lambda)
}

/// Classifies the axial distance `z` (m). Boundaries belong to the farther region:
/// `z < λ` is reactive, `λ ≤ z < 2D²/λ` radiating, anything beyond is far field.
pub fn classify_region(z: f64, aperture: &AntennaAperture) -> Result<FieldRegion> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::domain(
            MODULE,
            format!("axial distance must be positive, got {z}"),
        ));
    }
    let outer = rdnf_outer_bound(aperture)?;
    let lambda = aperture.wavelength();
    Ok(if z < lambda {
        FieldRegion::ReactiveNearField
    } else if z < outer {
        FieldRegion::RadiatingNearField
    } else {
        FieldRegion::FarField
    })
}

fn check_dipole(dipole: f64) -> Result<()> {
    if !(dipole.is_finite() && dipole > 0.0) {
        return Err(Error::domain(
            MODULE,
            format!("dipole moment must be positive, got {dipole}"),
        ));
    }
    Ok(())
}

/// |E| = h·Δf/℘ in V/m for an Autler–Townes splitting `delta_f` in Hz.
pub fn at_splitting_to_field(delta_f: f64, dipole: f64) -> Result<f64> {
    check_dipole(dipole)?;
    if !(delta_f.is_finite() && delta_f >= 0.0) {
        return Err(Error::domain(
            MODULE,
            format!("splitting must be non-negative, got {delta_f}"),
        ));
    }
    Ok(PLANCK * delta_f / dipole)
}

/// Inverse of [`at_splitting_to_field`]: Δf = |E|·℘/h in Hz.
pub fn field_to_at_splitting(field: f64, dipole: f64) -> Result<f64> {
    check_dipole(dipole)?;
    if !(field.is_finite() && field >= 0.0) {
        return Err(Error::domain(
            MODULE,
            format!("field magnitude must be non-negative, got {field}"),
        ));
    }
    Ok(field * dipole / PLANCK)
}
