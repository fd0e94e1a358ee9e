//! Doppler-averaged EIT and EIT–Autler–Townes spectra for a four-level ladder
//! probed by a retro-reflected beam.
//!
//! The retro-reflected probe has a co-propagating and a counter-propagating
//! component relative to the coupling beam. Each component selects its own
//! velocity class, so a scan of the coupling detuning Δc0 shows two branches.
//!
//! The per-velocity signal is a factorized line shape:
//!
//! ```text
//! S(v; Δc0) = W(v) · L1(Δp(v); γp) · A(δ(v); γ2γ, Ω_RF)
//! ```
//!
//! with `W` the one-dimensional Maxwell–Boltzmann density, `L1` a peak-normalized
//! Lorentzian one-photon selection factor and `A` the area-normalized
//! Autler–Townes doublet kernel (two half-weight Lorentzians at δ = ±Ω_RF/2).
//! The spectrum is `Σ_branch weight · ∫ S dv` over ±5σ_v.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{WaveGeometry, BOLTZMANN, CESIUM_MASS};
use crate::quadrature::{self, Tolerance};

const MODULE: &str = "spectroscopy";

/// Schema tag of ladder configuration documents.
pub const LADDER_SCHEMA: &str = "rydscan-ladder-v1";

/// Velocity integration half-range in units of σ_v.
pub const VELOCITY_SPAN_SIGMAS: f64 = 5.0;
/// Relative tolerance of the velocity quadrature.
pub const QUADRATURE_REL_TOL: f64 = 1e-4;
/// Spectrum values are reported per MHz of coupling detuning.
const SIGNAL_SCALE: f64 = 1e6;

/// Probe component, named by its direction relative to the coupling beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Co,
    Ctr,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Co, Branch::Ctr];

    /// Signed probe wavenumber of this component (+k_p or −k_p).
    pub fn probe_wavenumber(self, geometry: &WaveGeometry) -> f64 {
        match self {
            Branch::Co => geometry.k_p(),
            Branch::Ctr => -geometry.k_p(),
        }
    }

    /// Effective two-photon wavenumber K: k_p + k_c (co) or k_c − k_p (ctr).
    pub fn two_photon_wavenumber(self, geometry: &WaveGeometry) -> f64 {
        self.probe_wavenumber(geometry) + geometry.k_c()
    }
}

/// Relative amplitudes of the two probe components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchWeights {
    pub co: f64,
    pub ctr: f64,
}

impl BranchWeights {
    pub fn get(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Co => self.co,
            Branch::Ctr => self.ctr,
        }
    }

    /// Only the counter-propagating component.
    pub fn ctr_only() -> Self {
        Self { co: 0.0, ctr: 1.0 }
    }
}

impl Default for BranchWeights {
    fn default() -> Self {
        Self { co: 1.0, ctr: 1.0 }
    }
}

/// Ladder parameters. Frequencies are ordinary frequencies in Hz.
///
/// The line-shape kernel uses the effective linewidths `gamma_p`/`gamma_2g`
/// and `omega_rf`; the decay rates and optical Rabi frequencies are carried
/// as part of the configuration snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub geometry: WaveGeometry,
    #[serde(rename = "delta_p0_hz")]
    pub delta_p0: f64,
    /// Effective one-photon linewidth (HWHM).
    #[serde(rename = "gamma_p_hz")]
    pub gamma_p: f64,
    /// Effective two-photon linewidth (HWHM).
    #[serde(rename = "gamma_2g_hz")]
    pub gamma_2g: f64,
    #[serde(rename = "gamma_e_hz")]
    pub gamma_e: f64,
    #[serde(rename = "gamma_r_hz")]
    pub gamma_r: f64,
    #[serde(rename = "omega_p_hz")]
    pub omega_p: f64,
    #[serde(rename = "omega_c_hz")]
    pub omega_c: f64,
    /// Microwave Rabi frequency; equals the AT splitting Δf in this model.
    #[serde(rename = "omega_rf_hz")]
    pub omega_rf: f64,
    #[serde(rename = "temperature_k")]
    pub temperature: f64,
    #[serde(rename = "atomic_mass_kg")]
    pub atomic_mass: f64,
    pub branch_weights: BranchWeights,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            geometry: WaveGeometry::cesium(),
            delta_p0: 80e6,
            gamma_p: 5.2e6,
            gamma_2g: 1.5e6,
            gamma_e: 5.2e6,
            gamma_r: 0.01e6,
            omega_p: 1.0e6,
            omega_c: 5.0e6,
            omega_rf: 0.0,
            temperature: 300.0,
            atomic_mass: CESIUM_MASS,
            branch_weights: BranchWeights::default(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LadderDocument {
    schema: String,
    #[serde(flatten)]
    config: LadderConfig,
}

impl LadderConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let positive = [
            ("gamma_p_hz", self.gamma_p),
            ("gamma_2g_hz", self.gamma_2g),
            ("gamma_e_hz", self.gamma_e),
            ("gamma_r_hz", self.gamma_r),
            ("omega_p_hz", self.omega_p),
            ("omega_c_hz", self.omega_c),
            ("temperature_k", self.temperature),
            ("atomic_mass_kg", self.atomic_mass),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::domain(
                    MODULE,
                    format!("{name} must be positive, got {value}"),
                ));
            }
        }
        if !(self.omega_rf.is_finite() && self.omega_rf >= 0.0) {
            return Err(Error::domain(
                MODULE,
                format!("omega_rf_hz must be non-negative, got {}", self.omega_rf),
            ));
        }
        if !self.delta_p0.is_finite() {
            return Err(Error::domain(MODULE, "delta_p0_hz must be finite"));
        }
        let w = self.branch_weights;
        if !(w.co.is_finite() && w.ctr.is_finite() && w.co >= 0.0 && w.ctr >= 0.0) {
            return Err(Error::domain(MODULE, "branch_weights must be non-negative"));
        }
        if w.co == 0.0 && w.ctr == 0.0 {
            return Err(Error::domain(
                MODULE,
                "branch_weights must not both be zero",
            ));
        }
        Ok(())
    }

    /// One-dimensional thermal velocity spread σ_v = sqrt(k_B·T/m).
    pub fn velocity_spread(&self) -> f64 {
        (BOLTZMANN * self.temperature / self.atomic_mass).sqrt()
    }

    pub fn with_omega_rf(mut self, omega_rf: f64) -> Self {
        self.omega_rf = omega_rf;
        self
    }

    pub fn with_delta_p0(mut self, delta_p0: f64) -> Self {
        self.delta_p0 = delta_p0;
        self
    }

    pub fn to_json(&self) -> String {
        let doc = LadderDocument {
            schema: LADDER_SCHEMA.to_string(),
            config: *self,
        };
        serde_json::to_string_pretty(&doc).expect("ladder config serializes")
    }

    /// Parses and validates a ladder document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LadderDocument = serde_json::from_str(text)
            .map_err(|e| Error::parse("ladder config", e.line(), e.to_string()))?;
        if doc.schema != LADDER_SCHEMA {
            return Err(Error::parse(
                "ladder config",
                0,
                format!("schema must be \"{LADDER_SCHEMA}\", got \"{}\"", doc.schema),
            ));
        }
        doc.config.validate()?;
        Ok(doc.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => {
                Error::parse(path.display().to_string(), line, message)
            }
            other => other,
        })
    }
}

/// Doppler-shifted (probe, coupling) detunings seen by an atom moving at `v`.
pub fn doppler_detunings(
    v: f64,
    delta_p0: f64,
    delta_c0: f64,
    geometry: &WaveGeometry,
    branch: Branch,
) -> (f64, f64) {
    let delta_p = delta_p0 - branch.probe_wavenumber(geometry) * v;
    let delta_c = delta_c0 - geometry.k_c() * v;
    (delta_p, delta_c)
}

/// Two-photon detuning in the atomic frame, (Δp0 + Δc0) − K·v.
pub fn two_photon_detuning(
    v: f64,
    delta_p0: f64,
    delta_c0: f64,
    geometry: &WaveGeometry,
    branch: Branch,
) -> f64 {
    (delta_p0 + delta_c0) - branch.two_photon_wavenumber(geometry) * v
}

/// Velocity at which the branch's one-photon detuning vanishes: ±Δp0/k_p.
pub fn probe_selected_velocity(delta_p0: f64, geometry: &WaveGeometry, branch: Branch) -> f64 {
    delta_p0 / branch.probe_wavenumber(geometry)
}

/// Positions (co, ctr) of the two branches on the Δc0 axis: ±(k_c/k_p)·Δp0.
pub fn branch_positions(delta_p0: f64, geometry: &WaveGeometry) -> (f64, f64) {
    let ratio = geometry.k_c() / geometry.k_p();
    (ratio * delta_p0, -ratio * delta_p0)
}

fn nonzero_wavenumber(geometry: &WaveGeometry, branch: Branch) -> Result<f64> {
    let k = branch.two_photon_wavenumber(geometry);
    // equal wavelengths give K_ctr = 1/λ − 1/λ, which may round to a tiny residue
    if k.abs() <= 1e-12 * (geometry.k_p() + geometry.k_c()) {
        return Err(Error::domain(
            MODULE,
            format!("two-photon wavenumber of the {branch:?} branch vanishes"),
        ));
    }
    Ok(k)
}

/// Characteristic velocity width γ2γ/|K| of a branch.
pub fn velocity_acceptance(gamma_2g: f64, geometry: &WaveGeometry, branch: Branch) -> Result<f64> {
    if !(gamma_2g.is_finite() && gamma_2g > 0.0) {
        return Err(Error::domain(MODULE, "gamma_2g must be positive"));
    }
    Ok(gamma_2g / nonzero_wavenumber(geometry, branch)?.abs())
}

/// Resonant velocity (Δp0 + Δc0)/K for a coupling detuning, and its slope 1/K.
pub fn resonant_velocity(
    delta_p0: f64,
    delta_c0: f64,
    geometry: &WaveGeometry,
    branch: Branch,
) -> Result<(f64, f64)> {
    let k = nonzero_wavenumber(geometry, branch)?;
    Ok(((delta_p0 + delta_c0) / k, 1.0 / k))
}

/// Lorentzian-convolution estimate of a branch's half width on the Δc0 axis:
/// γp·|K|/k_p + γ2γ. Ignores the curvature of the velocity distribution.
pub fn branch_half_width(config: &LadderConfig, branch: Branch) -> f64 {
    let g = &config.geometry;
    config.gamma_p * branch.two_photon_wavenumber(g).abs() / g.k_p() + config.gamma_2g
}

/// One-dimensional Maxwell–Boltzmann velocity density in s/m.
pub fn maxwell_boltzmann(v: f64, sigma_v: f64) -> f64 {
    let x = v / sigma_v;
    (-0.5 * x * x).exp() / ((2.0 * PI).sqrt() * sigma_v)
}

/// Peak-normalized Lorentzian one-photon selection factor.
#[inline]
fn selection(delta_p: f64, gamma_p: f64) -> f64 {
    let g2 = gamma_p * gamma_p;
    g2 / (delta_p * delta_p + g2)
}

#[inline]
fn lorentzian(x: f64, gamma: f64) -> f64 {
    (gamma / PI) / (x * x + gamma * gamma)
}

/// Autler–Townes doublet kernel in 1/Hz: a single normalized Lorentzian for
/// Ω_RF = 0, otherwise two half-weight Lorentzians at δ = ±Ω_RF/2.
pub fn at_doublet_kernel(delta: f64, gamma_2g: f64, omega_rf: f64) -> f64 {
    if omega_rf == 0.0 {
        lorentzian(delta, gamma_2g)
    } else {
        let half = 0.5 * omega_rf;
        0.5 * (lorentzian(delta - half, gamma_2g) + lorentzian(delta + half, gamma_2g))
    }
}

/// Velocity-resolved signal density of one branch.
pub fn eit_signal_at(v: f64, delta_c0: f64, config: &LadderConfig, branch: Branch) -> f64 {
    let g = &config.geometry;
    let (delta_p, _) = doppler_detunings(v, config.delta_p0, delta_c0, g, branch);
    let delta = two_photon_detuning(v, config.delta_p0, delta_c0, g, branch);
    maxwell_boltzmann(v, config.velocity_spread())
        * selection(delta_p, config.gamma_p)
        * at_doublet_kernel(delta, config.gamma_2g, config.omega_rf)
}

/// EIT trace versus scanned coupling detuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub delta_c0: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: LadderConfig,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::domain(
            MODULE,
            format!("grid needs at least 3 points, got {}", grid.len()),
        ));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(MODULE, "grid contains non-finite values"));
    }
    if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::domain(
            MODULE,
            format!("grid not strictly increasing at index {}", i + 1),
        ));
    }
    Ok(())
}

impl Spectrum {
    pub fn new(delta_c0: Vec<f64>, values: Vec<f64>, meta: LadderConfig) -> Result<Self> {
        check_grid(&delta_c0)?;
        if values.len() != delta_c0.len() {
            return Err(Error::domain(MODULE, "grid and values differ in length"));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain(
                MODULE,
                format!("value at index {i} is negative or non-finite"),
            ));
        }
        Ok(Self {
            delta_c0,
            values,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Samples with `lo <= Δc0 <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        self.delta_c0
            .iter()
            .zip(&self.values)
            .filter(|(x, _)| **x >= lo && **x <= hi)
            .map(|(x, y)| (*x, *y))
            .unzip()
    }

    /// Trapezoidal area under the trace.
    pub fn area(&self) -> f64 {
        self.delta_c0
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta_c0_hz,value\n");
        for (x, y) in self.delta_c0.iter().zip(&self.values) {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, meta: LadderConfig, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "delta_c0_hz,value" => {}
            _ => {
                return Err(Error::parse(
                    source_name,
                    1,
                    "expected header `delta_c0_hz,value`",
                ))
            }
        }
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let (Some(x), Some(y), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(source_name, i + 1, "expected two columns"));
            };
            let x: f64 = x
                .trim()
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, "bad delta_c0_hz"))?;
            let y: f64 = y
                .trim()
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, "bad value"))?;
            grid.push(x);
            values.push(y);
        }
        Self::new(grid, values, meta)
    }

    /// Path of the JSON sidecar that accompanies a spectrum CSV.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes the CSV and its ladder-config sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        write_file(csv_path, self.to_csv().as_bytes())?;
        let sidecar = Self::sidecar_path(csv_path);
        write_file(&sidecar, self.meta.to_json().as_bytes())
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta = LadderConfig::load(&Self::sidecar_path(csv_path))?;
        let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Self::from_csv(&text, meta, &csv_path.display().to_string())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Evenly spaced grid from `lo` to `hi` inclusive with the given step.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi > lo && step.is_finite() && lo.is_finite() && hi.is_finite()) {
        return Err(Error::domain(
            MODULE,
            "grid needs lo < hi and a positive step",
        ));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

fn integrate_branch(
    config: &LadderConfig,
    branch: Branch,
    delta_c0: f64,
    sigma_v: f64,
) -> Result<f64, f64> {
    let g = &config.geometry;
    let span = VELOCITY_SPAN_SIGMAS * sigma_v;
    let k = branch.two_photon_wavenumber(g);
    let v_sel = probe_selected_velocity(config.delta_p0, g, branch);
    let w_sel = config.gamma_p / g.k_p();

    let mut breaks = vec![v_sel - 3.0 * w_sel, v_sel, v_sel + 3.0 * w_sel];
    if k != 0.0 {
        let w_two = config.gamma_2g / k.abs();
        let offsets: &[f64] = if config.omega_rf == 0.0 {
            &[0.0]
        } else {
            &[-0.5, 0.5]
        };
        for o in offsets {
            let v_res = (config.delta_p0 + delta_c0 - o * config.omega_rf) / k;
            breaks.extend([v_res - 3.0 * w_two, v_res, v_res + 3.0 * w_two]);
        }
    }

    // absolute floor: 1e-10 of the largest attainable branch signal
    let ceiling = maxwell_boltzmann(0.0, sigma_v) * w_sel / config.gamma_2g;
    let tol = Tolerance {
        rel: QUADRATURE_REL_TOL,
        abs: 1e-10 * ceiling,
        max_intervals: 4000,
    };
    quadrature::integrate(
        |v| eit_signal_at(v, delta_c0, config, branch),
        -span,
        span,
        &breaks,
        tol,
    )
    .map(|e| e.value)
    .map_err(|e| e.error / e.value.abs().max(f64::MIN_POSITIVE))
}

/// Synthesizes the Doppler-averaged spectrum on `grid`.
///
/// Grid points are evaluated in parallel; each point is independent, so the
/// output is bit-identical for a given configuration and grid.
pub fn synthesize_spectrum(config: &LadderConfig, grid: &[f64]) -> Result<Spectrum> {
    config.validate()?;
    check_grid(grid)?;
    let sigma_v = config.velocity_spread();
    let points: Vec<Result<f64, f64>> = grid
        .par_iter()
        .map(|&dc0| {
            let mut total = 0.0;
            for branch in Branch::BOTH {
                let weight = config.branch_weights.get(branch);
                if weight == 0.0 {
                    continue;
                }
                total += weight * integrate_branch(config, branch, dc0, sigma_v)?;
            }
            Ok(total * SIGNAL_SCALE)
        })
        .collect();

    let mut worst: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Err(rel) = p {
            if worst.is_none_or(|(_, w)| *rel > w) {
                worst = Some((i, *rel));
            }
        }
    }
    if let Some((i, rel)) = worst {
        return Err(Error::numeric(
            MODULE,
            format!(
                "velocity quadrature did not converge; worst grid point {i} (delta_c0 = {} Hz, relative error {rel:.3e})",
                grid[i]
            ),
        ));
    }
    let values = points
        .into_iter()
        .map(|p| p.unwrap_or_default().max(0.0))
        .collect();
    Spectrum::new(grid.to_vec(), values, *config)
}
