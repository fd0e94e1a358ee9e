//! Synthetic microwave scenes: a horn aperture near field, point radiators
//! (wire tips), an occluding tag and a perturbing probe.
//!
//! Fields are complex scalars in arbitrary units. A scene sums all radiating
//! elements coherently, then applies the modifiers (tag, probe) in list order.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::physics::SPEED_OF_LIGHT;

const MODULE: &str = "sources";

pub const SCENE_SCHEMA: &str = "rydscan-scene-v1";
/// Lower bound on the probe re-radiation distance, in wavelengths.
pub const PROBE_GUARD_WAVELENGTHS: f64 = 1.0 / 20.0;
/// Width of the tag's linear edge ramp, in wavelengths.
pub const TAG_EDGE_WAVELENGTHS: f64 = 1.0 / 10.0;
pub const MIN_SAMPLES_PER_WAVELENGTH: f64 = 8.0;
pub const DEFAULT_SAMPLES_PER_WAVELENGTH: f64 = 16.0;
/// Point-radiator distances are clamped to this value to keep the field finite.
const MIN_RADIATOR_DISTANCE: f64 = 1e-9;

pub type Point3 = [f64; 3];

fn distance(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// In-plane axis of the aperture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApertureAxis {
    X,
    Y,
}

/// Rectangular horn mouth in a plane facing +Z, with a cosine amplitude
/// taper across `width` (measured along `taper_axis`) and uniform
/// illumination across `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HornAperture {
    pub center: Point3,
    pub width: f64,
    pub height: f64,
    pub amplitude: f64,
    pub taper_axis: ApertureAxis,
    /// Rotation of the aperture about the X axis; positive tips the beam toward −Y.
    pub tilt: f64,
    pub samples_per_wavelength: f64,
}

impl HornAperture {
    /// 138 mm × 107 mm horn centered at the origin, tapered along Y.
    pub fn standard() -> Self {
        Self {
            center: [0.0; 3],
            width: 0.138,
            height: 0.107,
            amplitude: 1.0,
            taper_axis: ApertureAxis::Y,
            tilt: 0.0,
            samples_per_wavelength: DEFAULT_SAMPLES_PER_WAVELENGTH,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0
            && self.height > 0.0
            && self.width.is_finite()
            && self.height.is_finite())
        {
            return Err(Error::domain(
                MODULE,
                "horn width and height must be positive",
            ));
        }
        if !self.amplitude.is_finite()
            || !self.tilt.is_finite()
            || self.center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::domain(MODULE, "horn parameters must be finite"));
        }
        if !(self.samples_per_wavelength >= MIN_SAMPLES_PER_WAVELENGTH) {
            return Err(Error::domain(
                MODULE,
                format!("horn quadrature needs at least {MIN_SAMPLES_PER_WAVELENGTH} samples per wavelength"),
            ));
        }
        Ok(())
    }

    fn normal(&self) -> Point3 {
        [0.0, -self.tilt.sin(), self.tilt.cos()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRadiator {
    pub position: Point3,
    pub amplitude: Complex64,
}

/// Thin planar obstacle parallel to the scan plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccludingTag {
    pub center: Point3,
    pub width: f64,
    pub height: f64,
    /// Fraction of the field magnitude passed inside the outline.
    pub transmission: f64,
}

/// Induced point re-radiator with effective scattering length `strength` (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbingProbe {
    pub position: Point3,
    pub strength: f64,
    /// When set, `position` is an offset from the evaluation point, so the
    /// scatterer travels with the scan head.
    pub follows_scan: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceElement {
    Horn(HornAperture),
    PointRadiator(PointRadiator),
    OccludingTag(OccludingTag),
    PerturbingProbe(PerturbingProbe),
}

impl SourceElement {
    fn is_radiator(&self) -> bool {
        matches!(
            self,
            SourceElement::Horn(_) | SourceElement::PointRadiator(_)
        )
    }
}

/// Precomputed midpoint-rule samples of one aperture.
#[derive(Debug, Clone)]
struct ApertureSamples {
    points: Vec<Point3>,
    /// amplitude · dS / (2π)
    weights: Vec<f64>,
    normal: Point3,
    center: Point3,
}

impl ApertureSamples {
    fn new(horn: &HornAperture, wavelength: f64) -> Self {
        let n_w = (horn.width / wavelength * horn.samples_per_wavelength)
            .ceil()
            .max(1.0) as usize;
        let n_h = (horn.height / wavelength * horn.samples_per_wavelength)
            .ceil()
            .max(1.0) as usize;
        let (dw, dh) = (horn.width / n_w as f64, horn.height / n_h as f64);
        let (c, s) = (horn.tilt.cos(), horn.tilt.sin());
        let ex = [1.0, 0.0, 0.0];
        let ey = [0.0, c, s];
        let (taper_dir, uniform_dir) = match horn.taper_axis {
            ApertureAxis::X => (ex, ey),
            ApertureAxis::Y => (ey, ex),
        };
        let mut points = Vec::with_capacity(n_w * n_h);
        let mut weights = Vec::with_capacity(n_w * n_h);
        let scale = horn.amplitude * dw * dh / (2.0 * PI);
        for i in 0..n_w {
            let t = -0.5 * horn.width + (i as f64 + 0.5) * dw;
            let taper = (PI * t / horn.width).cos();
            for j in 0..n_h {
                let u = -0.5 * horn.height + (j as f64 + 0.5) * dh;
                points.push(std::array::from_fn(|k| {
                    horn.center[k] + t * taper_dir[k] + u * uniform_dir[k]
                }));
                weights.push(scale * taper);
            }
        }
        Self {
            points,
            weights,
            normal: horn.normal(),
            center: horn.center,
        }
    }

    fn field(&self, p: Point3, k: f64) -> Result<Complex64> {
        let axial: f64 = (0..3)
            .map(|i| (p[i] - self.center[i]) * self.normal[i])
            .sum();
        if !(axial > 0.0) {
            return Err(Error::domain(
                MODULE,
                format!(
                    "point lies on or behind the horn aperture plane (axial distance {axial} m)"
                ),
            ));
        }
        let mut sum = Complex64::new(0.0, 0.0);
        for (q, &w) in self.points.iter().zip(&self.weights) {
            let r = distance(p, *q);
            let cos_theta = axial / r;
            // (1/R − ik)·e^{ikR}/R
            let phase = Complex64::from_polar(1.0, k * r);
            sum += phase * Complex64::new(1.0 / r, -k) * (w * cos_theta / r);
        }
        Ok(sum)
    }
}

/// Scalar Rayleigh–Sommerfeld field of a horn aperture at `point`.
pub fn horn_field(point: Point3, horn: &HornAperture, wavelength: f64) -> Result<Complex64> {
    horn.validate()?;
    check_wavelength(wavelength)?;
    ApertureSamples::new(horn, wavelength).field(point, 2.0 * PI / wavelength)
}

fn check_wavelength(wavelength: f64) -> Result<()> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::domain(MODULE, "wavelength must be positive"));
    }
    Ok(())
}

/// Outgoing spherical wave A·e^{ikr}/r.
pub fn point_radiator_field(point: Point3, radiator: &PointRadiator, wavelength: f64) -> Complex64 {
    let r = distance(point, radiator.position).max(MIN_RADIATOR_DISTANCE);
    radiator.amplitude * Complex64::from_polar(1.0 / r, 2.0 * PI * r / wavelength)
}

/// Two unit radiators at `center ± (separation/2, 0, 0)`.
pub fn wire_tips(center: Point3, separation: f64) -> [PointRadiator; 2] {
    let at = |dx: f64| PointRadiator {
        position: [center[0] + dx, center[1], center[2]],
        amplitude: Complex64::new(1.0, 0.0),
    };
    [at(-0.5 * separation), at(0.5 * separation)]
}

/// Field magnitude of an equal-amplitude wire-tip pair.
pub fn wire_pair_field(point: Point3, separation: f64, center: Point3, wavelength: f64) -> f64 {
    wire_tips(center, separation)
        .iter()
        .map(|r| point_radiator_field(point, r, wavelength))
        .sum::<Complex64>()
        .norm()
}

fn ramp(inside_distance: f64, width: f64) -> f64 {
    (inside_distance / width + 0.5).clamp(0.0, 1.0)
}

/// Multiplicative shadow factor of a tag at `point`: `transmission` deep
/// inside the outline, 1 well outside, linear across a λ/10 edge centered
/// on the outline. Points not beyond the tag plane are unaffected.
pub fn tag_factor(point: Point3, tag: &OccludingTag, wavelength: f64) -> f64 {
    if point[2] <= tag.center[2] {
        return 1.0;
    }
    let edge = TAG_EDGE_WAVELENGTHS * wavelength;
    let sx = ramp(0.5 * tag.width - (point[0] - tag.center[0]).abs(), edge);
    let sy = ramp(0.5 * tag.height - (point[1] - tag.center[1]).abs(), edge);
    tag.transmission + (1.0 - tag.transmission) * (1.0 - sx * sy)
}

/// Wraps a field function with a tag shadow.
pub fn apply_tag<F>(field: F, tag: OccludingTag, wavelength: f64) -> impl Fn(Point3) -> Complex64
where
    F: Fn(Point3) -> Complex64,
{
    move |p| field(p) * tag_factor(p, &tag, wavelength)
}

fn probe_anchor(point: Point3, probe: &PerturbingProbe) -> Point3 {
    if probe.follows_scan {
        std::array::from_fn(|i| point[i] + probe.position[i])
    } else {
        probe.position
    }
}

fn perturbed(
    point: Point3,
    at_point: Complex64,
    at_probe: Complex64,
    probe: &PerturbingProbe,
    wavelength: f64,
) -> Complex64 {
    if probe.strength == 0.0 {
        return at_point;
    }
    let d = distance(point, probe_anchor(point, probe));
    let guarded = d.max(PROBE_GUARD_WAVELENGTHS * wavelength);
    at_point + at_probe * Complex64::from_polar(probe.strength / guarded, 2.0 * PI * d / wavelength)
}

/// Adds the probe's re-radiated wave to a field function.
pub fn apply_probe_perturbation<F>(
    field: F,
    probe: PerturbingProbe,
    wavelength: f64,
) -> impl Fn(Point3) -> Complex64
where
    F: Fn(Point3) -> Complex64,
{
    move |p| {
        let at_probe = if probe.strength == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            field(probe_anchor(p, &probe))
        };
        perturbed(p, field(p), at_probe, &probe, wavelength)
    }
}

/// A composable microwave scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frequency: f64,
    pub elements: Vec<SourceElement>,
}

impl Scene {
    pub fn new(frequency: f64, elements: Vec<SourceElement>) -> Result<Self> {
        let scene = Self {
            frequency,
            elements,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::domain(MODULE, "scene frequency must be positive"));
        }
        if !self.elements.iter().any(SourceElement::is_radiator) {
            return Err(Error::domain(
                MODULE,
                "scene needs at least one radiating element",
            ));
        }
        for (i, e) in self.elements.iter().enumerate() {
            let bad = |msg: &str| Err(Error::domain(MODULE, format!("element {i}: {msg}")));
            match e {
                SourceElement::Horn(h) => h
                    .validate()
                    .map_err(|err| Error::domain(MODULE, format!("element {i}: {err}")))?,
                SourceElement::PointRadiator(r) => {
                    if r.position.iter().any(|c| !c.is_finite())
                        || !r.amplitude.re.is_finite()
                        || !r.amplitude.im.is_finite()
                    {
                        return bad("radiator parameters must be finite");
                    }
                }
                SourceElement::OccludingTag(t) => {
                    if !(t.width > 0.0 && t.height > 0.0) {
                        return bad("tag width and height must be positive");
                    }
                    if !(0.0..=1.0).contains(&t.transmission) {
                        return bad("tag transmission must lie in [0, 1]");
                    }
                }
                SourceElement::PerturbingProbe(p) => {
                    if !(p.strength >= 0.0 && p.strength.is_finite()) {
                        return bad("probe strength must be non-negative");
                    }
                }
            }
        }
        Ok(())
    }

    /// Precomputes aperture samples for repeated evaluation.
    pub fn prepare(&self) -> Result<PreparedScene<'_>> {
        self.validate()?;
        let wavelength = self.wavelength();
        let apertures = self
            .elements
            .iter()
            .map(|e| match e {
                SourceElement::Horn(h) => Some(ApertureSamples::new(h, wavelength)),
                _ => None,
            })
            .collect();
        Ok(PreparedScene {
            scene: self,
            apertures,
            wavelength,
            k: 2.0 * PI / wavelength,
        })
    }

    /// Complex field at one point. Prefer [`Scene::prepare`] for many points.
    pub fn field(&self, point: Point3) -> Result<Complex64> {
        self.prepare()?.field(point)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SceneDocument::from(self)).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SceneDocument = serde_json::from_str(text)
            .map_err(|e| Error::parse("scene", e.line(), e.to_string()))?;
        if doc.schema != SCENE_SCHEMA {
            return Err(Error::parse(
                "scene",
                0,
                format!("schema must be \"{SCENE_SCHEMA}\", got \"{}\"", doc.schema),
            ));
        }
        Scene::new(
            doc.frequency_ghz * 1e9,
            doc.elements.into_iter().map(Into::into).collect(),
        )
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

    /// Hex SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Standard horn alone at the given frequency.
    pub fn horn(frequency: f64) -> Self {
        Self {
            frequency,
            elements: vec![SourceElement::Horn(HornAperture::standard())],
        }
    }

    /// Two wire tips at height `tip_z`, centered on the origin.
    pub fn dual_wire(frequency: f64, separation: f64, tip_z: f64) -> Self {
        Self {
            frequency,
            elements: wire_tips([0.0, 0.0, tip_z], separation)
                .into_iter()
                .map(SourceElement::PointRadiator)
                .collect(),
        }
    }

    pub fn with_element(mut self, element: SourceElement) -> Self {
        self.elements.push(element);
        self
    }

    /// The same scene with every perturbing probe removed.
    pub fn without_probes(&self) -> Self {
        Self {
            frequency: self.frequency,
            elements: self
                .elements
                .iter()
                .filter(|e| !matches!(e, SourceElement::PerturbingProbe(_)))
                .copied()
                .collect(),
        }
    }

    /// The same scene with every tag removed.
    pub fn without_tags(&self) -> Self {
        Self {
            frequency: self.frequency,
            elements: self
                .elements
                .iter()
                .filter(|e| !matches!(e, SourceElement::OccludingTag(_)))
                .copied()
                .collect(),
        }
    }
}

/// Scene with cached aperture quadrature.
#[derive(Debug, Clone)]
pub struct PreparedScene<'a> {
    scene: &'a Scene,
    apertures: Vec<Option<ApertureSamples>>,
    wavelength: f64,
    k: f64,
}

impl PreparedScene<'_> {
    pub fn field(&self, point: Point3) -> Result<Complex64> {
        self.field_through(point, self.scene.elements.len())
    }

    pub fn magnitude(&self, point: Point3) -> Result<f64> {
        Ok(self.field(point)?.norm())
    }

    /// Radiator sum, then the modifiers among the first `upto` elements.
    fn field_through(&self, point: Point3, upto: usize) -> Result<Complex64> {
        let mut total = Complex64::new(0.0, 0.0);
        for (e, ap) in self.scene.elements.iter().zip(&self.apertures) {
            match (e, ap) {
                (SourceElement::Horn(_), Some(samples)) => total += samples.field(point, self.k)?,
                (SourceElement::PointRadiator(r), _) => {
                    total += point_radiator_field(point, r, self.wavelength)
                }
                _ => {}
            }
        }
        for (i, e) in self.scene.elements[..upto].iter().enumerate() {
            match e {
                SourceElement::OccludingTag(t) => total *= tag_factor(point, t, self.wavelength),
                SourceElement::PerturbingProbe(p) if p.strength > 0.0 => {
                    let at_probe = self.field_through(probe_anchor(point, p), i)?;
                    total = perturbed(point, total, at_probe, p, self.wavelength);
                }
                _ => {}
            }
        }
        Ok(total)
    }
}

// ---- scene document (mm / GHz) ----

#[derive(Serialize, Deserialize)]
struct SceneDocument {
    schema: String,
    frequency_ghz: f64,
    elements: Vec<ElementDocument>,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_taper_axis() -> ApertureAxis {
    ApertureAxis::Y
}

fn default_spw() -> f64 {
    DEFAULT_SAMPLES_PER_WAVELENGTH
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ElementDocument {
    Horn {
        center_mm: Point3,
        width_mm: f64,
        height_mm: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_taper_axis")]
        taper_axis: ApertureAxis,
        #[serde(default)]
        tilt_deg: f64,
        #[serde(default = "default_spw")]
        samples_per_wavelength: f64,
    },
    PointRadiator {
        position_mm: Point3,
        /// [real, imaginary]
        amplitude: [f64; 2],
    },
    OccludingTag {
        center_mm: Point3,
        width_mm: f64,
        height_mm: f64,
        transmission: f64,
    },
    PerturbingProbe {
        position_mm: Point3,
        strength_mm: f64,
        #[serde(default)]
        follows_scan: bool,
    },
}

fn to_m(p: Point3) -> Point3 {
    p.map(|v| v / 1e3)
}

fn to_mm(p: Point3) -> Point3 {
    p.map(|v| v * 1e3)
}

impl From<ElementDocument> for SourceElement {
    fn from(doc: ElementDocument) -> Self {
        match doc {
            ElementDocument::Horn {
                center_mm,
                width_mm,
                height_mm,
                amplitude,
                taper_axis,
                tilt_deg,
                samples_per_wavelength,
            } => SourceElement::Horn(HornAperture {
                center: to_m(center_mm),
                width: width_mm / 1e3,
                height: height_mm / 1e3,
                amplitude,
                taper_axis,
                tilt: tilt_deg.to_radians(),
                samples_per_wavelength,
            }),
            ElementDocument::PointRadiator {
                position_mm,
                amplitude,
            } => SourceElement::PointRadiator(PointRadiator {
                position: to_m(position_mm),
                amplitude: Complex64::new(amplitude[0], amplitude[1]),
            }),
            ElementDocument::OccludingTag {
                center_mm,
                width_mm,
                height_mm,
                transmission,
            } => SourceElement::OccludingTag(OccludingTag {
                center: to_m(center_mm),
                width: width_mm / 1e3,
                height: height_mm / 1e3,
                transmission,
            }),
            ElementDocument::PerturbingProbe {
                position_mm,
                strength_mm,
                follows_scan,
            } => SourceElement::PerturbingProbe(PerturbingProbe {
                position: to_m(position_mm),
                strength: strength_mm / 1e3,
                follows_scan,
            }),
        }
    }
}

impl From<&SourceElement> for ElementDocument {
    fn from(e: &SourceElement) -> Self {
        match *e {
            SourceElement::Horn(h) => ElementDocument::Horn {
                center_mm: to_mm(h.center),
                width_mm: h.width * 1e3,
                height_mm: h.height * 1e3,
                amplitude: h.amplitude,
                taper_axis: h.taper_axis,
                tilt_deg: h.tilt.to_degrees(),
                samples_per_wavelength: h.samples_per_wavelength,
            },
            SourceElement::PointRadiator(r) => ElementDocument::PointRadiator {
                position_mm: to_mm(r.position),
                amplitude: [r.amplitude.re, r.amplitude.im],
            },
            SourceElement::OccludingTag(t) => ElementDocument::OccludingTag {
                center_mm: to_mm(t.center),
                width_mm: t.width * 1e3,
                height_mm: t.height * 1e3,
                transmission: t.transmission,
            },
            SourceElement::PerturbingProbe(p) => ElementDocument::PerturbingProbe {
                position_mm: to_mm(p.position),
                strength_mm: p.strength * 1e3,
                follows_scan: p.follows_scan,
            },
        }
    }
}

impl From<&Scene> for SceneDocument {
    fn from(s: &Scene) -> Self {
        Self {
            schema: SCENE_SCHEMA.to_string(),
            frequency_ghz: s.frequency * 1e-9,
            elements: s.elements.iter().map(Into::into).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::physics::MICROWAVE_FREQUENCY;

    fn lambda() -> f64 {
        SPEED_OF_LIGHT / MICROWAVE_FREQUENCY
    }

    fn local_maxima(values: &[f64]) -> Vec<usize> {
        (1..values.len() - 1)
            .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
            .collect()
    }

    #[test]
    fn horn_is_symmetric_about_its_axis() {
        let horn = HornAperture::standard();
        let z = 0.05;
        for d in [0.003, 0.011, 0.027, 0.05] {
            for y in [0.0, 0.02] {
                let a = horn_field([d, y, z], &horn, lambda()).unwrap().norm();
                let b = horn_field([-d, y, z], &horn, lambda()).unwrap().norm();
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn horn_near_field_has_main_and_side_lobes_along_x() {
        let horn = HornAperture::standard();
        let z = 0.5 * lambda();
        let xs: Vec<f64> = (-100..=100).map(|i| i as f64 * 1e-3).collect();
        let profile: Vec<f64> = xs
            .iter()
            .map(|&x| horn_field([x, 0.0, z], &horn, lambda()).unwrap().norm())
            .collect();
        let peaks = local_maxima(&profile);
        assert!(
            peaks.len() >= 3,
            "maxima at {:?}",
            peaks.iter().map(|&i| xs[i]).collect::<Vec<_>>()
        );
        assert!(peaks.iter().any(|&i| xs[i].abs() < 1.5e-3));
        assert!(peaks.iter().filter(|&&i| xs[i] < -1e-3).count() >= 1);
        assert!(peaks.iter().filter(|&&i| xs[i] > 1e-3).count() >= 1);
    }

    #[test]
    fn horn_amplitude_is_linear() {
        let mut horn = HornAperture::standard();
        let p = [0.01, -0.02, 0.07];
        let a = horn_field(p, &horn, lambda()).unwrap();
        horn.amplitude = 2.0;
        let b = horn_field(p, &horn, lambda()).unwrap();
        assert_relative_eq!(b.norm(), 2.0 * a.norm(), max_relative = 1e-12);
    }

    #[test]
    fn horn_rejects_points_at_or_behind_the_aperture() {
        let horn = HornAperture::standard();
        assert!(horn_field([0.0, 0.0, 0.0], &horn, lambda()).is_err());
        assert!(horn_field([0.0, 0.0, -0.01], &horn, lambda()).is_err());
        let mut coarse = horn;
        coarse.samples_per_wavelength = 4.0;
        assert!(horn_field([0.0, 0.0, 0.02], &coarse, lambda()).is_err());
    }

    #[test]
    fn horn_quadrature_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0104_0001);
        let base = HornAperture::standard();
        let fine = HornAperture {
            samples_per_wavelength: 2.0 * base.samples_per_wavelength,
            ..base
        };
        let (coarse_s, fine_s) = (
            ApertureSamples::new(&base, lambda()),
            ApertureSamples::new(&fine, lambda()),
        );
        let k = 2.0 * PI / lambda();
        for _ in 0..100 {
            let p = [
                rng.random_range(-0.06..0.06),
                rng.random_range(-0.07..0.07),
                rng.random_range(0.0175..0.1235),
            ];
            let a = coarse_s.field(p, k).unwrap().norm();
            let b = fine_s.field(p, k).unwrap().norm();
            assert!((a / b - 1.0).abs() < 5e-3, "at {p:?}: {a} vs {b}");
        }
    }

    #[test]
    fn tilt_breaks_vertical_symmetry() {
        let mut horn = HornAperture::standard();
        horn.tilt = 5f64.to_radians();
        let up = horn_field([0.0, 0.03, 0.07], &horn, lambda())
            .unwrap()
            .norm();
        let down = horn_field([0.0, -0.03, 0.07], &horn, lambda())
            .unwrap()
            .norm();
        assert!((up - down).abs() > 1e-3 * up.max(down));
    }

    #[test]
    fn scene_superposes_radiators() {
        let a = SourceElement::Horn(HornAperture::standard());
        let b = SourceElement::PointRadiator(PointRadiator {
            position: [0.01, 0.0, 0.005],
            amplitude: Complex64::new(0.3, -0.2),
        });
        let both = Scene::new(MICROWAVE_FREQUENCY, vec![a, b]).unwrap();
        let only_a = Scene::new(MICROWAVE_FREQUENCY, vec![a]).unwrap();
        let only_b = Scene::new(MICROWAVE_FREQUENCY, vec![b]).unwrap();
        for p in [[0.0, 0.0, 0.02], [0.03, -0.01, 0.05], [-0.02, 0.04, 0.1]] {
            let sum = only_a.field(p).unwrap() + only_b.field(p).unwrap();
            let total = both.field(p).unwrap();
            assert!((total - sum).norm() <= 1e-12 * sum.norm());
        }
    }

    #[test]
    fn wire_pair_maxima_track_separation() {
        let h = 0.2e-3;
        for dd_mm in [1.0, 1.2, 2.0, 3.0, 4.0, 5.0] {
            let dd = dd_mm * 1e-3;
            let xs: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 1e-6).collect();
            let profile: Vec<f64> = xs
                .iter()
                .map(|&x| wire_pair_field([x, 0.0, h], dd, [0.0; 3], lambda()))
                .collect();
            let peaks = local_maxima(&profile);
            assert_eq!(peaks.len(), 2, "Δd = {dd_mm} mm");
            let sep = xs[peaks[1]] - xs[peaks[0]];
            assert!((sep / dd - 1.0).abs() < 0.05, "Δd = {dd_mm} mm: {sep}");
            let mid = wire_pair_field([0.0, 0.0, h], dd, [0.0; 3], lambda());
            let near = wire_pair_field([1e-5, 0.0, h], dd, [0.0; 3], lambda());
            assert!(mid <= near);
        }
    }

    #[test]
    fn tag_shadow() {
        let tag = OccludingTag {
            center: [0.0, 0.0, 0.01],
            width: 0.02,
            height: 0.01,
            transmission: 0.2,
        };
        let l = lambda();
        let open = |p: Point3| Complex64::new(1.0, 0.5) * (1.0 + p[0]);
        let shadowed = apply_tag(open, tag, l);
        assert_eq!(shadowed([0.0, 0.0, 0.02]), open([0.0, 0.0, 0.02]) * 0.2);
        assert_eq!(shadowed([0.05, 0.0, 0.02]), open([0.05, 0.0, 0.02]));
        // source side of the tag is untouched
        assert_eq!(shadowed([0.0, 0.0, 0.005]), open([0.0, 0.0, 0.005]));
        // half depth lies exactly on the outline
        assert_relative_eq!(
            tag_factor([0.01, 0.0, 0.02], &tag, l),
            0.6,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            tag_factor([0.01 + 0.05 * l, 0.0, 0.02], &tag, l),
            1.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            tag_factor([0.01 - 0.05 * l, 0.0, 0.02], &tag, l),
            0.2,
            max_relative = 1e-12
        );

        let clear = OccludingTag {
            transmission: 1.0,
            ..tag
        };
        let through = apply_tag(open, clear, l);
        let opaque = apply_tag(
            open,
            OccludingTag {
                transmission: 0.0,
                ..tag
            },
            l,
        );
        for p in [[0.0, 0.0, 0.02], [0.0101, 0.0, 0.02], [0.3, 0.0, 0.02]] {
            assert_eq!(through(p), open(p));
        }
        assert_eq!(opaque([0.0, 0.0, 0.02]).norm(), 0.0);
    }

    #[test]
    fn shadow_width_at_half_depth_matches_tag_width() {
        let l = lambda();
        let tag = OccludingTag {
            center: [0.0, 0.0, 0.0],
            width: 0.012,
            height: 0.02,
            transmission: 0.0,
        };
        let xs: Vec<f64> = (-10000..=10000).map(|i| i as f64 * 1e-6).collect();
        let depth: Vec<f64> = xs
            .iter()
            .map(|&x| tag_factor([x, 0.0, 0.001], &tag, l))
            .collect();
        let inside: Vec<f64> = xs
            .iter()
            .zip(&depth)
            .filter(|(_, d)| **d <= 0.5)
            .map(|(x, _)| *x)
            .collect();
        let width = inside.last().unwrap() - inside.first().unwrap();
        assert!((width - tag.width).abs() <= 0.1 * l);
    }

    #[test]
    fn probe_perturbation() {
        let l = lambda();
        let base = |p: Point3| Complex64::new(1.0 + p[0], p[1]);
        let off = PerturbingProbe {
            position: [0.0, 0.0, 0.02],
            strength: 0.0,
            follows_scan: false,
        };
        let same = apply_probe_perturbation(base, off, l);
        for p in [[0.0, 0.0, 0.02], [0.1, 0.2, 0.03]] {
            assert_eq!(same(p), base(p));
        }
        let on = PerturbingProbe {
            strength: 1e-3,
            ..off
        };
        let perturbed = apply_probe_perturbation(base, on, l);
        let extra = |d: f64| (perturbed([d, 0.0, 0.02]) - base([d, 0.0, 0.02])).norm();
        let anchor = base(on.position).norm();
        for d in [0.01, 0.02, 0.04] {
            assert_relative_eq!(extra(d), on.strength * anchor / d, max_relative = 1e-12);
        }
        assert_relative_eq!(
            extra(d_guard(l) * 0.3),
            on.strength * anchor / d_guard(l),
            max_relative = 1e-12
        );
        assert!(extra(0.0).is_finite());
    }

    fn d_guard(l: f64) -> f64 {
        PROBE_GUARD_WAVELENGTHS * l
    }

    #[test]
    fn scene_probe_uses_field_at_probe_position() {
        let scene = Scene::horn(MICROWAVE_FREQUENCY).with_element(SourceElement::PerturbingProbe(
            PerturbingProbe {
                position: [0.01, 0.0, 0.03],
                strength: 2e-3,
                follows_scan: false,
            },
        ));
        let clean = Scene::horn(MICROWAVE_FREQUENCY);
        let p = [0.02, 0.01, 0.03];
        let e0 = clean.field(p).unwrap();
        let ep = clean.field([0.01, 0.0, 0.03]).unwrap();
        let d = distance(p, [0.01, 0.0, 0.03]);
        let expected = e0 + ep * Complex64::from_polar(2e-3 / d, 2.0 * PI * d / lambda());
        assert!((scene.field(p).unwrap() - expected).norm() < 1e-12 * expected.norm());
        assert_eq!(scene.without_probes(), clean);
    }

    #[test]
    fn scene_validation() {
        assert!(Scene::new(MICROWAVE_FREQUENCY, vec![]).is_err());
        assert!(Scene::new(0.0, vec![SourceElement::Horn(HornAperture::standard())]).is_err());
        let tag = SourceElement::OccludingTag(OccludingTag {
            center: [0.0; 3],
            width: 0.01,
            height: 0.01,
            transmission: 1.5,
        });
        assert!(Scene::new(
            MICROWAVE_FREQUENCY,
            vec![SourceElement::Horn(HornAperture::standard()), tag]
        )
        .is_err());
        let only_tag = OccludingTag {
            transmission: 0.5,
            ..match tag {
                SourceElement::OccludingTag(t) => t,
                _ => unreachable!(),
            }
        };
        assert!(Scene::new(
            MICROWAVE_FREQUENCY,
            vec![SourceElement::OccludingTag(only_tag)]
        )
        .is_err());
    }

    #[test]
    fn scene_json_round_trip_and_hash() {
        let scene = Scene::horn(MICROWAVE_FREQUENCY)
            .with_element(SourceElement::OccludingTag(OccludingTag {
                center: [0.0, 0.0, 0.02],
                width: 0.03,
                height: 0.015,
                transmission: 0.1,
            }))
            .with_element(SourceElement::PerturbingProbe(PerturbingProbe {
                position: [0.0, 0.0, 0.03],
                strength: 1e-3,
                follows_scan: true,
            }));
        let text = scene.to_json();
        let back = Scene::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.sha256(), scene.sha256());
        assert_eq!(scene.sha256().len(), 64);
        let other = Scene::horn(MICROWAVE_FREQUENCY);
        assert_ne!(other.sha256(), scene.sha256());
    }

    #[test]
    fn scene_json_errors() {
        assert!(Scene::from_json("{").is_err());
        let wrong = r#"{"schema":"nope","frequency_ghz":8.556,"elements":[]}"#;
        assert!(matches!(Scene::from_json(wrong), Err(Error::Parse { .. })));
        let unknown =
            r#"{"schema":"rydscan-scene-v1","frequency_ghz":8.556,"elements":[{"type":"laser"}]}"#;
        assert!(Scene::from_json(unknown).is_err());
        let minimal = r#"{"schema":"rydscan-scene-v1","frequency_ghz":8.556,
            "elements":[{"type":"horn","center_mm":[0,0,0],"width_mm":138,"height_mm":107}]}"#;
        let s = Scene::from_json(minimal).unwrap();
        assert_eq!(s.elements, Scene::horn(8.556e9).elements);
        assert_relative_eq!(s.frequency, 8.556e9, max_relative = 1e-15);
    }
}
