//! Raster scan plans, virtual scans and field-map persistence.
//!
//! Plan geometry is kept in millimetres so a map header written to disk reads
//! back bit-exactly; SI coordinates are derived on demand.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, extract_at_splitting};
use crate::error::{Error, Result};
use crate::physics::{at_splitting_to_field, field_to_at_splitting, DEFAULT_DIPOLE};
use crate::sources::{Point3, Scene};
use crate::spectroscopy::{self, branch_positions, synthesize_spectrum, write_file, LadderConfig};

const MODULE: &str = "scan";

pub const MAP_SCHEMA: &str = "rydscan-map-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// Every row left to right.
    Raster,
    /// Alternate rows reverse direction.
    Serpentine,
}

impl Ordering {
    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::Raster => "raster",
            Ordering::Serpentine => "serpentine",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "raster" => Some(Ordering::Raster),
            "serpentine" => Some(Ordering::Serpentine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    /// Scene magnitude taken as the field in V/m.
    Direct,
    /// Field recovered from a synthesized Autler–Townes spectrum at each point.
    Spectroscopic,
}

impl ScanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanMode::Direct => "direct",
            ScanMode::Spectroscopic => "spectroscopic",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(ScanMode::Direct),
            "spectroscopic" => Some(ScanMode::Spectroscopic),
            _ => None,
        }
    }
}

/// Rectangular grid of scan points on a plane of constant Z. Lengths in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPlan {
    pub z_mm: f64,
    pub origin_mm: [f64; 2],
    pub extent_mm: [f64; 2],
    pub step_mm: [f64; 2],
    pub ordering: Ordering,
}

fn count(extent: f64, step: f64) -> usize {
    (extent / step + 1e-9).floor() as usize + 1
}

/// Builds a plan; extents may be zero for a single row, column or point.
pub fn make_plan(
    z_mm: f64,
    origin_mm: [f64; 2],
    extent_mm: [f64; 2],
    step_mm: [f64; 2],
    ordering: Ordering,
) -> Result<ScanPlan> {
    let plan = ScanPlan {
        z_mm,
        origin_mm,
        extent_mm,
        step_mm,
        ordering,
    };
    plan.validate()?;
    Ok(plan)
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.z_mm,
            self.origin_mm[0],
            self.origin_mm[1],
            self.extent_mm[0],
            self.extent_mm[1],
        ];
        if all.iter().chain(&self.step_mm).any(|v| !v.is_finite()) {
            return Err(Error::domain(MODULE, "plan geometry must be finite"));
        }
        if !(self.step_mm[0] > 0.0 && self.step_mm[1] > 0.0) {
            return Err(Error::domain(MODULE, "scan steps must be positive"));
        }
        if self.extent_mm[0] < 0.0 || self.extent_mm[1] < 0.0 {
            return Err(Error::domain(MODULE, "scan extent must be non-negative"));
        }
        if self.len() > 50_000_000 {
            return Err(Error::domain(MODULE, "scan plan exceeds 5e7 points"));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        count(self.extent_mm[0], self.step_mm[0])
    }

    pub fn ny(&self) -> usize {
        count(self.extent_mm[1], self.step_mm[1])
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_mm(&self, ix: usize) -> f64 {
        self.origin_mm[0] + ix as f64 * self.step_mm[0]
    }

    pub fn y_mm(&self, iy: usize) -> f64 {
        self.origin_mm[1] + iy as f64 * self.step_mm[1]
    }

    /// Grid point in metres.
    pub fn point_m(&self, ix: usize, iy: usize) -> Point3 {
        [self.x_mm(ix) / 1e3, self.y_mm(iy) / 1e3, self.z_mm / 1e3]
    }

    /// Grid indices `(ix, iy)` in visiting order.
    pub fn visit_order(&self) -> Vec<(usize, usize)> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let reverse = self.ordering == Ordering::Serpentine && iy % 2 == 1;
            for k in 0..nx {
                out.push((if reverse { nx - 1 - k } else { k }, iy));
            }
        }
        out
    }
}

/// Provenance attached to a map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapMeta {
    pub mode: Option<ScanMode>,
    pub scene_sha: Option<String>,
    pub ladder_sha: Option<String>,
    pub timestamp: Option<String>,
    /// Row-major flat indices (iy·nx + ix) of points floored at the resolution limit.
    pub unresolved: Vec<usize>,
    /// Values may be negative (difference maps).
    pub signed: bool,
}

/// Field magnitudes on a plan; row = Y index, column = X index.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub plan: ScanPlan,
    pub values: Array2<f64>,
    pub meta: MapMeta,
}

impl FieldMap {
    pub fn new(plan: ScanPlan, values: Array2<f64>, meta: MapMeta) -> Result<Self> {
        plan.validate()?;
        if values.dim() != (plan.ny(), plan.nx()) {
            return Err(Error::domain(
                MODULE,
                format!(
                    "grid is {}×{} but plan needs {}×{} (rows×cols)",
                    values.nrows(),
                    values.ncols(),
                    plan.ny(),
                    plan.nx()
                ),
            ));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || (!meta.signed && **v < 0.0))
        {
            return Err(Error::domain(MODULE, format!("invalid map value {v}")));
        }
        if let Some(i) = meta.unresolved.iter().find(|&&i| i >= plan.len()) {
            return Err(Error::domain(
                MODULE,
                format!("unresolved index {i} outside the grid"),
            ));
        }
        Ok(Self { plan, values, meta })
    }

    /// Same geometry, new values (e.g. a difference map).
    pub fn with_values(&self, values: Array2<f64>, signed: bool) -> Result<Self> {
        let meta = MapMeta {
            signed,
            unresolved: Vec::new(),
            ..self.meta.clone()
        };
        Self::new(self.plan, values, meta)
    }

    pub fn to_text(&self) -> String {
        let p = &self.plan;
        let m = &self.meta;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "# {k}={v}");
        };
        kv("schema", MAP_SCHEMA.into());
        kv("z_mm", p.z_mm.to_string());
        kv("x0_mm", p.origin_mm[0].to_string());
        kv("y0_mm", p.origin_mm[1].to_string());
        kv("lx_mm", p.extent_mm[0].to_string());
        kv("ly_mm", p.extent_mm[1].to_string());
        kv("dx_mm", p.step_mm[0].to_string());
        kv("dy_mm", p.step_mm[1].to_string());
        kv("nx", p.nx().to_string());
        kv("ny", p.ny().to_string());
        kv("ordering", p.ordering.as_str().into());
        kv("mode", m.mode.map_or("none", ScanMode::as_str).into());
        kv(
            "scene_sha",
            m.scene_sha.clone().unwrap_or_else(|| "none".into()),
        );
        kv(
            "ladder_sha",
            m.ladder_sha.clone().unwrap_or_else(|| "none".into()),
        );
        if let Some(t) = &m.timestamp {
            kv("timestamp", t.clone());
        }
        kv("signed", m.signed.to_string());
        kv(
            "unresolved",
            if m.unresolved.is_empty() {
                "none".into()
            } else {
                m.unresolved
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            },
        );
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(ToString::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::parse(source_name, line, msg);
        let mut header: Vec<(usize, String, String)> = Vec::new();
        let mut rows: Vec<(usize, &str)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                if !rows.is_empty() {
                    return Err(perr(n, "header line after grid data".into()));
                }
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| perr(n, "header line must be `# key=value`".into()))?;
                header.push((n, k.trim().to_string(), v.trim().to_string()));
            } else if !line.trim().is_empty() {
                rows.push((n, line));
            }
        }
        let get = |key: &str| -> Result<(usize, &str)> {
            header
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(n, _, v)| (*n, v.as_str()))
                .ok_or_else(|| perr(0, format!("missing header field `{key}`")))
        };
        let num = |key: &str| -> Result<f64> {
            let (n, v) = get(key)?;
            v.parse()
                .map_err(|_| perr(n, format!("field `{key}`: bad number `{v}`")))
        };
        let int = |key: &str| -> Result<usize> {
            let (n, v) = get(key)?;
            v.parse()
                .map_err(|_| perr(n, format!("field `{key}`: bad integer `{v}`")))
        };
        let opt = |key: &str| -> Result<Option<String>> {
            let (_, v) = get(key)?;
            Ok((v != "none").then(|| v.to_string()))
        };

        let (n, schema) = get("schema")?;
        if schema != MAP_SCHEMA {
            return Err(perr(
                n,
                format!("field `schema`: expected {MAP_SCHEMA}, got `{schema}`"),
            ));
        }
        let (n, ord) = get("ordering")?;
        let ordering = Ordering::parse(ord)
            .ok_or_else(|| perr(n, format!("field `ordering`: unknown `{ord}`")))?;
        let plan = ScanPlan {
            z_mm: num("z_mm")?,
            origin_mm: [num("x0_mm")?, num("y0_mm")?],
            extent_mm: [num("lx_mm")?, num("ly_mm")?],
            step_mm: [num("dx_mm")?, num("dy_mm")?],
            ordering,
        };
        plan.validate().map_err(|e| perr(0, e.to_string()))?;
        let (nx, ny) = (int("nx")?, int("ny")?);
        if (nx, ny) != (plan.nx(), plan.ny()) {
            return Err(perr(
                get("nx")?.0,
                format!(
                    "fields `nx`/`ny` ({nx}×{ny}) disagree with the plan ({}×{})",
                    plan.nx(),
                    plan.ny()
                ),
            ));
        }
        let (n, mode) = get("mode")?;
        let mode = match mode {
            "none" => None,
            s => Some(
                ScanMode::parse(s)
                    .ok_or_else(|| perr(n, format!("field `mode`: unknown `{s}`")))?,
            ),
        };
        let (n, signed) = get("signed")?;
        let signed = signed
            .parse::<bool>()
            .map_err(|_| perr(n, format!("field `signed`: bad boolean `{signed}`")))?;
        let (n, unres) = get("unresolved")?;
        let unresolved = if unres == "none" {
            Vec::new()
        } else {
            unres
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| perr(n, "field `unresolved`: bad index list".into()))?
        };
        let timestamp = header
            .iter()
            .find(|(_, k, _)| k == "timestamp")
            .map(|(_, _, v)| v.clone());

        if rows.len() != ny {
            return Err(perr(
                rows.last().map_or(0, |r| r.0),
                format!("grid has {} rows, header says ny={ny}", rows.len()),
            ));
        }
        let mut values = Array2::<f64>::zeros((ny, nx));
        for (iy, (n, line)) in rows.iter().enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != nx {
                return Err(perr(
                    *n,
                    format!("row has {} columns, header says nx={nx}", cells.len()),
                ));
            }
            for (ix, c) in cells.iter().enumerate() {
                values[(iy, ix)] = c
                    .trim()
                    .parse()
                    .map_err(|_| perr(*n, format!("column {}: bad number `{c}`", ix + 1)))?;
            }
        }
        let meta = MapMeta {
            mode,
            scene_sha: opt("scene_sha")?,
            ladder_sha: opt("ladder_sha")?,
            timestamp,
            unresolved,
            signed,
        };
        FieldMap::new(plan, values, meta).map_err(|e| perr(0, e.to_string()))
    }
}

pub fn save_map(map: &FieldMap, path: &Path) -> Result<()> {
    write_file(path, map.to_text().as_bytes())
}

pub fn load_map(path: &Path) -> Result<FieldMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FieldMap::from_text(&text, &path.display().to_string())
}

/// Additive Gaussian measurement noise, seeded per scan point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation in V/m.
    pub std: f64,
    pub seed: u64,
}

/// Spectral grid and extraction window used in spectroscopic mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectroscopicSettings {
    /// Half-span of the synthesized coupling-detuning grid about the ctr branch (Hz).
    pub span: f64,
    pub step: f64,
    /// Half-width of the doublet fit window (Hz).
    pub window: f64,
}

impl Default for SpectroscopicSettings {
    fn default() -> Self {
        Self {
            span: 60e6,
            step: 0.25e6,
            window: 50e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    pub mode: ScanMode,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    pub noise: Option<NoiseModel>,
    pub dipole: f64,
    pub spectroscopic: SpectroscopicSettings,
}

impl ScanOptions {
    pub fn new(mode: ScanMode) -> Self {
        Self {
            mode,
            jobs: None,
            noise: None,
            dipole: DEFAULT_DIPOLE,
            spectroscopic: SpectroscopicSettings::default(),
        }
    }
}

/// One field value recovered from a synthesized spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub field: f64,
    pub unresolved: bool,
}

/// Spectroscopic front end: field → Rabi frequency → spectrum → doublet fit → field.
pub struct Spectrometer {
    ladder: LadderConfig,
    settings: SpectroscopicSettings,
    dipole: f64,
    center: f64,
    grid: Vec<f64>,
    floor: f64,
}

impl Spectrometer {
    pub fn new(
        ladder: &LadderConfig,
        settings: SpectroscopicSettings,
        dipole: f64,
    ) -> Result<Self> {
        ladder.validate()?;
        if !(settings.window > 0.0 && settings.span >= settings.window && settings.step > 0.0) {
            return Err(Error::domain(
                MODULE,
                "spectroscopic settings need 0 < window ≤ span and step > 0",
            ));
        }
        let (_, center) = branch_positions(ladder.delta_p0, &ladder.geometry);
        let grid = spectroscopy::uniform_grid(
            center - settings.span,
            center + settings.span,
            settings.step,
        )?;
        let unsplit = synthesize_spectrum(&ladder.with_omega_rf(0.0), &grid)?;
        let fwhm = analysis::measure_fwhm(
            &unsplit.delta_c0,
            &unsplit.values,
            center - settings.window,
            center + settings.window,
        )?;
        let floor = at_splitting_to_field(analysis::UNRESOLVED_FRACTION * fwhm, dipole)?;
        Ok(Self {
            ladder: *ladder,
            settings,
            dipole,
            center,
            grid,
            floor,
        })
    }

    /// Smallest reportable field: h·(0.8·FWHM_ctr)/℘.
    pub fn resolution_floor(&self) -> f64 {
        self.floor
    }

    pub fn measure(&self, field: f64) -> Result<Measurement> {
        let omega = field_to_at_splitting(field, self.dipole)?;
        let spectrum = synthesize_spectrum(&self.ladder.with_omega_rf(omega), &self.grid)?;
        let at = extract_at_splitting(&spectrum, self.center, self.settings.window)?;
        Ok(if at.unresolved {
            Measurement {
                field: self.floor,
                unresolved: true,
            }
        } else {
            Measurement {
                field: at_splitting_to_field(at.delta_f, self.dipole)?,
                unresolved: false,
            }
        })
    }
}

fn sha_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn at_index(err: Error, index: usize, ix: usize, iy: usize) -> Error {
    let tag = |m: String| format!("scan point {index} (ix={ix}, iy={iy}): {m}");
    match err {
        Error::Domain { message, .. } => Error::domain(MODULE, tag(message)),
        Error::Numeric { message, .. } => Error::numeric(MODULE, tag(message)),
        other => other,
    }
}

/// Executes a plan against a scene. Points are evaluated in parallel and
/// reassembled by grid index, so the result does not depend on the worker
/// count or visiting order.
pub fn run_virtual_scan(
    plan: &ScanPlan,
    scene: &Scene,
    ladder: &LadderConfig,
    options: &ScanOptions,
) -> Result<FieldMap> {
    plan.validate()?;
    let prepared = scene.prepare()?;
    if let Some(noise) = options.noise {
        if !(noise.std >= 0.0 && noise.std.is_finite()) {
            return Err(Error::domain(
                MODULE,
                "noise standard deviation must be non-negative",
            ));
        }
    }
    let spectrometer = match options.mode {
        ScanMode::Direct => None,
        ScanMode::Spectroscopic => Some(Spectrometer::new(
            ladder,
            options.spectroscopic,
            options.dipole,
        )?),
    };
    let order = plan.visit_order();
    let nx = plan.nx();

    let evaluate = |k: usize| -> Result<(usize, Measurement)> {
        let (ix, iy) = order[k];
        let flat = iy * nx + ix;
        let wrap = |e| at_index(e, k, ix, iy);
        let truth = prepared.magnitude(plan.point_m(ix, iy)).map_err(wrap)?;
        let mut m = match &spectrometer {
            None => Measurement {
                field: truth,
                unresolved: false,
            },
            Some(s) => s.measure(truth).map_err(wrap)?,
        };
        if let Some(noise) = options.noise {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(flat as u64);
            let n =
                Normal::new(0.0, noise.std).map_err(|e| Error::domain(MODULE, e.to_string()))?;
            m.field = (m.field + n.sample(&mut rng)).max(0.0);
        }
        Ok((flat, m))
    };

    let results: Vec<Result<(usize, Measurement)>> = match options.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Error::domain(MODULE, format!("cannot start worker pool: {e}")))?;
            pool.install(|| (0..order.len()).into_par_iter().map(evaluate).collect())
        }
        None => (0..order.len()).into_par_iter().map(evaluate).collect(),
    };

    let mut values = Array2::<f64>::zeros((plan.ny(), nx));
    let mut unresolved = Vec::new();
    for r in results {
        let (flat, m) = r?;
        values[(flat / nx, flat % nx)] = m.field;
        if m.unresolved {
            unresolved.push(flat);
        }
    }
    unresolved.sort_unstable();
    let meta = MapMeta {
        mode: Some(options.mode),
        scene_sha: Some(scene.sha256()),
        ladder_sha: Some(sha_hex(&ladder.to_json())),
        timestamp: None,
        unresolved,
        signed: false,
    };
    FieldMap::new(*plan, values, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileAxis {
    /// Row at fixed Y, varying X.
    X,
    /// Column at fixed X, varying Y.
    Y,
}

/// One-dimensional cut through a map.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Coordinates along the cut (mm).
    pub positions_mm: Vec<f64>,
    pub values: Vec<f64>,
    /// The grid line actually used (mm).
    pub fixed_mm: f64,
}

/// Extracts the grid row (axis X) or column (axis Y) nearest to `coordinate_mm`.
pub fn extract_profile(map: &FieldMap, axis: ProfileAxis, coordinate_mm: f64) -> Result<Profile> {
    let p = &map.plan;
    let (fixed_dim, origin, extent, step) = match axis {
        ProfileAxis::X => (1, p.origin_mm[1], p.extent_mm[1], p.step_mm[1]),
        ProfileAxis::Y => (0, p.origin_mm[0], p.extent_mm[0], p.step_mm[0]),
    };
    let n_fixed = if fixed_dim == 1 { p.ny() } else { p.nx() };
    let last = origin + (n_fixed - 1) as f64 * step;
    let eps = 1e-9 * step.max(extent);
    if !(coordinate_mm >= origin - eps && coordinate_mm <= last + eps) {
        return Err(Error::domain(
            MODULE,
            format!(
                "coordinate {coordinate_mm} mm outside the scanned range [{origin}, {last}] mm"
            ),
        ));
    }
    let idx = (((coordinate_mm - origin) / step).round() as usize).min(n_fixed - 1);
    Ok(match axis {
        ProfileAxis::X => Profile {
            positions_mm: (0..p.nx()).map(|i| p.x_mm(i)).collect(),
            values: map.values.row(idx).to_vec(),
            fixed_mm: p.y_mm(idx),
        },
        ProfileAxis::Y => Profile {
            positions_mm: (0..p.ny()).map(|i| p.y_mm(i)).collect(),
            values: map.values.column(idx).to_vec(),
            fixed_mm: p.x_mm(idx),
        },
    })
}
