//! `rydscan`: spectra, virtual scans, map comparison and peak resolution from the shell.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 failure inside a computation.

mod plot;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rydscan::analysis::{find_peaks, fit_baseline_and_peaks};
use rydscan::metrics::{self, MetricReport, PixelBox, SsimParams};
use rydscan::physics::{classify_region, rdnf_outer_bound, AntennaAperture, E_A0};
use rydscan::scan::{
    self, FieldMap, NoiseModel, Ordering, ProfileAxis, ScanMode, ScanOptions, SpectroscopicSettings,
};
use rydscan::sources::Scene;
use rydscan::spectroscopy::{branch_positions, synthesize_spectrum, uniform_grid, LadderConfig};
use rydscan::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "rydscan",
    version,
    about = "Rydberg-atom near-field imaging simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a Doppler-averaged EIT / Autler–Townes spectrum and write it as CSV.
    Spectrum(SpectrumArgs),
    /// Run a virtual raster scan over a scene and write a field map.
    Scan(ScanArgs),
    /// Compare two maps with SSIM and write a metric report.
    Compare(CompareArgs),
    /// Fit a baseline plus Gaussian peaks to a line cut through a map.
    Resolve(ResolveArgs),
    /// Subtract a background map and report SBR and box S/N.
    Diff(DiffArgs),
    /// Classify axial distances into reactive / radiating near field or far field.
    Region(RegionArgs),
}

#[derive(Args)]
struct SpectrumArgs {
    /// Ladder configuration JSON (built-in cesium defaults if omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Probe detuning override, MHz.
    #[arg(long, allow_hyphen_values = true)]
    delta_p0_mhz: Option<f64>,
    /// RF Rabi frequency override, MHz (0 leaves the line unsplit).
    #[arg(long)]
    omega_rf_mhz: Option<f64>,
    /// Lower end of the coupling-detuning grid, MHz.
    #[arg(long, default_value_t = -250.0, allow_hyphen_values = true)]
    grid_lo_mhz: f64,
    /// Upper end of the coupling-detuning grid, MHz.
    #[arg(long, default_value_t = 250.0, allow_hyphen_values = true)]
    grid_hi_mhz: f64,
    /// Grid step, MHz.
    #[arg(long, default_value_t = 0.25)]
    grid_step_mhz: f64,
    /// Output CSV (a JSON sidecar with the configuration is written next to it).
    #[arg(long, short)]
    out: PathBuf,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    plot: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Spectroscopic,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    Raster,
    Serpentine,
}

#[derive(Args)]
struct ScanArgs {
    /// Scene JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Ladder configuration JSON for spectroscopic mode (defaults if omitted).
    #[arg(long)]
    ladder: Option<PathBuf>,
    /// Scan plane height above the source plane, mm.
    #[arg(long, allow_hyphen_values = true)]
    z_mm: f64,
    /// First grid column, mm.
    #[arg(long, allow_hyphen_values = true)]
    x0_mm: f64,
    /// First grid row, mm.
    #[arg(long, allow_hyphen_values = true)]
    y0_mm: f64,
    /// Extent along X, mm (0 for a single column).
    #[arg(long)]
    lx_mm: f64,
    /// Extent along Y, mm (0 for a single row).
    #[arg(long)]
    ly_mm: f64,
    /// Step along X, mm.
    #[arg(long)]
    dx_mm: f64,
    /// Step along Y, mm (defaults to the X step).
    #[arg(long)]
    dy_mm: Option<f64>,
    #[arg(long, value_enum, default_value = "raster")]
    ordering: OrderingArg,
    #[arg(long, value_enum, default_value = "direct")]
    mode: ModeArg,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    jobs: Option<usize>,
    /// Standard deviation of additive Gaussian noise, V/m.
    #[arg(long)]
    noise_vm: Option<f64>,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transition dipole in units of e·a0.
    #[arg(long, default_value_t = 1000.0)]
    dipole_ea0: f64,
    /// Spectroscopic mode: half-span of the synthesized grid, MHz.
    #[arg(long, default_value_t = 60.0)]
    span_mhz: f64,
    /// Spectroscopic mode: grid step, MHz.
    #[arg(long, default_value_t = 0.25)]
    step_mhz: f64,
    /// Spectroscopic mode: half-width of the doublet fit window, MHz.
    #[arg(long, default_value_t = 50.0)]
    window_mhz: f64,
    /// Drop perturbing probes from the scene before scanning.
    #[arg(long)]
    without_probes: bool,
    /// Drop occluding tags from the scene (background scan).
    #[arg(long)]
    without_tags: bool,
    /// Output map file.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write a PPM heatmap.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Reference map.
    map_a: PathBuf,
    /// Map under test.
    map_b: PathBuf,
    /// SSIM window side, pixels.
    #[arg(long, default_value_t = 8)]
    window: usize,
    /// Window stride, pixels.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Report JSON (stdout if omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Per-window SSIM grid as CSV.
    #[arg(long)]
    grid_out: Option<PathBuf>,
    /// PPM heatmap of the normalized difference map.
    #[arg(long)]
    diff_heatmap: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    X,
    Y,
}

#[derive(Args)]
struct ResolveArgs {
    /// Map to cut.
    map: PathBuf,
    /// Direction of the line cut.
    #[arg(long, value_enum, default_value = "x")]
    axis: AxisArg,
    /// Coordinate of the cut on the other axis, mm.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    coord_mm: f64,
    /// Number of Gaussian peaks (1 or 2).
    #[arg(long, default_value_t = 2)]
    n_peaks: usize,
    /// Lower edge of the peak region excluded from the baseline seed, mm.
    #[arg(long, allow_hyphen_values = true)]
    exclude_lo_mm: Option<f64>,
    /// Upper edge of the peak region excluded from the baseline seed, mm.
    #[arg(long, allow_hyphen_values = true)]
    exclude_hi_mm: Option<f64>,
    /// Report JSON (stdout if omitted).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Profile and fitted curve as CSV.
    #[arg(long)]
    profile_out: Option<PathBuf>,
    /// Also write a gnuplot script next to the profile CSV.
    #[arg(long, requires = "profile_out")]
    plot: bool,
}

#[derive(Args)]
struct DiffArgs {
    /// Map with the target present.
    map_with: PathBuf,
    /// Background map without the target.
    map_without: PathBuf,
    /// Target box as x0,y0,x1,y1 in mm.
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_hyphen_values = true
    )]
    box_mm: Vec<f64>,
    /// Gap between the box edge and the background samples of the SBR profile, mm.
    #[arg(long, default_value_t = 1.75)]
    guard_mm: f64,
    /// Output difference map.
    #[arg(long, short)]
    out: PathBuf,
    /// Report JSON (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write a PPM heatmap of the difference map.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct RegionArgs {
    /// Aperture width, mm.
    #[arg(long, default_value_t = 138.0)]
    width_mm: f64,
    /// Aperture height, mm.
    #[arg(long, default_value_t = 107.0)]
    height_mm: f64,
    /// Operating frequency, GHz.
    #[arg(long, default_value_t = 8.556)]
    freq_ghz: f64,
    /// Axial distances to classify, mm.
    #[arg(long, value_delimiter = ',', required = true)]
    z_mm: Vec<f64>,
}

/// Failure with its exit code.
enum Fail {
    /// Bad flags, unreadable or invalid input files.
    Usage(String),
    /// An error raised while computing.
    Module(Error),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 2,
            Fail::Module(_) => 3,
        }
    }
}

impl std::fmt::Display for Fail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fail::Usage(m) => f.write_str(m),
            Fail::Module(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, Fail>;

/// Input-stage error: anything raised while loading or validating is a usage failure.
fn input(e: Error) -> Fail {
    Fail::Usage(e.to_string())
}

fn module(e: Error) -> Fail {
    Fail::Module(e)
}

fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| Fail::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Prints to stdout, ignoring a closed pipe.
fn print_stdout(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn emit_json(out: Option<&Path>, json: &str) -> CliResult {
    match out {
        Some(path) => write_output(path, format!("{json}\n")),
        None => {
            print_stdout(json);
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn check_positive(name: &str, value: f64) -> CliResult {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Fail::Usage(format!(
            "--{name} must be positive, got {value}"
        )))
    }
}

fn load_ladder(path: Option<&Path>) -> CliResult<LadderConfig> {
    match path {
        Some(p) => LadderConfig::load(p).map_err(input),
        None => Ok(LadderConfig::default()),
    }
}

fn load_map(path: &Path) -> CliResult<FieldMap> {
    scan::load_map(path).map_err(input)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn cmd_spectrum(a: SpectrumArgs) -> CliResult {
    let mut config = load_ladder(a.config.as_deref())?;
    if let Some(d) = a.delta_p0_mhz {
        config = config.with_delta_p0(d * 1e6);
    }
    if let Some(o) = a.omega_rf_mhz {
        config = config.with_omega_rf(o * 1e6);
    }
    config.validate().map_err(input)?;
    let grid = uniform_grid(
        a.grid_lo_mhz * 1e6,
        a.grid_hi_mhz * 1e6,
        a.grid_step_mhz * 1e6,
    )
    .map_err(input)?;

    let spectrum = synthesize_spectrum(&config, &grid).map_err(module)?;
    let top = spectrum.values.iter().copied().fold(0.0, f64::max);
    let peaks = find_peaks(&spectrum.delta_c0, &spectrum.values, 0.05 * top).map_err(module)?;
    spectrum.save(&a.out).map_err(input)?;
    if a.plot {
        let title = format!(
            "delta_p0 = {} MHz, Omega_RF = {} MHz",
            config.delta_p0 / 1e6,
            config.omega_rf / 1e6
        );
        write_output(
            &with_extension(&a.out, "gp"),
            plot::spectrum_script(&a.out, &title),
        )?;
    }

    #[derive(Serialize)]
    struct Summary {
        points: usize,
        delta_p0_mhz: f64,
        omega_rf_mhz: f64,
        peak_positions_mhz: Vec<f64>,
        /// Expected (co, ctr) branch centers.
        branch_positions_mhz: [f64; 2],
    }
    let (co, ctr) = branch_positions(config.delta_p0, &config.geometry);
    print_stdout(&to_json(&Summary {
        points: spectrum.len(),
        delta_p0_mhz: config.delta_p0 / 1e6,
        omega_rf_mhz: config.omega_rf / 1e6,
        peak_positions_mhz: peaks.iter().map(|p| p.position / 1e6).collect(),
        branch_positions_mhz: [co / 1e6, ctr / 1e6],
    }));
    Ok(())
}

fn cmd_scan(a: ScanArgs) -> CliResult {
    let mut scene = Scene::load(&a.scene).map_err(input)?;
    if a.without_probes {
        scene = scene.without_probes();
    }
    if a.without_tags {
        scene = scene.without_tags();
    }
    let ladder = load_ladder(a.ladder.as_deref())?;
    let ordering = match a.ordering {
        OrderingArg::Raster => Ordering::Raster,
        OrderingArg::Serpentine => Ordering::Serpentine,
    };
    let plan = scan::make_plan(
        a.z_mm,
        [a.x0_mm, a.y0_mm],
        [a.lx_mm, a.ly_mm],
        [a.dx_mm, a.dy_mm.unwrap_or(a.dx_mm)],
        ordering,
    )
    .map_err(input)?;
    check_positive("dipole-ea0", a.dipole_ea0)?;
    check_positive("span-mhz", a.span_mhz)?;
    check_positive("step-mhz", a.step_mhz)?;
    check_positive("window-mhz", a.window_mhz)?;
    if a.jobs == Some(0) {
        return Err(Fail::Usage("--jobs must be at least 1".into()));
    }
    let noise = match a.noise_vm {
        Some(std) if !(std.is_finite() && std >= 0.0) => {
            return Err(Fail::Usage(format!("--noise-vm must be ≥ 0, got {std}")))
        }
        Some(std) if std > 0.0 => Some(NoiseModel { std, seed: a.seed }),
        _ => None,
    };
    let options = ScanOptions {
        mode: match a.mode {
            ModeArg::Direct => ScanMode::Direct,
            ModeArg::Spectroscopic => ScanMode::Spectroscopic,
        },
        jobs: a.jobs,
        noise,
        dipole: a.dipole_ea0 * E_A0,
        spectroscopic: SpectroscopicSettings {
            span: a.span_mhz * 1e6,
            step: a.step_mhz * 1e6,
            window: a.window_mhz * 1e6,
        },
    };

    let map = scan::run_virtual_scan(&plan, &scene, &ladder, &options).map_err(module)?;
    scan::save_map(&map, &a.out).map_err(input)?;
    if let Some(path) = &a.heatmap {
        write_output(path, plot::heatmap_ppm(&map.values, map.meta.signed, 4))?;
    }
    let peak = map.values.iter().copied().fold(0.0, f64::max);
    eprintln!(
        "{} points ({}×{}), max |E| {peak:.6e} V/m, {} unresolved",
        plan.len(),
        plan.nx(),
        plan.ny(),
        map.meta.unresolved.len()
    );
    Ok(())
}

fn grid_csv(grid: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn cmd_compare(a: CompareArgs) -> CliResult {
    let ma = load_map(&a.map_a)?;
    let mb = load_map(&a.map_b)?;
    if ma.values.dim() != mb.values.dim() {
        return Err(Fail::Usage(format!(
            "map shapes differ: {:?} vs {:?}",
            ma.values.dim(),
            mb.values.dim()
        )));
    }
    let params = SsimParams {
        window: a.window,
        stride: a.stride,
        ..SsimParams::default()
    };
    let na = metrics::normalize_map(&ma.values);
    let nb = metrics::normalize_map(&mb.values);
    let result = metrics::ssim_index(&na, &nb, &params).map_err(module)?;
    let diff = metrics::difference_map(&ma.values, &mb.values).map_err(module)?;

    let mut report = MetricReport::from_ssim(&result, params);
    report.mean_abs_difference =
        Some(diff.iter().map(|v| v.abs()).sum::<f64>() / diff.len() as f64);
    if let Some(path) = &a.grid_out {
        write_output(path, grid_csv(&result.grid))?;
        report.window_grid_path = Some(path.display().to_string());
    }
    if let Some(path) = &a.diff_heatmap {
        write_output(path, plot::heatmap_ppm(&diff, true, 4))?;
    }
    emit_json(a.out.as_deref(), &report.to_json())
}

fn cmd_resolve(a: ResolveArgs) -> CliResult {
    if !(1..=2).contains(&a.n_peaks) {
        return Err(Fail::Usage(format!(
            "--n-peaks must be 1 or 2, got {}",
            a.n_peaks
        )));
    }
    let map = load_map(&a.map)?;
    let axis = match a.axis {
        AxisArg::X => ProfileAxis::X,
        AxisArg::Y => ProfileAxis::Y,
    };
    let profile = scan::extract_profile(&map, axis, a.coord_mm).map_err(input)?;
    let first = profile.positions_mm[0];
    let last = profile.positions_mm[profile.positions_mm.len() - 1];
    // default exclusion: the middle half of the cut
    let quarter = 0.25 * (last - first);
    let exclusion = (
        a.exclude_lo_mm.unwrap_or(first + quarter),
        a.exclude_hi_mm.unwrap_or(last - quarter),
    );
    let fit = fit_baseline_and_peaks(&profile.positions_mm, &profile.values, a.n_peaks, exclusion)
        .map_err(module)?;

    if let Some(path) = &a.profile_out {
        let mut csv = String::from("position_mm,value,fit\n");
        for (x, v) in profile.positions_mm.iter().zip(&profile.values) {
            csv.push_str(&format!("{x:?},{v:?},{:?}\n", fit.eval(*x)));
        }
        write_output(path, csv)?;
        if a.plot {
            write_output(
                &with_extension(path, "gp"),
                plot::profile_script(path, true),
            )?;
        }
    }
    emit_json(a.out.as_deref(), &fit.report_json())
}

/// Pixel box covering the grid points inside an (x0, y0, x1, y1) rectangle in mm.
fn pixel_box(map: &FieldMap, rect: [f64; 4]) -> CliResult<PixelBox> {
    let p = &map.plan;
    let [x0, y0, x1, y1] = rect;
    let cols: Vec<usize> = (0..p.nx())
        .filter(|&i| (x0.min(x1)..=x0.max(x1)).contains(&p.x_mm(i)))
        .collect();
    let rows: Vec<usize> = (0..p.ny())
        .filter(|&i| (y0.min(y1)..=y0.max(y1)).contains(&p.y_mm(i)))
        .collect();
    match (cols.first(), rows.first()) {
        (Some(&c), Some(&r)) => Ok(PixelBox {
            row0: r,
            col0: c,
            rows: rows.len(),
            cols: cols.len(),
        }),
        _ => Err(Fail::Usage(format!(
            "--box-mm {rect:?} contains no grid points"
        ))),
    }
}

/// SBR of the X cut through the box center: signal inside the box, background
/// beyond the box edge plus the guard.
fn profile_sbr(map: &FieldMap, rect: [f64; 4], guard_mm: f64) -> Result<f64, Error> {
    let [x0, y0, x1, y1] = rect;
    let profile = scan::extract_profile(map, ProfileAxis::X, 0.5 * (y0 + y1))?;
    let (lo, hi) = (x0.min(x1), x0.max(x1));
    let mut signal = Vec::new();
    let mut background = Vec::new();
    for (x, v) in profile.positions_mm.iter().zip(&profile.values) {
        if (lo..=hi).contains(x) {
            signal.push(*v);
        } else if *x <= lo - guard_mm || *x >= hi + guard_mm {
            background.push(*v);
        }
    }
    metrics::sbr(&signal, &background)
}

fn cmd_diff(a: DiffArgs) -> CliResult {
    let with = load_map(&a.map_with)?;
    let without = load_map(&a.map_without)?;
    if with.plan != without.plan {
        return Err(Fail::Usage(
            "maps were taken on different scan plans".into(),
        ));
    }
    let rect: [f64; 4] = a
        .box_mm
        .as_slice()
        .try_into()
        .map_err(|_| Fail::Usage("--box-mm needs x0,y0,x1,y1".into()))?;
    if !(a.guard_mm.is_finite() && a.guard_mm >= 0.0) {
        return Err(Fail::Usage(format!(
            "--guard-mm must be ≥ 0, got {}",
            a.guard_mm
        )));
    }
    let tag_box = pixel_box(&with, rect)?;

    let values = metrics::background_subtract(&with.values, &without.values).map_err(module)?;
    let diff = with.with_values(values, true).map_err(module)?;

    #[derive(Serialize)]
    struct DiffReport {
        sbr_raw: f64,
        sbr_differential: f64,
        snr_raw: f64,
        snr_differential: f64,
        box_pixels: [usize; 4],
    }
    let report = DiffReport {
        sbr_raw: profile_sbr(&with, rect, a.guard_mm).map_err(module)?,
        sbr_differential: profile_sbr(&diff, rect, a.guard_mm).map_err(module)?,
        snr_raw: metrics::snr_box(&with.values, tag_box).map_err(module)?,
        snr_differential: metrics::snr_box(&diff.values, tag_box).map_err(module)?,
        box_pixels: [tag_box.row0, tag_box.col0, tag_box.rows, tag_box.cols],
    };
    scan::save_map(&diff, &a.out).map_err(input)?;
    if let Some(path) = &a.heatmap {
        write_output(path, plot::heatmap_ppm(&diff.values, true, 4))?;
    }
    emit_json(a.report.as_deref(), &to_json(&report))
}

fn cmd_region(a: RegionArgs) -> CliResult {
    let aperture = AntennaAperture::new(a.width_mm / 1e3, a.height_mm / 1e3, a.freq_ghz * 1e9)
        .map_err(input)?;
    let outer = rdnf_outer_bound(&aperture).map_err(input)?;

    #[derive(Serialize)]
    struct Row {
        z_mm: f64,
        region: &'static str,
    }
    #[derive(Serialize)]
    struct RegionReport {
        wavelength_mm: f64,
        rdnf_outer_mm: f64,
        points: Vec<Row>,
    }
    let mut points = Vec::new();
    for z in &a.z_mm {
        let region = classify_region(z / 1e3, &aperture).map_err(input)?;
        points.push(Row {
            z_mm: *z,
            region: region.abbreviation(),
        });
    }
    print_stdout(&to_json(&RegionReport {
        wavelength_mm: aperture.wavelength() * 1e3,
        rdnf_outer_mm: outer * 1e3,
        points,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Resolve(a) => cmd_resolve(a),
        Command::Diff(a) => cmd_diff(a),
        Command::Region(a) => cmd_region(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(fail) => {
            eprintln!("rydscan: {fail}");
            ExitCode::from(fail.code())
        }
    }
}
