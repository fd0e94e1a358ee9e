//! Peak finding, baseline + multi-Gaussian least-squares fitting and
//! Autler–Townes splitting extraction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectroscopy::Spectrum;

const MODULE: &str = "analysis";

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;
/// Polynomial degree of the fitted baseline.
pub const BASELINE_DEGREE: usize = 2;
/// A doublet whose separation is below this fraction of its mean FWHM is flagged unresolved.
pub const UNRESOLVED_FRACTION: f64 = 0.8;

const MAX_ITERATIONS: usize = 200;
const REL_COST_TOL: f64 = 1e-10;
const ABS_COST_TOL: f64 = 1e-30;
const PEAK_SEED_PROMINENCE: f64 = 0.05;

pub fn fwhm_from_sigma(sigma: f64) -> f64 {
    FWHM_PER_SIGMA * sigma
}

/// Local maximum reported by [`find_peaks`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoundPeak {
    pub index: usize,
    pub position: f64,
    pub height: f64,
}

fn check_trace(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::domain(MODULE, "axis and values differ in length"));
    }
    if x.len() < 3 {
        return Err(Error::domain(
            MODULE,
            format!("trace needs at least 3 samples, got {}", x.len()),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain(MODULE, "trace contains non-finite values"));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain(MODULE, "axis must be strictly increasing"));
    }
    Ok(())
}

/// Interior local maxima whose topographic prominence is at least
/// `min_prominence · max(y)`, sorted by position. A plateau counts once, at
/// its leftmost index.
pub fn find_peaks(x: &[f64], y: &[f64], min_prominence: f64) -> Result<Vec<FoundPeak>> {
    check_trace(x, y)?;
    if !(min_prominence > 0.0 && min_prominence <= 1.0) {
        return Err(Error::domain(MODULE, "min_prominence must lie in (0, 1]"));
    }
    let n = y.len();
    let threshold = min_prominence * y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut found = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let h = y[i];
                let mut left_min = h;
                for k in (0..i).rev() {
                    if y[k] > h {
                        break;
                    }
                    left_min = left_min.min(y[k]);
                }
                let mut right_min = h;
                for &v in &y[j + 1..] {
                    if v > h {
                        break;
                    }
                    right_min = right_min.min(v);
                }
                if h - left_min.max(right_min) >= threshold {
                    found.push(FoundPeak {
                        index: i,
                        position: x[i],
                        height: h,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(found)
}

/// One fitted Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeak {
    pub center: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

impl GaussianPeak {
    pub fn fwhm(&self) -> f64 {
        fwhm_from_sigma(self.sigma)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sigma;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Polynomial baseline plus Gaussian peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    /// Coefficients c0, c1, c2 of c0 + c1·x + c2·x².
    pub baseline: Vec<f64>,
    pub peaks: Vec<GaussianPeak>,
    pub rms_residual: f64,
    pub iterations: usize,
    /// Fewer seed maxima than requested peaks were found; centers were spread evenly instead.
    pub degraded_init: bool,
}

impl PeakFit {
    pub fn baseline_at(&self, x: f64) -> f64 {
        self.baseline.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.baseline_at(x) + self.peaks.iter().map(|p| p.eval(x)).sum::<f64>()
    }

    /// FWHM of the single peak.
    pub fn fwhm(&self) -> Result<f64> {
        match self.peaks.as_slice() {
            [p] => Ok(p.fwhm()),
            other => Err(Error::domain(
                MODULE,
                format!("fwhm needs exactly 1 peak, fit has {}", other.len()),
            )),
        }
    }

    pub fn peak_separation(&self) -> Result<f64> {
        match self.peaks.as_slice() {
            [a, b] => Ok((b.center - a.center).abs()),
            other => Err(Error::domain(
                MODULE,
                format!(
                    "peak separation needs exactly 2 peaks, fit has {}",
                    other.len()
                ),
            )),
        }
    }

    pub fn mean_fwhm(&self) -> f64 {
        self.peaks.iter().map(GaussianPeak::fwhm).sum::<f64>() / self.peaks.len().max(1) as f64
    }

    pub fn report_json(&self) -> String {
        #[derive(Serialize)]
        struct PeakRow {
            center: f64,
            amplitude: f64,
            sigma: f64,
            fwhm: f64,
        }
        #[derive(Serialize)]
        struct Flags {
            degraded_init: bool,
        }
        #[derive(Serialize)]
        struct Report<'a> {
            baseline: &'a [f64],
            peaks: Vec<PeakRow>,
            separation: Option<f64>,
            rms_residual: f64,
            iterations: usize,
            flags: Flags,
        }
        let report = Report {
            baseline: &self.baseline,
            peaks: self
                .peaks
                .iter()
                .map(|p| PeakRow {
                    center: p.center,
                    amplitude: p.amplitude,
                    sigma: p.sigma,
                    fwhm: p.fwhm(),
                })
                .collect(),
            separation: self.peak_separation().ok(),
            rms_residual: self.rms_residual,
            iterations: self.iterations,
            flags: Flags {
                degraded_init: self.degraded_init,
            },
        };
        serde_json::to_string_pretty(&report).expect("fit report serializes")
    }
}

/// Affine maps to a unit-scale working frame, so the solver sees O(1) numbers
/// regardless of the trace's units. Subtracting the minimum makes the fit
/// independent of constant offsets.
struct Frame {
    x_mid: f64,
    x_half: f64,
    y_min: f64,
    y_span: f64,
}

impl Frame {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let (lo, hi) = (x[0], x[x.len() - 1]);
        let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = y_max - y_min;
        Self {
            x_mid: 0.5 * (lo + hi),
            x_half: 0.5 * (hi - lo),
            y_min,
            y_span: if span > 0.0 { span } else { 1.0 },
        }
    }

    fn u(&self, x: f64) -> f64 {
        (x - self.x_mid) / self.x_half
    }
}

const NB: usize = BASELINE_DEGREE + 1;

fn model_row(params: &[f64], u: f64, row: &mut [f64]) -> f64 {
    let mut value = 0.0;
    let mut pow = 1.0;
    for k in 0..NB {
        row[k] = pow;
        value += params[k] * pow;
        pow *= u;
    }
    for (j, p) in params[NB..].chunks_exact(3).enumerate() {
        let (a, c, s) = (p[0], p[1], p[2]);
        let d = u - c;
        let e = (-0.5 * d * d / (s * s)).exp();
        value += a * e;
        let col = NB + 3 * j;
        row[col] = e;
        row[col + 1] = a * e * d / (s * s);
        row[col + 2] = a * e * d * d / (s * s * s);
    }
    value
}

fn cost(params: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let mut row = vec![0.0; params.len()];
    u.iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            let r = model_row(params, ui, &mut row) - vi;
            r * r
        })
        .sum::<f64>()
        * 0.5
}

fn feasible(params: &[f64]) -> bool {
    params[NB..].chunks_exact(3).all(|p| {
        p[0] > 0.0 && p[2] > 0.0 && (-1.0..=1.0).contains(&p[1]) && p.iter().all(|v| v.is_finite())
    })
}

fn solve_damped(jtj: &DMatrix<f64>, grad: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let mut a = jtj.clone();
    for i in 0..a.nrows() {
        let d = jtj[(i, i)];
        a[(i, i)] = d + lambda * d.max(1e-12);
    }
    let rhs = -grad;
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(&rhs)),
        None => a.lu().solve(&rhs),
    }
}

struct Solution {
    params: Vec<f64>,
    cost: f64,
    iterations: usize,
}

/// Levenberg–Marquardt minimization of ½‖model − v‖². Every accepted step
/// strictly lowers the cost; steps that leave the feasible set are rejected.
fn levenberg_marquardt(mut params: Vec<f64>, u: &[f64], v: &[f64]) -> Result<Solution, f64> {
    let m = params.len();
    let mut lambda = 1e-3;
    let mut current = cost(&params, u, v);
    let mut row = vec![0.0; m];
    for iteration in 1..=MAX_ITERATIONS {
        if current <= ABS_COST_TOL {
            return Ok(Solution {
                params,
                cost: current,
                iterations: iteration - 1,
            });
        }
        let mut jtj = DMatrix::<f64>::zeros(m, m);
        let mut grad = DVector::<f64>::zeros(m);
        for (&ui, &vi) in u.iter().zip(v) {
            let r = model_row(&params, ui, &mut row) - vi;
            for a in 0..m {
                grad[a] += row[a] * r;
                for b in a..m {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                jtj[(a, b)] = jtj[(b, a)];
            }
        }

        let mut accepted = None;
        while lambda < 1e16 {
            if let Some(step) = solve_damped(&jtj, &grad, lambda) {
                let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, d)| p + d).collect();
                if feasible(&trial) {
                    let c = cost(&trial, u, v);
                    if c < current {
                        accepted = Some((trial, c));
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        let Some((trial, c)) = accepted else {
            // no descent direction left: stationary to working precision
            return Ok(Solution {
                params,
                cost: current,
                iterations: iteration,
            });
        };
        let rel_change = (current - c) / current;
        params = trial;
        current = c;
        lambda = (lambda / 10.0).max(1e-12);
        if rel_change < REL_COST_TOL {
            return Ok(Solution {
                params,
                cost: current,
                iterations: iteration,
            });
        }
    }
    Err(current)
}

/// Lowest baseline-subtracted value inside the peak region.
fn base_floor(residual: &[f64], inside: &[usize]) -> f64 {
    inside
        .iter()
        .map(|&i| residual[i])
        .fold(f64::INFINITY, f64::min)
        .min(0.0)
}

/// Gaussian σ implied by the narrower half-maximum crossing around `peak`.
fn half_max_sigma(u: &[f64], r: &[f64], peak: usize, floor: f64) -> Option<f64> {
    let half = floor + 0.5 * (r[peak] - floor);
    if !(r[peak] > floor) {
        return None;
    }
    let left = (0..peak)
        .rev()
        .find(|&i| r[i] < half)
        .map(|i| u[peak] - u[i]);
    let right = (peak + 1..r.len())
        .find(|&i| r[i] < half)
        .map(|i| u[i] - u[peak]);
    let hw = match (left, right) {
        (Some(a), Some(b)) => a.min(b),
        (a, b) => a.or(b)?,
    };
    Some(hw / (0.5 * FWHM_PER_SIGMA))
}

fn polyfit(u: &[f64], v: &[f64], degree: usize) -> Option<Vec<f64>> {
    let n = degree + 1;
    let a = DMatrix::from_fn(u.len(), n, |i, j| u[i].powi(j as i32));
    let b = DVector::from_column_slice(v);
    let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * b))?;
    Some(coef.iter().copied().collect())
}

/// Fits a degree-2 polynomial baseline plus `n_peaks` Gaussians to the whole
/// trace. Points outside `exclusion` seed the baseline; maxima inside it seed
/// the peak centers.
pub fn fit_baseline_and_peaks(
    x: &[f64],
    y: &[f64],
    n_peaks: usize,
    exclusion: (f64, f64),
) -> Result<PeakFit> {
    check_trace(x, y)?;
    if !(1..=2).contains(&n_peaks) {
        return Err(Error::domain(
            MODULE,
            format!("n_peaks must be 1 or 2, got {n_peaks}"),
        ));
    }
    let (ex_lo, ex_hi) = exclusion;
    if !(ex_lo < ex_hi && ex_lo > x[0] && ex_hi < x[x.len() - 1]) {
        return Err(Error::domain(
            MODULE,
            "exclusion interval must lie strictly inside the trace with margin on both sides",
        ));
    }
    if x.len() < NB + 3 * n_peaks {
        return Err(Error::domain(
            MODULE,
            "too few samples for the requested model",
        ));
    }

    let frame = Frame::new(x, y);
    let u: Vec<f64> = x.iter().map(|&xi| frame.u(xi)).collect();
    let v: Vec<f64> = y
        .iter()
        .map(|&yi| (yi - frame.y_min) / frame.y_span)
        .collect();

    let (out_u, out_v): (Vec<f64>, Vec<f64>) = u
        .iter()
        .zip(&v)
        .zip(x)
        .filter(|(_, &xi)| xi < ex_lo || xi > ex_hi)
        .map(|((a, b), _)| (*a, *b))
        .unzip();
    let degree = BASELINE_DEGREE.min(out_u.len().saturating_sub(1));
    let fitted = if out_u.is_empty() {
        None
    } else {
        polyfit(&out_u, &out_v, degree)
    };
    let mut baseline = fitted.unwrap_or_else(|| vec![0.0]);
    baseline.resize(NB, 0.0);
    let base_at = |ui: f64| baseline.iter().rev().fold(0.0, |acc, c| acc * ui + c);

    let inside: Vec<usize> = (0..x.len())
        .filter(|&i| x[i] >= ex_lo && x[i] <= ex_hi)
        .collect();
    let residual: Vec<f64> = v.iter().zip(&u).map(|(vi, &ui)| vi - base_at(ui)).collect();
    let mut seeds: Vec<FoundPeak> = if inside.len() >= 3 {
        let xs: Vec<f64> = inside.iter().map(|&i| x[i]).collect();
        let rs: Vec<f64> = inside.iter().map(|&i| residual[i]).collect();
        let floor = rs.iter().copied().fold(f64::INFINITY, f64::min);
        let lifted: Vec<f64> = rs.iter().map(|r| r - floor).collect();
        if lifted.iter().any(|&r| r > 0.0) {
            find_peaks(&xs, &lifted, PEAK_SEED_PROMINENCE)?
                .into_iter()
                .map(|p| FoundPeak {
                    index: inside[p.index],
                    ..p
                })
                .collect()
        } else {
            Vec::new()
        }
    } else {
        Vec::new()
    };
    seeds.sort_by(|a, b| b.height.total_cmp(&a.height).then(a.index.cmp(&b.index)));
    seeds.truncate(n_peaks);
    let degraded_init = seeds.len() < n_peaks;
    let width = ex_hi - ex_lo;
    let mut centers: Vec<f64> = if degraded_init {
        (0..n_peaks)
            .map(|k| ex_lo + width * (k + 1) as f64 / (n_peaks + 1) as f64)
            .collect()
    } else {
        seeds.iter().map(|p| p.position).collect()
    };
    centers.sort_by(f64::total_cmp);

    // Two starts: the fixed-width seed, and per-peak widths read off the
    // half-maximum crossings. The lower final cost wins.
    let sigma0 = width / (4.0 * n_peaks as f64) / frame.x_half;
    let mut fixed = baseline.clone();
    let mut measured = baseline.clone();
    for &c in &centers {
        let uc = frame.u(c);
        let i = x.partition_point(|&xi| xi < c).min(x.len() - 1);
        let amp = residual[i].max(1e-3);
        fixed.extend([amp, uc, sigma0]);
        let sigma = half_max_sigma(&u, &residual, i, base_floor(&residual, &inside))
            .map_or(sigma0, |sg| sg.clamp(0.5 * (u[1] - u[0]), sigma0));
        measured.extend([amp, uc, sigma]);
    }
    let mut best: Option<Solution> = None;
    let mut last_cost = f64::NAN;
    for start in [fixed, measured] {
        match levenberg_marquardt(start, &u, &v) {
            Ok(sol) if best.as_ref().is_none_or(|b| sol.cost < b.cost) => best = Some(sol),
            Ok(_) => {}
            Err(c) => last_cost = c,
        }
    }
    let solution = best.ok_or_else(|| {
        let rms = (2.0 * last_cost / x.len() as f64).sqrt() * frame.y_span;
        Error::numeric(
            MODULE,
            format!(
                "peak fit did not converge in {MAX_ITERATIONS} iterations (rms residual {rms:.6e})"
            ),
        )
    })?;

    // back to trace units: y = y_min + span·b(u), u = (x − m)/h
    let p = &solution.params;
    let (m, h, s) = (frame.x_mid, frame.x_half, frame.y_span);
    let (b0, b1, b2) = (p[0], p[1], p[2]);
    let baseline = vec![
        frame.y_min + s * (b0 - b1 * m / h + b2 * m * m / (h * h)),
        s * (b1 / h - 2.0 * b2 * m / (h * h)),
        s * b2 / (h * h),
    ];
    let mut peaks: Vec<GaussianPeak> = p[NB..]
        .chunks_exact(3)
        .map(|q| GaussianPeak {
            amplitude: q[0] * s,
            center: m + q[1] * h,
            sigma: q[2] * h,
        })
        .collect();
    peaks.sort_by(|a, b| a.center.total_cmp(&b.center));
    Ok(PeakFit {
        baseline,
        peaks,
        rms_residual: (2.0 * solution.cost / x.len() as f64).sqrt() * s,
        iterations: solution.iterations,
        degraded_init,
    })
}

/// Autler–Townes doublet measured on one spectral branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtExtraction {
    pub branch_center: f64,
    pub delta_f: f64,
    pub peak_pair: Vec<GaussianPeak>,
    /// Separation below the resolution threshold, or the doublet fit failed.
    pub unresolved: bool,
}

/// Fits a two-Gaussian doublet within `hint ± window` and reports its separation.
///
/// The central 80% of the window is treated as the peak region; the outer
/// margins anchor the baseline.
pub fn extract_at_splitting(
    spectrum: &Spectrum,
    branch_hint: f64,
    window: f64,
) -> Result<AtExtraction> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::domain(MODULE, "window must be positive"));
    }
    let (x, y) = spectrum.window(branch_hint - window, branch_hint + window);
    if x.len() < 5 {
        return Err(Error::domain(
            MODULE,
            format!("window holds {} samples, at least 5 required", x.len()),
        ));
    }
    let exclusion = (branch_hint - 0.8 * window, branch_hint + 0.8 * window);
    match fit_baseline_and_peaks(&x, &y, 2, exclusion) {
        Ok(fit) => {
            let sep = fit.peak_separation()?;
            let center = 0.5 * (fit.peaks[0].center + fit.peaks[1].center);
            Ok(AtExtraction {
                branch_center: center,
                delta_f: sep,
                unresolved: sep < UNRESOLVED_FRACTION * fit.mean_fwhm(),
                peak_pair: fit.peaks,
            })
        }
        Err(Error::Numeric { .. }) => {
            let fit = fit_baseline_and_peaks(&x, &y, 1, exclusion)?;
            Ok(AtExtraction {
                branch_center: fit.peaks[0].center,
                delta_f: 0.0,
                peak_pair: fit.peaks,
                unresolved: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Full width at half maximum of the highest peak in `[lo, hi]`, from linearly
/// interpolated half-maximum crossings.
pub fn measure_fwhm(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Result<f64> {
    check_trace(x, y)?;
    let idx: Vec<usize> = (0..x.len()).filter(|&i| x[i] >= lo && x[i] <= hi).collect();
    let &top = idx
        .iter()
        .max_by(|&&a, &&b| y[a].total_cmp(&y[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::domain(MODULE, "no samples in the requested range"))?;
    let half = 0.5 * y[top];
    let mut l = top;
    while l > 0 && y[l] > half {
        l -= 1;
    }
    let mut r = top;
    while r + 1 < x.len() && y[r] > half {
        r += 1;
    }
    if y[l] > half || y[r] > half {
        return Err(Error::domain(
            MODULE,
            "peak does not fall to half maximum inside the trace",
        ));
    }
    let cross = |a: usize, b: usize| x[a] + (half - y[a]) / (y[b] - y[a]) * (x[b] - x[a]);
    Ok(cross(r - 1, r) - cross(l, l + 1))
}
