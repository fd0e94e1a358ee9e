//! Field-map fidelity and detection metrics: windowed SSIM with its
//! luminance/contrast/structure decomposition, difference maps, SBR and box S/N.

use ndarray::{s, Array2};
use serde::Serialize;

use crate::error::{Error, Result};

const MODULE: &str = "metrics";

/// SSIM exponents, stability constants and window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SsimParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the normalized maps.
    pub dynamic_range: f64,
    pub window: usize,
    pub stride: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: 8,
            stride: 1,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    /// Unit exponents, where the three-factor product collapses to the two-factor form.
    pub fn is_compact(&self) -> bool {
        self.alpha == 1.0 && self.beta == 1.0 && self.gamma == 1.0
    }

    fn validate(&self) -> Result<()> {
        if self.window < 2 || self.stride == 0 {
            return Err(Error::domain(
                MODULE,
                "SSIM window must be ≥ 2 and stride ≥ 1",
            ));
        }
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.k1,
            self.k2,
            self.dynamic_range,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::domain(
                MODULE,
                "SSIM exponents and constants must be positive",
            ));
        }
        Ok(())
    }
}

/// First and second moments of a pair of windows (N − 1 normalization).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub mu_i: f64,
    pub mu_j: f64,
    pub sigma_i: f64,
    pub sigma_j: f64,
    pub sigma_ij: f64,
    /// Unrounded variances; σ² recomputed from σ differs in the last bit.
    pub var_i: f64,
    pub var_j: f64,
    pub n: usize,
}

fn stats_of<'a>(
    a: impl Iterator<Item = &'a f64> + Clone,
    b: impl Iterator<Item = &'a f64> + Clone,
    n: usize,
) -> WindowStats {
    let nf = n as f64;
    let mu_i = a.clone().sum::<f64>() / nf;
    let mu_j = b.clone().sum::<f64>() / nf;
    let (mut vi, mut vj, mut cij) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        let (dx, dy) = (x - mu_i, y - mu_j);
        vi += dx * dx;
        vj += dy * dy;
        cij += dx * dy;
    }
    let dof = nf - 1.0;
    WindowStats {
        mu_i,
        mu_j,
        sigma_i: (vi / dof).sqrt(),
        sigma_j: (vj / dof).sqrt(),
        sigma_ij: cij / dof,
        var_i: vi / dof,
        var_j: vj / dof,
        n,
    }
}

pub fn window_stats(win_i: &[f64], win_j: &[f64]) -> Result<WindowStats> {
    if win_i.len() != win_j.len() {
        return Err(Error::domain(MODULE, "windows differ in size"));
    }
    if win_i.len() < 2 {
        return Err(Error::domain(MODULE, "window needs at least 2 pixels"));
    }
    Ok(stats_of(win_i.iter(), win_j.iter(), win_i.len()))
}

/// Luminance, contrast and structure comparisons (l, c, s).
pub fn ssim_components(st: &WindowStats, p: &SsimParams) -> (f64, f64, f64) {
    let (c1, c2, c3) = (p.c1(), p.c2(), p.c3());
    let l = (2.0 * st.mu_i * st.mu_j + c1) / (st.mu_i * st.mu_i + st.mu_j * st.mu_j + c1);
    let c = (2.0 * st.sigma_i * st.sigma_j + c2)
        / (st.sigma_i * st.sigma_i + st.sigma_j * st.sigma_j + c2);
    let s = (st.sigma_ij + c3) / (st.sigma_i * st.sigma_j + c3);
    (l, c, s)
}

fn pow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else {
        x.powf(e)
    }
}

/// lᵅ·cᵝ·sᵞ for one window.
pub fn ssim_general(st: &WindowStats, p: &SsimParams) -> f64 {
    let (l, c, s) = ssim_components(st, p);
    pow(l, p.alpha) * pow(c, p.beta) * pow(s, p.gamma)
}

/// Two-factor SSIM, equal to [`ssim_general`] for unit exponents with C3 = C2/2.
pub fn compact_ssim(st: &WindowStats, p: &SsimParams) -> f64 {
    let (c1, c2) = (p.c1(), p.c2());
    let (var_i, var_j) = (st.var_i, st.var_j);
    ((2.0 * st.mu_i * st.mu_j + c1) * (2.0 * st.sigma_ij + c2))
        / ((st.mu_i * st.mu_i + st.mu_j * st.mu_j + c1) * (var_i + var_j + c2))
}

/// Scalar SSIM with per-window values and component means.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimResult {
    pub mean: f64,
    pub grid: Array2<f64>,
    pub mean_l: f64,
    pub mean_c: f64,
    pub mean_s: f64,
}

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::domain(
            MODULE,
            format!("map shapes differ: {:?} vs {:?}", a.dim(), b.dim()),
        ));
    }
    Ok(())
}

fn window_positions(len: usize, win: usize, stride: usize) -> Vec<usize> {
    (0..=len - win).step_by(stride).collect()
}

/// Per-window statistics over every fully contained window position.
/// A window larger than the map is clipped to the map extent.
pub fn window_grid(
    a: &Array2<f64>,
    b: &Array2<f64>,
    p: &SsimParams,
) -> Result<Array2<WindowStats>> {
    check_shapes(a, b)?;
    p.validate()?;
    let (rows, cols) = a.dim();
    let (wr, wc) = (p.window.min(rows), p.window.min(cols));
    if wr * wc < 2 {
        return Err(Error::domain(MODULE, "map too small for a 2-pixel window"));
    }
    let rs = window_positions(rows, wr, p.stride);
    let cs = window_positions(cols, wc, p.stride);
    Ok(Array2::from_shape_fn((rs.len(), cs.len()), |(i, j)| {
        let (r, c) = (rs[i], cs[j]);
        let wa = a.slice(s![r..r + wr, c..c + wc]);
        let wb = b.slice(s![r..r + wr, c..c + wc]);
        stats_of(wa.iter(), wb.iter(), wr * wc)
    }))
}

/// Mean windowed SSIM between two normalized maps.
pub fn ssim_index(a: &Array2<f64>, b: &Array2<f64>, p: &SsimParams) -> Result<SsimResult> {
    let stats = window_grid(a, b, p)?;
    let compact = p.is_compact();
    let grid = stats.mapv(|st| {
        if compact {
            compact_ssim(&st, p)
        } else {
            ssim_general(&st, p)
        }
    });
    let n = stats.len() as f64;
    let (mut ml, mut mc, mut ms) = (0.0, 0.0, 0.0);
    for st in stats.iter() {
        let (l, c, s) = ssim_components(st, p);
        ml += l;
        mc += c;
        ms += s;
    }
    Ok(SsimResult {
        mean: grid.sum() / n,
        grid,
        mean_l: ml / n,
        mean_c: mc / n,
        mean_s: ms / n,
    })
}

/// Divides by the global maximum; an all-zero (or non-positive) map is returned unchanged.
pub fn normalize_map(m: &Array2<f64>) -> Array2<f64> {
    let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        m.mapv(|v| v / max)
    } else {
        m.clone()
    }
}

/// Pointwise difference of the two maps after normalizing each.
pub fn difference_map(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(a, b)?;
    Ok(normalize_map(a) - normalize_map(b))
}

/// Signed pointwise subtraction of a background image.
pub fn background_subtract(
    with_target: &Array2<f64>,
    background: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_shapes(with_target, background)?;
    Ok(with_target - background)
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Signal-to-background ratio: signal range over background range.
pub fn sbr(signal: &[f64], background: &[f64]) -> Result<f64> {
    if signal.is_empty() || background.is_empty() {
        return Err(Error::domain(MODULE, "SBR traces must be non-empty"));
    }
    let (smin, smax) = range(signal);
    let (bmin, bmax) = range(background);
    if !(bmax > bmin) {
        return Err(Error::domain(MODULE, "flat background: SBR undefined"));
    }
    Ok((smax - smin) / (bmax - bmin))
}

/// Pixel rectangle: rows `row0..row0+rows`, columns `col0..col0+cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PixelBox {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PixelBox {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row0 && r < self.row0 + self.rows && c >= self.col0 && c < self.col0 + self.cols
    }
}

/// Squared-field energy inside the box over the energy outside it.
pub fn snr_box(m: &Array2<f64>, b: PixelBox) -> Result<f64> {
    let (rows, cols) = m.dim();
    if b.rows == 0 || b.cols == 0 || b.row0 + b.rows > rows || b.col0 + b.cols > cols {
        return Err(Error::domain(
            MODULE,
            "box must be non-empty and lie inside the map",
        ));
    }
    if b.rows * b.cols == rows * cols {
        return Err(Error::domain(
            MODULE,
            "box covers the whole map; no outside region",
        ));
    }
    let (mut inside, mut outside) = (0.0, 0.0);
    for ((r, c), v) in m.indexed_iter() {
        if b.contains(r, c) {
            inside += v * v;
        } else {
            outside += v * v;
        }
    }
    if outside == 0.0 {
        return Err(Error::domain(
            MODULE,
            "no energy outside the box: S/N undefined",
        ));
    }
    Ok(inside / outside)
}

/// Metric summary written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub ssim: f64,
    pub mean_l: f64,
    pub mean_c: f64,
    pub mean_s: f64,
    pub windows: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_grid_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs_difference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sbr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    pub params: SsimParams,
}

impl MetricReport {
    pub fn from_ssim(result: &SsimResult, params: SsimParams) -> Self {
        Self {
            ssim: result.mean,
            mean_l: result.mean_l,
            mean_c: result.mean_c,
            mean_s: result.mean_s,
            windows: [result.grid.nrows(), result.grid.ncols()],
            window_grid_path: None,
            mean_abs_difference: None,
            sbr: None,
            snr: None,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn normalization() {
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 4.0, 2.0, 0.0]).unwrap();
        let n = normalize_map(&m);
        assert_eq!(n, m.mapv(|v| v * 0.25));
        assert_eq!(normalize_map(&n), n);
        let z = Array2::<f64>::zeros((3, 3));
        assert_eq!(normalize_map(&z), z);
    }

    #[test]
    fn hand_computed_window_stats() {
        let st = window_stats(&[1.0; 4], &[1.0; 4]).unwrap();
        assert_eq!((st.mu_i, st.sigma_i, st.sigma_ij), (1.0, 0.0, 0.0));
        let st = window_stats(&[0.0, 2.0], &[0.0, 2.0]).unwrap();
        assert_eq!(st.mu_i, 1.0);
        assert_relative_eq!(st.sigma_i, 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(st.sigma_ij, 2.0);
        let st = window_stats(&[0.0, 2.0], &[2.0, 0.0]).unwrap();
        assert_eq!(st.sigma_ij, -2.0);
        assert!(window_stats(&[1.0], &[1.0]).is_err());
        assert!(window_stats(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn component_examples() {
        let p = SsimParams::default();
        let same = window_stats(&[0.1, 0.5, 0.3], &[0.1, 0.5, 0.3]).unwrap();
        let (l, c, s) = ssim_components(&same, &p);
        assert_relative_eq!(l, 1.0, max_relative = 1e-15);
        assert_relative_eq!(c, 1.0, max_relative = 1e-15);
        assert_relative_eq!(s, 1.0, max_relative = 1e-12);

        let constant = window_stats(&[1.0; 64], &[0.0; 64]).unwrap();
        let (l, c, s) = ssim_components(&constant, &p);
        assert_relative_eq!(l, 1e-4 / (1.0 + 1e-4), max_relative = 1e-12);
        assert_relative_eq!(l, 9.999e-5, max_relative = 1e-4);
        assert_eq!((c, s), (1.0, 1.0));

        let anti = window_stats(&[0.0, 1.0, 0.0, 1.0], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(ssim_components(&anti, &p).2 < 0.0);
    }

    #[test]
    fn constants_follow_defaults() {
        let p = SsimParams::default();
        assert_eq!(p.c1(), 0.01f64.powi(2));
        assert_eq!(p.c2(), 0.03f64.powi(2));
        assert_eq!(p.c3(), p.c2() / 2.0);
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x551_0001);
        let p = SsimParams::default();
        for _ in 0..10 {
            let a = random_map(&mut rng, 20, 17);
            let b = random_map(&mut rng, 20, 17);
            assert_eq!(ssim_index(&a, &a, &p).unwrap().mean, 1.0);
            let ab = ssim_index(&a, &b, &p).unwrap();
            let ba = ssim_index(&b, &a, &p).unwrap();
            assert_eq!(ab.mean, ba.mean);
            assert_eq!(ab.grid, ba.grid);
            assert!(ab.mean < 1.0);
        }
    }

    #[test]
    fn window_grid_geometry() {
        let a = Array2::<f64>::zeros((20, 12));
        let r = ssim_index(&a, &a, &SsimParams::default()).unwrap();
        assert_eq!(r.grid.dim(), (13, 5));
        let strided = SsimParams {
            stride: 4,
            ..SsimParams::default()
        };
        assert_eq!(ssim_index(&a, &a, &strided).unwrap().grid.dim(), (4, 2));
        let small = Array2::<f64>::zeros((3, 5));
        assert_eq!(
            ssim_index(&small, &small, &SsimParams::default())
                .unwrap()
                .grid
                .dim(),
            (1, 1)
        );
        assert!(ssim_index(&a, &small, &SsimParams::default()).is_err());
    }

    #[test]
    fn differences_and_subtraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x551_0002);
        let a = random_map(&mut rng, 6, 5);
        let b = random_map(&mut rng, 6, 5);
        assert!(difference_map(&a, &a).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(
            difference_map(&a, &b).unwrap(),
            -difference_map(&b, &a).unwrap()
        );
        assert!(background_subtract(&a, &a)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert_eq!(
            background_subtract(&a, &b).unwrap(),
            -background_subtract(&b, &a).unwrap()
        );
        let c = random_map(&mut rng, 5, 6);
        assert!(difference_map(&a, &c).is_err());
        assert!(background_subtract(&a, &c).is_err());
    }

    #[test]
    fn sbr_examples() {
        let bg = [0.0, 0.5, 1.0];
        assert_eq!(sbr(&bg, &bg).unwrap(), 1.0);
        assert_relative_eq!(
            sbr(&[0.0, 3.2], &[1.0, 2.0]).unwrap(),
            3.2,
            max_relative = 1e-15
        );
        assert!(sbr(&[1.0], &[2.0, 2.0]).is_err());
        assert!(sbr(&[], &bg).is_err());
    }

    #[test]
    fn snr_examples() {
        let m = Array2::<f64>::ones((4, 4));
        let b = PixelBox {
            row0: 1,
            col0: 1,
            rows: 2,
            cols: 2,
        };
        assert_relative_eq!(snr_box(&m, b).unwrap(), 1.0 / 3.0, max_relative = 1e-15);
        let mut only_inside = Array2::<f64>::zeros((4, 4));
        only_inside[(1, 1)] = 1.0;
        assert!(snr_box(&only_inside, b).is_err());
        let whole = PixelBox {
            row0: 0,
            col0: 0,
            rows: 4,
            cols: 4,
        };
        assert!(snr_box(&m, whole).is_err());
        assert!(snr_box(&m, PixelBox { row0: 3, ..b }).is_err());
    }

    #[test]
    fn report_echoes_params() {
        let a = Array2::from_shape_fn((10, 10), |(r, c)| (r * c) as f64 / 81.0);
        let p = SsimParams::default();
        let report = MetricReport::from_ssim(&ssim_index(&a, &a, &p).unwrap(), p);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["ssim"], 1.0);
        assert_eq!(json["params"]["k2"], 0.03);
        assert_eq!(json["params"]["window"], 8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn window_invariants(
            a in proptest::collection::vec(0.0f64..1.0, 64),
            b in proptest::collection::vec(0.0f64..1.0, 64),
        ) {
            let p = SsimParams::default();
            let st = window_stats(&a, &b).unwrap();
            prop_assert!(st.sigma_i >= 0.0 && st.sigma_j >= 0.0);
            prop_assert!(st.sigma_ij.abs() <= st.sigma_i * st.sigma_j + 1e-12);
            let general = ssim_general(&st, &p);
            prop_assert!((general - compact_ssim(&st, &p)).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&general));
        }

        #[test]
        fn ratios_are_scale_invariant(
            v in proptest::collection::vec(0.01f64..1.0, 36),
            k in 0.1f64..100.0,
        ) {
            let m = Array2::from_shape_vec((6, 6), v).unwrap();
            let b = PixelBox { row0: 2, col0: 2, rows: 2, cols: 3 };
            let scaled = m.mapv(|x| x * k);
            let r0 = snr_box(&m, b).unwrap();
            prop_assert!((snr_box(&scaled, b).unwrap() / r0 - 1.0).abs() < 1e-12);
            let row: Vec<f64> = m.row(2).to_vec();
            let col: Vec<f64> = m.column(0).to_vec();
            let srow: Vec<f64> = scaled.row(2).to_vec();
            let scol: Vec<f64> = scaled.column(0).to_vec();
            if let Ok(base) = sbr(&row, &col) {
                prop_assert!((sbr(&srow, &scol).unwrap() / base - 1.0).abs() < 1e-12);
            }
        }
    }
}
