//! Portable pixmap heatmaps and gnuplot scripts.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

/// Viridis anchors, interpolated linearly.
const SEQUENTIAL: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Blue, white, red for signed maps.
const DIVERGING: [[f64; 3]; 3] = [
    [33.0, 102.0, 172.0],
    [247.0, 247.0, 247.0],
    [178.0, 24.0, 43.0],
];

fn lerp_palette(palette: &[[f64; 3]], t: f64) -> [u8; 3] {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = t * (palette.len() - 1) as f64;
    let i = (pos.floor() as usize).min(palette.len() - 2);
    let f = pos - i as f64;
    let mut px = [0u8; 3];
    for (k, out) in px.iter_mut().enumerate() {
        *out = (palette[i][k] + f * (palette[i + 1][k] - palette[i][k])).round() as u8;
    }
    px
}

/// Binary PPM (P6) of a map, row 0 at the bottom so +y points up.
/// Each map cell becomes a `scale`×`scale` block.
pub fn heatmap_ppm(values: &Array2<f64>, signed: bool, scale: usize) -> Vec<u8> {
    let scale = scale.max(1);
    let (rows, cols) = values.dim();
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let color = |v: f64| -> [u8; 3] {
        if signed {
            let m = lo.abs().max(hi.abs());
            let t = if m > 0.0 { 0.5 + 0.5 * v / m } else { 0.5 };
            lerp_palette(&DIVERGING, t)
        } else {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            lerp_palette(&SEQUENTIAL, t)
        }
    };
    let (w, h) = (cols * scale, rows * scale);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for r in (0..rows).rev() {
        let line: Vec<u8> = (0..cols)
            .flat_map(|c| color(values[(r, c)]).repeat(scale))
            .collect();
        for _ in 0..scale {
            out.extend_from_slice(&line);
        }
    }
    out
}

fn quote(path: &Path) -> String {
    path.display().to_string().replace('\'', "''")
}

/// Script plotting the `delta_c0_hz,value` columns of a spectrum CSV in MHz.
pub fn spectrum_script(csv: &Path, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set title '{}'", title.replace('\'', "''"));
    let _ = writeln!(s, "set xlabel 'coupling detuning (MHz)'");
    let _ = writeln!(s, "set ylabel 'EIT signal (arb.)'");
    let _ = writeln!(
        s,
        "plot '{}' skip 1 using ($1/1e6):2 with lines notitle",
        quote(csv)
    );
    s
}

/// Script for a profile CSV with columns `position_mm,value[,fit]`.
pub fn profile_script(csv: &Path, with_fit: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set xlabel 'position (mm)'");
    let _ = writeln!(s, "set ylabel '|E| (V/m)'");
    let data = quote(csv);
    if with_fit {
        let _ = writeln!(
            s,
            "plot '{data}' skip 1 using 1:2 with points title 'profile', '{data}' skip 1 using 1:3 with lines title 'fit'"
        );
    } else {
        let _ = writeln!(s, "plot '{data}' skip 1 using 1:2 with linespoints notitle");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size() {
        let m = Array2::from_shape_fn((3, 4), |(r, c)| (r * 4 + c) as f64);
        let img = heatmap_ppm(&m, false, 2);
        let header = b"P6\n8 6\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 8 * 6 * 3);
        // bottom-left pixel is the minimum, drawn last
        assert_eq!(&img[img.len() - 8 * 3..img.len() - 8 * 3 + 3], &[68, 1, 84]);
    }

    #[test]
    fn signed_zero_is_white() {
        let m = Array2::from_shape_vec((1, 3), vec![-1.0, 0.0, 1.0]).unwrap();
        let img = heatmap_ppm(&m, true, 1);
        let px = &img[img.len() - 9..];
        assert_eq!(&px[3..6], &[247, 247, 247]);
        assert_eq!(&px[..3], &[33, 102, 172]);
    }

    #[test]
    fn constant_map_does_not_divide_by_zero() {
        let img = heatmap_ppm(&Array2::from_elem((2, 2), 5.0), false, 1);
        assert!(img.ends_with(&[68, 1, 84]));
    }
}
