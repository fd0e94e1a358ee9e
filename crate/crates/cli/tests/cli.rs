use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rydscan"))
}

fn scene(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenes")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn line_scan(scene_file: &Path, out: &Path, z: &str, half: &str, step: &str) {
    let neg = format!("-{half}");
    let full = format!("{}", 2.0 * half.parse::<f64>().unwrap());
    let o = run(&[
        "scan",
        "--scene",
        s(scene_file),
        "--z-mm",
        z,
        "--x0-mm",
        &neg,
        "--y0-mm",
        "0",
        "--lx-mm",
        &full,
        "--ly-mm",
        "0",
        "--dx-mm",
        step,
        "--out",
        s(out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn region_labels_for_the_standard_horn() {
    let v = ok_json(&["region", "--z-mm", "17.5,73.5,123.5"]);
    let labels: Vec<&str> = v["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["region"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["RNF", "RDNF", "RDNF"]);
}

#[test]
fn spectrum_sweep_lands_on_branch_positions() {
    let dir = tempfile::tempdir().unwrap();
    for dp0 in ["-80", "-40", "40", "80"] {
        let out = dir.path().join(format!("s{dp0}.csv"));
        let v = ok_json(&["spectrum", "--delta-p0-mhz", dp0, "--out", s(&out)]);
        let peaks: Vec<f64> = v["peak_positions_mhz"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p.as_f64().unwrap())
            .collect();
        let mut expected: Vec<f64> = v["branch_positions_mhz"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p.as_f64().unwrap())
            .collect();
        expected.sort_by(f64::total_cmp);
        assert_eq!(peaks.len(), 2, "Δp0 = {dp0}: {peaks:?}");
        for (p, e) in peaks.iter().zip(&expected) {
            assert!((p - e).abs() < 2.0, "Δp0 = {dp0}: peak {p} vs {e}");
        }
        assert!(out.exists() && out.with_extension("json").exists());
    }
    let out = dir.path().join("zero.csv");
    let v = ok_json(&["spectrum", "--delta-p0-mhz", "0", "--out", s(&out)]);
    assert_eq!(v["peak_positions_mhz"].as_array().unwrap().len(), 1);
}

#[test]
fn rf_drive_splits_the_ctr_branch() {
    let dir = tempfile::tempdir().unwrap();
    let count = |rf: &str| {
        let out = dir.path().join(format!("rf{rf}.csv"));
        let v = ok_json(&[
            "spectrum",
            "--omega-rf-mhz",
            rf,
            "--grid-lo-mhz",
            "-165",
            "--grid-hi-mhz",
            "-100",
            "--out",
            s(&out),
        ]);
        v["peak_positions_mhz"].as_array().unwrap().len()
    };
    assert_eq!(count("0"), 1);
    assert_eq!(count("10"), 2);
}

#[test]
fn missing_or_invalid_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = run(&[
        "spectrum",
        "--config",
        s(&dir.path().join("absent.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists() && !out.with_extension("json").exists());

    // write a valid config, then corrupt one field
    let good = dir.path().join("good.csv");
    ok_json(&[
        "spectrum",
        "--grid-lo-mhz",
        "-1",
        "--grid-hi-mhz",
        "1",
        "--out",
        s(&good),
    ]);
    let text = std::fs::read_to_string(good.with_extension("json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["gamma_2g_hz"] = Value::from(-1.0);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, cfg.to_string()).unwrap();
    let o = run(&["spectrum", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma_2g_hz"));
    assert!(!out.exists());
}

#[test]
fn usage_and_module_errors_use_distinct_codes() {
    assert_eq!(run(&["scan", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["region", "--z-mm", "-3"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.map");
    // the scan plane sits on the aperture: rejected while computing
    let o = run(&[
        "scan",
        "--scene",
        s(&scene("horn.json")),
        "--z-mm",
        "0",
        "--x0-mm",
        "0",
        "--y0-mm",
        "0",
        "--lx-mm",
        "0",
        "--ly-mm",
        "0",
        "--dx-mm",
        "1",
        "--out",
        s(&m),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scan:"));
}

#[test]
fn dual_wire_pipeline_resolves_both_separations() {
    let dir = tempfile::tempdir().unwrap();
    for (file, step, nominal, tol) in [
        ("wires_0p6.json", "0.03", 0.62, 0.05),
        ("wires_1p2.json", "0.03", 1.2, 0.06),
    ] {
        let map = dir.path().join(format!("{file}.map"));
        line_scan(&scene(file), &map, "0.3", "1.5", step);
        let v = ok_json(&[
            "resolve",
            s(&map),
            "--exclude-lo-mm",
            "-1.2",
            "--exclude-hi-mm",
            "1.2",
        ]);
        let sep = v["separation"].as_f64().unwrap();
        assert!((sep - nominal).abs() <= tol, "{file}: separation {sep}");
    }
}

#[test]
fn tag_pipeline_improves_sbr() {
    let dir = tempfile::tempdir().unwrap();
    let (with, without, diff) = (
        dir.path().join("w.map"),
        dir.path().join("wo.map"),
        dir.path().join("d.map"),
    );
    let tag = scene("tag.json");
    // independent noise draws: equal seeds would cancel exactly outside the shadow
    for (out, seed, extra) in [(&with, "1", None), (&without, "2", Some("--without-tags"))] {
        let mut args = vec![
            "scan",
            "--scene",
            s(&tag),
            "--z-mm",
            "17.5",
            "--x0-mm",
            "-25",
            "--y0-mm",
            "-25",
            "--lx-mm",
            "50",
            "--ly-mm",
            "50",
            "--dx-mm",
            "1",
            "--noise-vm",
            "0.005",
            "--seed",
            seed,
            "--out",
            s(out),
        ];
        args.extend(extra);
        assert!(run(&args).status.success());
    }
    let v = ok_json(&[
        "diff",
        s(&with),
        s(&without),
        "--box-mm",
        "-15,-10,15,10",
        "--out",
        s(&diff),
    ]);
    assert!(
        v["sbr_differential"].as_f64().unwrap() > v["sbr_raw"].as_f64().unwrap(),
        "{v}"
    );
    assert!(
        v["snr_differential"].as_f64().unwrap() > v["snr_raw"].as_f64().unwrap(),
        "{v}"
    );
    let header = std::fs::read_to_string(&diff).unwrap();
    assert!(header.contains("# signed=true"));
}

#[test]
fn compare_with_itself_is_unity() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("h.map");
    let o = run(&[
        "scan",
        "--scene",
        s(&scene("horn.json")),
        "--z-mm",
        "17.5",
        "--x0-mm",
        "-20",
        "--y0-mm",
        "-20",
        "--lx-mm",
        "40",
        "--ly-mm",
        "40",
        "--dx-mm",
        "2",
        "--out",
        s(&map),
    ]);
    assert!(o.status.success());
    let v = ok_json(&["compare", s(&map), s(&map)]);
    assert_eq!(v["ssim"].as_f64(), Some(1.0));
}

#[test]
fn outputs_are_byte_identical_across_reruns_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let scan_to = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let ppm = out.with_extension("ppm");
        let o = run(&[
            "scan",
            "--scene",
            s(&scene("horn_probe.json")),
            "--z-mm",
            "17.5",
            "--x0-mm",
            "-10",
            "--y0-mm",
            "-10",
            "--lx-mm",
            "20",
            "--ly-mm",
            "20",
            "--dx-mm",
            "2",
            "--noise-vm",
            "0.01",
            "--seed",
            "4",
            "--ordering",
            "serpentine",
            "--jobs",
            jobs,
            "--out",
            s(&out),
            "--heatmap",
            s(&ppm),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(&out).unwrap(), std::fs::read(&ppm).unwrap())
    };
    let a = scan_to("a.map", "1");
    let b = scan_to("a.map", "1");
    let c = scan_to("c.map", "4");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.1.starts_with(b"P6\n"));
}

#[test]
fn help_states_units_of_numeric_flags() {
    for cmd in ["spectrum", "scan", "compare", "resolve", "diff", "region"] {
        let o = run(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            let flag = line.split_whitespace().next().unwrap();
            let unit = ["-mm", "-mhz", "-ghz", "-vm", "-ea0"]
                .iter()
                .find(|u| flag.ends_with(*u));
            if let Some(u) = unit {
                let word = match *u {
                    "-mm" => "mm",
                    "-mhz" => "MHz",
                    "-ghz" => "GHz",
                    "-vm" => "V/m",
                    _ => "e·a0",
                };
                assert!(
                    line.contains(word),
                    "{cmd} {flag}: help lacks unit {word}: {line}"
                );
            }
        }
    }
}
