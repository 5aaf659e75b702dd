use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fluorosense::analysis::{RatioMap, RocCurve};
use fluorosense::pipeline::Summary;
use fluorosense::scanner::ScanTable;
use fluorosense::spectral::Spectrum;
use fluorosense_cli::manifest::{sha256_hex, RunManifest};

fn fluorosense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluorosense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn synth_writes_three_spectra_with_the_expected_peaks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fluorosense(&["synth", "--out", path(tmp.path())]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["healthy", "tumour_centre", "margin"] {
        assert!(tmp.path().join(format!("spectrum_{name}.csv")).is_file());
    }
    let file = fs::File::open(tmp.path().join("spectrum_tumour_centre.csv")).unwrap();
    let s = Spectrum::read_csv(file, "centre").unwrap();
    let v = s.values();
    let maxima: Vec<f64> = (1..v.len() - 1)
        .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
        .map(|i| s.grid().wavelength(i))
        .collect();
    assert!(
        maxima.iter().any(|m| (m - 635.0).abs() <= 3.0),
        "{maxima:?}"
    );
    assert!(
        maxima.iter().any(|m| (m - 704.0).abs() <= 5.0),
        "{maxima:?}"
    );
}

#[test]
fn malformed_config_exits_with_code_two_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[scan]\nstepp = 0.5\n").unwrap();
    let out = fluorosense(&["synth", "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepp"));

    fs::write(&cfg, "[detector]\nadc_bits = 0\n").unwrap();
    let out = fluorosense(&["scan", "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = fluorosense(&["scan", "--config", "/nonexistent.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_scan_data_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let scan = tmp.path().join("scan.csv");
    fs::write(
        &scan,
        "x_mm,y_mm,counts_514,counts_635,truth\n0.5,0.5,10,x,0\n",
    )
    .unwrap();
    let out = fluorosense(&["analyze", "--out", path(tmp.path()), path(&scan)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("counts_635"));

    // a scan with no tumour cells
    fs::write(
        &scan,
        "x_mm,y_mm,counts_514,counts_635,truth\n0.5,0.5,10,3,0\n1.5,0.5,10,4,0\n",
    )
    .unwrap();
    let out = fluorosense(&["analyze", "--out", path(tmp.path()), path(&scan)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("single class"));
}

#[test]
fn scan_then_analyze_matches_report() {
    let tmp = tempfile::tempdir().unwrap();
    let scan_dir = tmp.path().join("scan");
    let an_dir = tmp.path().join("analysis");
    let report_dir = tmp.path().join("report");
    assert!(fluorosense(&["scan", "--out", path(&scan_dir)])
        .status
        .success());
    let out = fluorosense(&[
        "analyze",
        "--plots",
        "--out",
        path(&an_dir),
        path(&scan_dir.join("scan.csv")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(fluorosense(&["report", "--out", path(&report_dir)])
        .status
        .success());
    for name in ["ratio_map.csv", "roc.csv", "summary.toml"] {
        assert_eq!(
            fs::read(an_dir.join(name)).unwrap(),
            fs::read(report_dir.join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(an_dir.join("ratio_map.svg").is_file());
    assert!(an_dir.join("roc.svg").is_file());

    let summary: Summary =
        toml::from_str(&fs::read_to_string(an_dir.join("summary.toml")).unwrap()).unwrap();
    let r_s = summary.r_s_tumour.unwrap();
    assert!((-1.0..=1.0).contains(&r_s));
}

#[test]
fn emitted_csvs_round_trip_through_the_readers() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(fluorosense(&["report", "--out", path(tmp.path())])
        .status
        .success());
    let dir = tmp.path();

    let bytes = fs::read(dir.join("scan.csv")).unwrap();
    let table = ScanTable::read_csv(bytes.as_slice(), "scan.csv").unwrap();
    let mut again = Vec::new();
    table.write_csv(&mut again).unwrap();
    assert_eq!(bytes, again);

    let bytes = fs::read(dir.join("roc.csv")).unwrap();
    let curve = RocCurve::read_csv(bytes.as_slice(), "roc.csv").unwrap();
    let mut again = Vec::new();
    curve.write_csv(&mut again).unwrap();
    assert_eq!(bytes, again);

    let bytes = fs::read(dir.join("ratio_map.csv")).unwrap();
    let rows = RatioMap::read_csv(bytes.as_slice(), "ratio_map.csv").unwrap();
    assert_eq!(rows.len(), table.positions.len());

    let bytes = fs::read(dir.join("oracle/cell_r005_c005.csv")).unwrap();
    let s = Spectrum::read_csv(bytes.as_slice(), "oracle").unwrap();
    let mut again = Vec::new();
    s.write_csv(&mut again).unwrap();
    assert_eq!(bytes, again);

    let manifest = read_manifest(dir);
    for (name, digest) in &manifest.outputs {
        assert_eq!(
            &sha256_hex(&fs::read(dir.join(name)).unwrap()),
            digest,
            "{name}"
        );
    }
    assert_eq!(
        manifest.config_sha256,
        sha256_hex(&fs::read(dir.join("config.toml")).unwrap())
    );
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    assert!(
        fluorosense(&["report", "--seed", "11", "--out", path(&first)])
            .status
            .success()
    );
    let cfg = first.join("config.toml");
    assert!(
        fluorosense(&["report", "--config", path(&cfg), "--out", path(&second)])
            .status
            .success()
    );
    let (a, b) = (read_manifest(&first), read_manifest(&second));
    assert_eq!(a.seed, 11);
    let strip = |m: &RunManifest| {
        let mut o = m.outputs.clone();
        o.remove("config.toml");
        o
    };
    // only the echoed output directory differs
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn no_noise_uniform_field_gives_identical_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("flat.toml");
    fs::write(&cfg, "[phantom]\nppix_peak_amp = 0.0\n").unwrap();
    let out = fluorosense(&[
        "scan",
        "--no-noise",
        "--config",
        path(&cfg),
        "--out",
        path(tmp.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let bytes = fs::read(tmp.path().join("scan.csv")).unwrap();
    let table = ScanTable::read_csv(bytes.as_slice(), "scan.csv").unwrap();
    assert!(table.counts_514.iter().all(|c| *c == table.counts_514[0]));
    assert!(table.counts_635.iter().all(|c| *c == table.counts_635[0]));
}

#[test]
fn line_profile_uses_half_millimetre_steps() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(fluorosense(&["scan", "--out", path(tmp.path())])
        .status
        .success());
    let text = fs::read_to_string(tmp.path().join("line_profile.csv")).unwrap();
    let displacements: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(displacements.len(), 21);
    for (k, d) in displacements.iter().enumerate() {
        assert!((d - 0.5 * k as f64).abs() < 1e-9);
    }
}
