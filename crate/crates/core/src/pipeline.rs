//! End-to-end runs: phantom generation, spectra, scans and scoring. Every
//! function returns its outputs as named byte buffers so callers decide where
//! they go.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    classify, optimal_threshold, ratio_eq1, ratio_eq2, roc, spearman, ConfusionCounts, RatioMap,
    RocCurve,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::phantom::{generate_phantom, TissueField};
use crate::rng::{substream, Domain};
use crate::scanner::{line_scan, raster_scan, surface_emission, ScanMap, ScanRecord, ScanTable};
use crate::spectral::Spectrum;

/// A named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    /// Path relative to the output directory, `/`-separated.
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Artifact {
            name: name.into(),
            bytes,
        }
    }
}

pub const ORACLE_DIR: &str = "oracle";

pub fn build_phantom(cfg: &ExperimentConfig) -> Result<TissueField> {
    let mut rng = substream(cfg.seed, Domain::Phantom, 0);
    generate_phantom(
        &cfg.phantom,
        &cfg.emission,
        &cfg.grid,
        &cfg.analysis.fit,
        &mut rng,
    )
}

/// Surface emission spectra at the tumour centre, on the nominal margin
/// (one radius out) and in the healthy corner farthest from the tumour, all
/// on the nominal autofluorescence level.
pub fn synth_spectra(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, Spectrum)>> {
    let field = build_phantom(cfg)?;
    let (cx, cy) = cfg.phantom.tumor_center;
    let margin = (cx + cfg.phantom.tumor_radius, cy);
    let far = |c: f64, extent: f64| if c < extent / 2.0 { extent } else { 0.0 };
    let healthy = (far(cx, field.width()), far(cy, field.height()));
    let a = cfg.phantom.autofluor_amp;
    let power = cfg.scan.excitation_power;
    let chain = cfg.optical_chain()?;
    let mut out = Vec::new();
    for (name, (x, y)) in [
        ("healthy", healthy),
        ("tumour_centre", (cx, cy)),
        ("margin", margin),
    ] {
        let (_, p) = field.emission_at(x, y)?;
        out.push((name, surface_emission(a, p, power, &chain)?));
    }
    Ok(out)
}

pub fn synth_artifacts(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    synth_spectra(cfg)?
        .into_iter()
        .map(|(name, s)| {
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            Ok(Artifact::new(format!("spectrum_{name}.csv"), buf))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub field: TissueField,
    pub map: ScanMap,
    pub line: Vec<ScanRecord>,
}

pub fn run_scan(cfg: &ExperimentConfig) -> Result<ScanOutput> {
    let field = build_phantom(cfg)?;
    let chain = cfg.optical_chain()?;
    let map = raster_scan(&field, &cfg.scan, &chain, cfg.seed)?;
    let line_cfg = crate::scanner::ScanConfig {
        record_oracle: false,
        ..cfg.scan
    };
    let line = line_scan(
        &field,
        cfg.line.start,
        cfg.line.end,
        cfg.line.step,
        &line_cfg,
        &chain,
        cfg.seed,
    )?;
    Ok(ScanOutput { field, map, line })
}

/// Line profile CSV:
/// `displacement_mm,x_mm,y_mm,counts_514,counts_635,raw_ratio,normalized_ratio`.
pub fn line_profile_csv(records: &[ScanRecord], alpha: f64) -> Result<Vec<u8>> {
    let raw = records
        .iter()
        .map(|r| {
            ratio_eq2(
                r.reading_635.counts as f64,
                r.reading_514.counts as f64,
                alpha,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = crate::analysis::normalize(&raw)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record([
            "displacement_mm",
            "x_mm",
            "y_mm",
            "counts_514",
            "counts_635",
            "raw_ratio",
            "normalized_ratio",
        ])?;
        let origin = records.first().map(|r| r.position).unwrap_or((0.0, 0.0));
        for (k, r) in records.iter().enumerate() {
            let d = (r.position.0 - origin.0).hypot(r.position.1 - origin.1);
            w.write_record([
                d.to_string(),
                r.position.0.to_string(),
                r.position.1.to_string(),
                r.reading_514.counts.to_string(),
                r.reading_635.counts.to_string(),
                raw[k].to_string(),
                norm[k].to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn scan_artifacts(cfg: &ExperimentConfig, out: &ScanOutput) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    let mut buf = Vec::new();
    out.field.write_csv(&mut buf)?;
    artifacts.push(Artifact::new("phantom.csv", buf));
    let mut buf = Vec::new();
    out.map.write_csv(&mut buf)?;
    artifacts.push(Artifact::new("scan.csv", buf));
    artifacts.push(Artifact::new(
        "line_profile.csv",
        line_profile_csv(&out.line, cfg.analysis.alpha)?,
    ));
    for (name, bytes) in out.map.oracle_files()? {
        artifacts.push(Artifact::new(format!("{ORACLE_DIR}/{name}"), bytes));
    }
    Ok(artifacts)
}

/// Oracle spectra of a scan in record order, if every cell has one.
pub fn oracle_spectra(map: &ScanMap) -> Option<Vec<Spectrum>> {
    map.records.iter().map(|r| r.oracle.clone()).collect()
}

/// Headline numbers of one analysed scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Youden-optimal threshold on the normalised sensor ratio.
    pub optimal_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub alpha: f64,
    pub sensor_threshold: f64,
    /// Cells at or above `sensor_threshold` on the normalised sensor ratio.
    pub tumour_region_cells: usize,
    pub healthy_region_cells: usize,
    /// Spearman correlation of sensor and spectrometer ratios inside the
    /// tumour region.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_s_tumour: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_s_healthy: Option<f64>,
    pub spectrometer_threshold: f64,
    /// Cells at or above `spectrometer_threshold` on the normalised
    /// spectrometer ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrometer_region_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub ratio_map: RatioMap,
    pub predicted: Vec<bool>,
    pub truth: Vec<bool>,
    pub roc: RocCurve,
    pub confusion: ConfusionCounts,
    pub oracle_ratio: Option<Vec<f64>>,
    pub summary: Summary,
}

fn spearman_or_none(x: &[f64], y: &[f64]) -> Option<f64> {
    spearman(x, y).ok()
}

/// Scores a scan against its ground truth and, when spectra are available,
/// against the spectrometer ratios.
pub fn analyze(
    cfg: &ExperimentConfig,
    table: &ScanTable,
    oracle: Option<&[Spectrum]>,
) -> Result<AnalysisOutput> {
    let a = &cfg.analysis;
    let i514: Vec<f64> = table.counts_514.iter().map(|c| *c as f64).collect();
    let i635: Vec<f64> = table.counts_635.iter().map(|c| *c as f64).collect();
    let ratio_map = RatioMap::from_channels(
        table.rows,
        table.cols,
        table.positions.clone(),
        &i635,
        &i514,
        a.alpha,
    )?;
    let predicted = classify(&ratio_map, a.sensor_threshold, true);
    let curve = roc(&ratio_map.normalized_ratio, &table.truth)?;
    let (threshold, confusion) = optimal_threshold(&ratio_map.normalized_ratio, &table.truth)?;

    let oracle_ratio = match oracle {
        Some(spectra) => {
            if spectra.len() != table.positions.len() {
                return Err(Error::LengthMismatch {
                    left: spectra.len(),
                    right: table.positions.len(),
                });
            }
            Some(
                spectra
                    .iter()
                    .map(|s| ratio_eq1(s, &a.fit))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };

    let split = |mask: &[bool], want: bool, values: &[f64]| -> Vec<f64> {
        values
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m == want)
            .map(|(v, _)| *v)
            .collect()
    };
    let (r_s_tumour, r_s_healthy, spectrometer_region_cells) = match &oracle_ratio {
        Some(o) => {
            let sensor = &ratio_map.raw_ratio;
            let tumour = spearman_or_none(
                &split(&predicted, true, sensor),
                &split(&predicted, true, o),
            );
            let healthy = spearman_or_none(
                &split(&predicted, false, sensor),
                &split(&predicted, false, o),
            );
            let region = crate::analysis::normalize(o)
                .map(|n| n.iter().filter(|v| **v >= a.spectrometer_threshold).count())
                .ok();
            (tumour, healthy, region)
        }
        None => (None, None, None),
    };

    let tumour_region_cells = predicted.iter().filter(|p| **p).count();
    let summary = Summary {
        auc: curve.auc,
        sensitivity: confusion.sensitivity(),
        specificity: confusion.specificity(),
        optimal_threshold: threshold,
        tp: confusion.tp,
        fp: confusion.fp,
        tn: confusion.tn,
        fn_: confusion.fn_,
        alpha: a.alpha,
        sensor_threshold: a.sensor_threshold,
        tumour_region_cells,
        healthy_region_cells: predicted.len() - tumour_region_cells,
        r_s_tumour,
        r_s_healthy,
        spectrometer_threshold: a.spectrometer_threshold,
        spectrometer_region_cells,
    };
    Ok(AnalysisOutput {
        ratio_map,
        predicted,
        truth: table.truth.clone(),
        roc: curve,
        confusion,
        oracle_ratio,
        summary,
    })
}

pub fn analysis_artifacts(out: &AnalysisOutput) -> Result<Vec<Artifact>> {
    let mut ratio = Vec::new();
    out.ratio_map
        .write_csv(&mut ratio, &out.predicted, &out.truth)?;
    let mut curve = Vec::new();
    out.roc.write_csv(&mut curve)?;
    let summary = toml::to_string(&out.summary).map_err(|e| Error::Config(e.to_string()))?;
    Ok(vec![
        Artifact::new("ratio_map.csv", ratio),
        Artifact::new("roc.csv", curve),
        Artifact::new("summary.toml", summary.into_bytes()),
    ])
}

/// Runs scan and analysis in one pass.
pub fn run_report(cfg: &ExperimentConfig) -> Result<(ScanOutput, AnalysisOutput)> {
    let scan = run_scan(cfg)?;
    let spectra = oracle_spectra(&scan.map);
    let analysis = analyze(cfg, &scan.map.to_table(), spectra.as_deref())?;
    Ok((scan, analysis))
}
