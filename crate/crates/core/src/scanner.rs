//! Raster and line scans of a phantom through the full optical chain.
//!
//! Each scan position is an independent work unit with its own random
//! substream, so the result does not depend on how positions are scheduled
//! across threads.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    channel_power, read_channel, spectrometer_read, Channel, ChannelReading, ChannelSpec,
    DetectorConfig, SpectrometerConfig,
};
use crate::error::{Error, Result};
use crate::optics::{apply_filter, apply_window, foul_window, FilterSpec, LedModel, WindowState};
use crate::phantom::TissueField;
use crate::rng::{substream, Domain};
use crate::spectral::{synthesize_emission, EmissionModel, Spectrum, WavelengthGrid};

/// Fraction of the spot that must be covered by field truth for the scan cell
/// to count as tumour. Ties count as tumour.
pub const CELL_TRUTH_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// Distance between neighbouring positions, mm.
    pub step: f64,
    /// Spot width and height, mm.
    pub spot: (f64, f64),
    /// Excitation power delivered to one spot, nW.
    pub excitation_power: f64,
    /// Lower-left corner of the first spot, mm.
    pub origin: (f64, f64),
    /// Raster size; unset dimensions fill the field from `origin`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    /// Draw a fresh window fouling level at every position.
    pub fouling_per_position: bool,
    /// Keep the spectrometer reading of every position.
    pub record_oracle: bool,
    /// Fraction of the filtered excitation light reflected back into the
    /// detection path.
    pub excitation_backscatter: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            step: 1.0,
            spot: (1.0, 1.0),
            // 40 mW/cm^2 over a 1 mm^2 spot
            excitation_power: 4.0e5,
            origin: (0.0, 0.0),
            rows: None,
            cols: None,
            fouling_per_position: false,
            record_oracle: true,
            excitation_backscatter: 0.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step", self.step),
            ("spot width", self.spot.0),
            ("spot height", self.spot.1),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(
                    "scan",
                    format!("{name} must be positive, got {v}"),
                ));
            }
        }
        if !(self.excitation_power >= 0.0 && self.excitation_power.is_finite()) {
            return Err(Error::param("excitation_power", "must be >= 0"));
        }
        if !(self.excitation_backscatter >= 0.0 && self.excitation_backscatter.is_finite()) {
            return Err(Error::param("excitation_backscatter", "must be >= 0"));
        }
        if self.rows == Some(0) || self.cols == Some(0) {
            return Err(Error::param("scan", "rows and cols must be positive"));
        }
        Ok(())
    }
}

/// Everything between the tissue surface and the ADC codes.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalChain {
    pub grid: WavelengthGrid,
    pub emission: EmissionModel,
    pub window: WindowState,
    /// Longpass blocking the excitation light ahead of the sensor.
    pub detection_filter: FilterSpec,
    /// Bandpass cleaning up the LED output.
    pub excitation_filter: FilterSpec,
    pub led: LedModel,
    pub green: ChannelSpec,
    pub red: ChannelSpec,
    pub detector: DetectorConfig,
    pub spectrometer: SpectrometerConfig,
}

impl OpticalChain {
    pub fn default_detection_filter() -> FilterSpec {
        FilterSpec::Longpass {
            cutoff: 425.0,
            edge_width: 5.0,
            peak_transmission: 0.95,
            od_floor: 4.0,
        }
    }

    pub fn default_excitation_filter() -> FilterSpec {
        FilterSpec::Bandpass {
            center: 405.0,
            fwhm: 10.0,
            peak_transmission: 0.9,
            od_floor: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.emission.validate()?;
        self.window.model.validate()?;
        self.detection_filter.validate()?;
        self.excitation_filter.validate()?;
        self.led.validate()?;
        self.green.validate()?;
        self.red.validate()?;
        self.detector.validate()
    }
}

impl Default for OpticalChain {
    fn default() -> Self {
        OpticalChain {
            grid: WavelengthGrid::default(),
            emission: EmissionModel::default(),
            window: WindowState::pristine(Default::default()),
            detection_filter: Self::default_detection_filter(),
            excitation_filter: Self::default_excitation_filter(),
            led: LedModel::default(),
            green: ChannelSpec::green(),
            red: ChannelSpec::red(),
            detector: DetectorConfig::default(),
            spectrometer: SpectrometerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    /// Spot centre, mm.
    pub position: (f64, f64),
    pub reading_514: ChannelReading,
    pub reading_635: ChannelReading,
    /// Spectrometer reading of the emission at the tissue surface.
    pub oracle: Option<Spectrum>,
    /// Fraction of the spot covered by field truth.
    pub truth_fraction: f64,
    /// Window attenuation in effect for this position.
    pub window_attenuation: f64,
}

impl ScanRecord {
    pub fn truth(&self) -> bool {
        // an exact half-cover can land a rounding error below one half
        self.truth_fraction >= CELL_TRUTH_FRACTION - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanMap {
    pub config: ScanConfig,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `x` varying fastest.
    pub records: Vec<ScanRecord>,
    pub truth: Vec<bool>,
}

/// Emission at the tissue surface for spot-averaged yields.
pub fn surface_emission(
    autofluor: f64,
    ppix: f64,
    excitation_power: f64,
    chain: &OpticalChain,
) -> Result<Spectrum> {
    synthesize_emission(
        autofluor * excitation_power,
        ppix * excitation_power,
        &chain.emission,
        &chain.grid,
    )
}

/// Light reaching the photodiodes: emission (plus any excitation backscatter)
/// through the window and the detection longpass.
pub fn sensor_spectrum(
    emission: &Spectrum,
    window: &WindowState,
    sc: &ScanConfig,
    chain: &OpticalChain,
) -> Result<Spectrum> {
    let mut at_window = emission.clone();
    if sc.excitation_backscatter > 0.0 {
        let led = chain
            .led
            .spectrum(sc.excitation_power * sc.excitation_backscatter, &chain.grid);
        at_window = at_window.try_add(&apply_filter(&led, &chain.excitation_filter))?;
    }
    Ok(apply_filter(
        &apply_window(&at_window, window),
        &chain.detection_filter,
    ))
}

/// Measures one spot. Draw order on `rng`: fouling (if enabled), the 514 nm
/// read, the 635 nm read, then spectrometer noise (if recorded).
pub fn measure_spot<R: Rng + ?Sized>(
    field: &TissueField,
    position: (f64, f64),
    sc: &ScanConfig,
    chain: &OpticalChain,
    rng: &mut R,
) -> Result<ScanRecord> {
    let avg = field.spot_average(position.0, position.1, sc.spot.0, sc.spot.1)?;
    let emission = surface_emission(avg.autofluor, avg.ppix, sc.excitation_power, chain)?;
    let window = if sc.fouling_per_position {
        foul_window(&chain.window, rng)?
    } else {
        chain.window
    };
    let at_sensor = sensor_spectrum(&emission, &window, sc, chain)?;
    let reading_514 = read_channel(
        channel_power(&at_sensor, &chain.green),
        Channel::Green514,
        &chain.detector,
        rng,
    );
    let reading_635 = read_channel(
        channel_power(&at_sensor, &chain.red),
        Channel::Red635,
        &chain.detector,
        rng,
    );
    let oracle = if sc.record_oracle {
        Some(spectrometer_read(&emission, &chain.spectrometer, rng)?)
    } else {
        None
    };
    Ok(ScanRecord {
        position,
        reading_514,
        reading_635,
        oracle,
        truth_fraction: avg.truth_fraction,
        window_attenuation: window.current_attenuation(),
    })
}

fn check_run(
    extent: f64,
    origin: f64,
    spot: f64,
    step: f64,
    count: Option<usize>,
    axis: &str,
) -> Result<usize> {
    let n = match count {
        Some(n) => n,
        None => {
            let room = extent - origin - spot;
            if room < -1e-9 {
                0
            } else {
                (room / step + 1e-9).floor() as usize + 1
            }
        }
    };
    let far = origin + (n.max(1) - 1) as f64 * step + spot;
    if n == 0 || origin < 0.0 || far > extent + 1e-9 {
        return Err(Error::OutOfRange {
            what: "scan footprint",
            detail: format!(
                "{axis}: spots from {origin} mm to {far} mm exceed the {extent} mm field"
            ),
        });
    }
    Ok(n)
}

/// Rasters the field cell by cell.
pub fn raster_scan(
    field: &TissueField,
    sc: &ScanConfig,
    chain: &OpticalChain,
    seed: u64,
) -> Result<ScanMap> {
    sc.validate()?;
    chain.validate()?;
    let cols = check_run(field.width(), sc.origin.0, sc.spot.0, sc.step, sc.cols, "x")?;
    let rows = check_run(
        field.height(),
        sc.origin.1,
        sc.spot.1,
        sc.step,
        sc.rows,
        "y",
    )?;
    let records = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            let position = (
                sc.origin.0 + sc.spot.0 / 2.0 + c as f64 * sc.step,
                sc.origin.1 + sc.spot.1 / 2.0 + r as f64 * sc.step,
            );
            let mut rng = substream(seed, Domain::RasterCell, k as u64);
            measure_spot(field, position, sc, chain, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = records.iter().map(ScanRecord::truth).collect();
    Ok(ScanMap {
        config: *sc,
        rows,
        cols,
        records,
        truth,
    })
}

/// Spot centres `start + k * step * direction` for `k = 0, 1, ...` while the
/// displacement stays within the segment length.
pub fn line_positions(start: (f64, f64), end: (f64, f64), step: f64) -> Result<Vec<(f64, f64)>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param(
            "step",
            format!("must be positive, got {step}"),
        ));
    }
    let (dx, dy) = (end.0 - start.0, end.1 - start.1);
    let length = dx.hypot(dy);
    if length == 0.0 {
        return Ok(vec![start]);
    }
    let n = (length / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|k| {
            let t = k as f64 * step / length;
            (start.0 + t * dx, start.1 + t * dy)
        })
        .collect())
}

/// Scans along a straight segment; records are ordered by displacement.
pub fn line_scan(
    field: &TissueField,
    start: (f64, f64),
    end: (f64, f64),
    step: f64,
    sc: &ScanConfig,
    chain: &OpticalChain,
    seed: u64,
) -> Result<Vec<ScanRecord>> {
    sc.validate()?;
    chain.validate()?;
    let positions = line_positions(start, end, step)?;
    positions
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = substream(seed, Domain::LineSample, k as u64);
            measure_spot(field, *p, sc, chain, &mut rng)
        })
        .collect()
}

const SCAN_HEADER: [&str; 5] = ["x_mm", "y_mm", "counts_514", "counts_635", "truth"];

impl ScanMap {
    /// CSV with columns `x_mm,y_mm,counts_514,counts_635,truth`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SCAN_HEADER)?;
        for (rec, truth) in self.records.iter().zip(&self.truth) {
            w.write_record([
                rec.position.0.to_string(),
                rec.position.1.to_string(),
                rec.reading_514.counts.to_string(),
                rec.reading_635.counts.to_string(),
                (*truth as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-cell oracle spectra as `(file name, CSV bytes)`, in record order.
    pub fn oracle_files(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut out = Vec::new();
        for (k, rec) in self.records.iter().enumerate() {
            if let Some(s) = &rec.oracle {
                let mut buf = Vec::new();
                s.write_csv(&mut buf)?;
                out.push((oracle_file_name(k / self.cols, k % self.cols), buf));
            }
        }
        Ok(out)
    }

    pub fn to_table(&self) -> ScanTable {
        ScanTable {
            rows: self.rows,
            cols: self.cols,
            positions: self.records.iter().map(|r| r.position).collect(),
            counts_514: self.records.iter().map(|r| r.reading_514.counts).collect(),
            counts_635: self.records.iter().map(|r| r.reading_635.counts).collect(),
            truth: self.truth.clone(),
        }
    }
}

/// File name of the oracle spectrum for raster cell `(row, col)`.
pub fn oracle_file_name(row: usize, col: usize) -> String {
    format!("cell_r{row:03}_c{col:03}.csv")
}

/// The contents of a ScanMap CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanTable {
    pub rows: usize,
    pub cols: usize,
    pub positions: Vec<(f64, f64)>,
    pub counts_514: Vec<u32>,
    pub counts_635: Vec<u32>,
    pub truth: Vec<bool>,
}

impl ScanTable {
    /// Reads a ScanMap CSV. The raster width is the length of the first run
    /// of rows sharing a `y_mm` value.
    pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<ScanTable> {
        let schema = |detail: String| Error::Schema {
            source_name: source_name.to_string(),
            detail,
        };
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        for (k, name) in SCAN_HEADER.iter().enumerate() {
            if headers.get(k) != Some(*name) {
                return Err(schema(format!(
                    "column {} must be `{name}`, found `{}`",
                    k + 1,
                    headers.get(k).unwrap_or("")
                )));
            }
        }
        if headers.len() != SCAN_HEADER.len() {
            return Err(schema(format!(
                "expected {} columns, found {}",
                SCAN_HEADER.len(),
                headers.len()
            )));
        }
        let mut table = ScanTable {
            rows: 0,
            cols: 0,
            positions: Vec::new(),
            counts_514: Vec::new(),
            counts_635: Vec::new(),
            truth: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| {
                    schema(format!(
                        "row {}: missing column `{}`",
                        i + 1,
                        SCAN_HEADER[k]
                    ))
                })
            };
            let bad = |k: usize, e: &dyn std::fmt::Display| {
                schema(format!("row {}: column `{}`: {e}", i + 1, SCAN_HEADER[k]))
            };
            let x: f64 = field(0)?.parse().map_err(|e| bad(0, &e))?;
            let y: f64 = field(1)?.parse().map_err(|e| bad(1, &e))?;
            let c514: u32 = field(2)?.parse().map_err(|e| bad(2, &e))?;
            let c635: u32 = field(3)?.parse().map_err(|e| bad(3, &e))?;
            let truth = match field(4)? {
                "0" => false,
                "1" => true,
                other => return Err(bad(4, &format!("expected 0 or 1, found `{other}`"))),
            };
            table.positions.push((x, y));
            table.counts_514.push(c514);
            table.counts_635.push(c635);
            table.truth.push(truth);
        }
        let n = table.positions.len();
        if n == 0 {
            return Err(schema("no data rows".into()));
        }
        let y0 = table.positions[0].1;
        let cols = table.positions.iter().take_while(|p| p.1 == y0).count();
        if !n.is_multiple_of(cols) {
            return Err(schema(format!(
                "{n} rows do not form a raster of width {cols}"
            )));
        }
        table.cols = cols;
        table.rows = n / cols;
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SCAN_HEADER)?;
        for k in 0..self.positions.len() {
            w.write_record([
                self.positions[k].0.to_string(),
                self.positions[k].1.to_string(),
                self.counts_514[k].to_string(),
                self.counts_635[k].to_string(),
                (self.truth[k] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
