//! Wavelength grids, Gaussian emission peaks and tissue emission synthesis.
//!
//! Every spectrum in the crate is a dense array of spectral power density
//! (nW/nm) sampled on a uniform [`WavelengthGrid`]. Filters, windows and
//! detector channels compose by pointwise multiplication, and band powers are
//! trapezoidal integrals of the piecewise-linear interpolant.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FWHM = `FWHM_PER_SIGMA` * sigma for a Gaussian profile (2 * sqrt(2 ln 2)).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Relative slack used when counting samples so that `(max - min) / step`
/// landing a hair under an integer does not drop the last sample.
const GRID_SLACK: f64 = 1e-9;

/// Uniform wavelength sampling in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct WavelengthGrid {
    lambda_min: f64,
    lambda_max: f64,
    step: f64,
    len: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    lambda_min: f64,
    lambda_max: f64,
    step: f64,
}

impl TryFrom<GridSpec> for WavelengthGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        build_grid(spec.lambda_min, spec.lambda_max, spec.step)
    }
}

impl From<WavelengthGrid> for GridSpec {
    fn from(grid: WavelengthGrid) -> Self {
        GridSpec {
            lambda_min: grid.lambda_min,
            lambda_max: grid.lambda_max,
            step: grid.step,
        }
    }
}

/// Builds a uniform grid starting at `lambda_min` whose last sample does not
/// exceed `lambda_max`.
pub fn build_grid(lambda_min: f64, lambda_max: f64, step: f64) -> Result<WavelengthGrid> {
    if !(lambda_min.is_finite() && lambda_max.is_finite() && step.is_finite()) {
        return Err(Error::InvalidGrid("bounds and step must be finite".into()));
    }
    if step <= 0.0 {
        return Err(Error::InvalidGrid(format!(
            "step must be positive, got {step}"
        )));
    }
    if lambda_min >= lambda_max {
        return Err(Error::InvalidGrid(format!(
            "lambda_min ({lambda_min}) must be below lambda_max ({lambda_max})"
        )));
    }
    let intervals = ((lambda_max - lambda_min) / step + GRID_SLACK).floor();
    let len = intervals as usize + 1;
    if len < 2 {
        return Err(Error::InvalidGrid(format!(
            "step {step} leaves fewer than two samples in [{lambda_min}, {lambda_max}]"
        )));
    }
    Ok(WavelengthGrid {
        lambda_min,
        lambda_max,
        step,
        len,
    })
}

impl Default for WavelengthGrid {
    fn default() -> Self {
        build_grid(400.0, 750.0, 1.0).expect("default grid is valid")
    }
}

impl WavelengthGrid {
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Wavelength of sample `i`.
    pub fn wavelength(&self, i: usize) -> f64 {
        self.lambda_min + i as f64 * self.step
    }

    /// Wavelength of the last sample (may sit below `lambda_max`).
    pub fn last(&self) -> f64 {
        self.wavelength(self.len - 1)
    }

    pub fn wavelengths(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.wavelength(i))
    }

    /// True when `lambda` lies within the sampled span.
    pub fn covers(&self, lambda: f64) -> bool {
        let tol = self.step * GRID_SLACK;
        lambda >= self.lambda_min - tol && lambda <= self.last() + tol
    }

    /// Index of the sample nearest to `lambda`, clamped to the grid.
    pub fn nearest_index(&self, lambda: f64) -> usize {
        let pos = ((lambda - self.lambda_min) / self.step).round();
        pos.clamp(0.0, (self.len - 1) as f64) as usize
    }
}

/// Spectral power density (nW/nm) sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: WavelengthGrid,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: WavelengthGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: grid.len(),
            });
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::param(
                "spectrum",
                format!("sample {i} is {v}; values must be finite and non-negative"),
            ));
        }
        Ok(Spectrum { grid, values })
    }

    pub fn zeros(grid: WavelengthGrid) -> Self {
        Spectrum {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f(lambda)` at each grid point. Negative results are clamped to 0.
    pub fn from_fn(grid: WavelengthGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.wavelengths().map(|l| f(l).max(0.0)).collect();
        Spectrum { grid, values }
    }

    /// A monochromatic line of total power `power` (nW) on the sample nearest
    /// `lambda`. Integrates to exactly `power` under the trapezoid rule when the
    /// line sits on an interior sample.
    pub fn line(grid: WavelengthGrid, lambda: f64, power: f64) -> Result<Self> {
        if !grid.covers(lambda) {
            return Err(Error::OutOfRange {
                what: "line wavelength",
                detail: format!("{lambda} nm not in [{}, {}]", grid.lambda_min, grid.last()),
            });
        }
        if !(power >= 0.0 && power.is_finite()) {
            return Err(Error::param("power", "must be finite and non-negative"));
        }
        let mut s = Spectrum::zeros(grid);
        let i = grid.nearest_index(lambda);
        let width = if i == 0 || i + 1 == grid.len() {
            grid.step / 2.0
        } else {
            grid.step
        };
        s.values[i] = power / width;
        Ok(s)
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Linear interpolation at an arbitrary wavelength within the grid.
    pub fn value_at(&self, lambda: f64) -> Result<f64> {
        if !self.grid.covers(lambda) {
            return Err(Error::OutOfRange {
                what: "wavelength",
                detail: format!(
                    "{lambda} nm not in [{}, {}]",
                    self.grid.lambda_min,
                    self.grid.last()
                ),
            });
        }
        let pos = ((lambda - self.grid.lambda_min) / self.grid.step).max(0.0);
        let i = (pos.floor() as usize).min(self.grid.len - 1);
        if i + 1 >= self.grid.len {
            return Ok(self.values[self.grid.len - 1]);
        }
        let frac = pos - i as f64;
        Ok(self.values[i] * (1.0 - frac) + self.values[i + 1] * frac)
    }

    /// Multiplies every sample by `k` (k >= 0).
    pub fn scaled(&self, k: f64) -> Spectrum {
        debug_assert!(k >= 0.0);
        Spectrum {
            grid: self.grid,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// Pointwise product with a per-sample factor in [0, inf).
    pub fn modulated(&self, factor: impl Fn(f64) -> f64) -> Spectrum {
        let values = self
            .grid
            .wavelengths()
            .zip(&self.values)
            .map(|(l, v)| v * factor(l))
            .collect();
        Spectrum {
            grid: self.grid,
            values,
        }
    }

    /// Pointwise sum of two spectra on the same grid.
    pub fn try_add(&self, other: &Spectrum) -> Result<Spectrum> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Spectrum {
            grid: self.grid,
            values,
        })
    }

    /// Trapezoidal integral over the whole grid (nW).
    pub fn total_power(&self) -> f64 {
        trapezoid(&self.values, self.grid.step)
    }

    /// Serializes as two-column CSV `wavelength_nm,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["wavelength_nm", "value"])?;
        for (l, v) in self.grid.wavelengths().zip(&self.values) {
            w.write_record([l.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV written by [`Spectrum::write_csv`]. Wavelengths must be
    /// strictly increasing and uniformly spaced.
    pub fn read_csv<R: Read>(reader: R, source_name: &str) -> Result<Spectrum> {
        let schema = |detail: String| Error::Schema {
            source_name: source_name.to_string(),
            detail,
        };
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["wavelength_nm", "value"] {
            return Err(schema(format!(
                "expected header `wavelength_nm,value`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut lambdas = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |col: usize, name: &str| -> Result<f64> {
                rec.get(col)
                    .ok_or_else(|| schema(format!("row {}: missing column `{name}`", row + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| schema(format!("row {}: column `{name}`: {e}", row + 1)))
            };
            lambdas.push(parse(0, "wavelength_nm")?);
            values.push(parse(1, "value")?);
        }
        if lambdas.len() < 2 {
            return Err(schema("need at least two rows".into()));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(schema(
                "column `wavelength_nm` is not strictly increasing".into(),
            ));
        }
        let step = (lambdas[lambdas.len() - 1] - lambdas[0]) / (lambdas.len() - 1) as f64;
        let grid = build_grid(lambdas[0], lambdas[lambdas.len() - 1], step)
            .map_err(|e| schema(e.to_string()))?;
        if grid.len() != lambdas.len()
            || lambdas
                .iter()
                .enumerate()
                .any(|(i, l)| (grid.wavelength(i) - l).abs() > 1e-6 * step)
        {
            return Err(schema(
                "column `wavelength_nm` is not uniformly spaced".into(),
            ));
        }
        Spectrum::new(grid, values).map_err(|e| schema(e.to_string()))
    }
}

fn trapezoid(values: &[f64], step: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    step * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Trapezoidal integral of the piecewise-linear interpolant over `[lo, hi]`.
pub fn integrate_band(s: &Spectrum, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::param(
            "band",
            format!("lo ({lo}) must be below hi ({hi})"),
        ));
    }
    let grid = s.grid();
    if !grid.covers(lo) || !grid.covers(hi) {
        return Err(Error::OutOfRange {
            what: "band",
            detail: format!(
                "[{lo}, {hi}] not within [{}, {}]",
                grid.lambda_min(),
                grid.last()
            ),
        });
    }
    let mut xs = vec![lo];
    let mut ys = vec![s.value_at(lo)?];
    for (i, l) in grid.wavelengths().enumerate() {
        if l > lo && l < hi {
            xs.push(l);
            ys.push(s.values()[i]);
        }
    }
    xs.push(hi);
    ys.push(s.value_at(hi)?);
    Ok(xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum())
}

/// A Gaussian emission peak. `amplitude` is the apex spectral density (nW/nm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakModel {
    pub center: f64,
    pub fwhm: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl PeakModel {
    pub fn new(center: f64, fwhm: f64, amplitude: f64) -> Result<Self> {
        let peak = PeakModel {
            center,
            fwhm,
            amplitude,
        };
        peak.validate()?;
        Ok(peak)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::param("center", "must be finite"));
        }
        if !(self.fwhm > 0.0 && self.fwhm.is_finite()) {
            return Err(Error::param(
                "fwhm",
                format!("must be positive, got {}", self.fwhm),
            ));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::param(
                "amplitude",
                format!("must be non-negative, got {}", self.amplitude),
            ));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.fwhm / FWHM_PER_SIGMA
    }

    /// Closed-form area under the profile, A * sigma * sqrt(2 pi).
    pub fn area(&self) -> f64 {
        self.amplitude * self.sigma() * (2.0 * std::f64::consts::PI).sqrt()
    }

    pub fn value(&self, lambda: f64) -> f64 {
        let z = (lambda - self.center) / self.sigma();
        self.amplitude * (-0.5 * z * z).exp()
    }

    pub fn with_amplitude(&self, amplitude: f64) -> PeakModel {
        PeakModel { amplitude, ..*self }
    }
}

/// Samples a Gaussian peak on `grid`.
pub fn evaluate_peak(peak: &PeakModel, grid: &WavelengthGrid) -> Spectrum {
    Spectrum::from_fn(*grid, |l| peak.value(l))
}

/// Spectral shapes of brain autofluorescence and PpIX fluorescence.
///
/// Peak amplitudes here are shape multipliers (1 by default); absolute levels
/// come from the `a_amp`/`p_amp` arguments of [`synthesize_emission`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmissionModel {
    pub autofluor: PeakModel,
    pub ppix_primary: PeakModel,
    pub ppix_secondary: PeakModel,
    /// Apex of the 704 nm shoulder relative to the 635 nm apex, in [0, 1].
    pub secondary_fraction: f64,
}

impl Default for EmissionModel {
    fn default() -> Self {
        EmissionModel {
            autofluor: PeakModel {
                center: 510.0,
                fwhm: 118.0,
                amplitude: 1.0,
            },
            ppix_primary: PeakModel {
                center: 635.0,
                fwhm: 14.0,
                amplitude: 1.0,
            },
            ppix_secondary: PeakModel {
                center: 704.0,
                fwhm: 30.0,
                amplitude: 1.0,
            },
            secondary_fraction: 0.2,
        }
    }
}

impl EmissionModel {
    pub fn validate(&self) -> Result<()> {
        self.autofluor.validate()?;
        self.ppix_primary.validate()?;
        self.ppix_secondary.validate()?;
        if !(0.0..=1.0).contains(&self.secondary_fraction) {
            return Err(Error::param(
                "secondary_fraction",
                format!("must lie in [0, 1], got {}", self.secondary_fraction),
            ));
        }
        Ok(())
    }

    /// Emission density at one wavelength for the given amplitudes.
    pub fn value(&self, a_amp: f64, p_amp: f64, lambda: f64) -> f64 {
        a_amp * self.autofluor.value(lambda)
            + p_amp * self.ppix_primary.value(lambda)
            + p_amp * self.secondary_fraction * self.ppix_secondary.value(lambda)
    }
}

/// Sum of autofluorescence scaled by `a_amp` and the two PpIX peaks scaled by
/// `p_amp` (the secondary additionally by `secondary_fraction`).
pub fn synthesize_emission(
    a_amp: f64,
    p_amp: f64,
    model: &EmissionModel,
    grid: &WavelengthGrid,
) -> Result<Spectrum> {
    if !(a_amp >= 0.0 && a_amp.is_finite()) {
        return Err(Error::param(
            "a_amp",
            format!("must be non-negative, got {a_amp}"),
        ));
    }
    if !(p_amp >= 0.0 && p_amp.is_finite()) {
        return Err(Error::param(
            "p_amp",
            format!("must be non-negative, got {p_amp}"),
        ));
    }
    Ok(Spectrum::from_fn(*grid, |l| model.value(a_amp, p_amp, l)))
}
