//! Digital tissue phantom: uniform autofluorescence with a PpIX tumour whose
//! margin is a Gaussian-diffused disc.
//!
//! Amplitudes are emission yields: spectral density per unit excitation
//! power (nm^-1). Multiplying by the excitation power in nW gives nW/nm.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{ratio_eq1, FitSettings};
use crate::error::{Error, Result};
use crate::spectral::{synthesize_emission, EmissionModel, WavelengthGrid};

/// Fraction of the peak PpIX level that counts as tumour in the ground truth.
pub const TRUTH_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub width: f64,
    pub height: f64,
    /// Side of one field cell, mm.
    pub cell: f64,
    pub tumor_center: (f64, f64),
    pub tumor_radius: f64,
    /// Flat-top PpIX yield before blurring. When unset, it is solved so the
    /// spectral ratio at the tumour centre equals `center_ratio_target`.
    pub ppix_peak_amp: Option<f64>,
    pub autofluor_amp: f64,
    /// Relative half-range of uniform multiplicative autofluorescence noise.
    pub autofluor_heterogeneity: f64,
    /// Gaussian blur applied to the PpIX disc, mm.
    pub margin_sigma: f64,
    pub center_ratio_target: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            width: 11.0,
            height: 11.0,
            cell: 0.1,
            tumor_center: (5.5, 5.5),
            // disc of 5 mm^2
            tumor_radius: (5.0 / std::f64::consts::PI).sqrt(),
            ppix_peak_amp: None,
            autofluor_amp: 1e-3,
            autofluor_heterogeneity: 0.05,
            margin_sigma: 0.5,
            center_ratio_target: 5.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width", self.width),
            ("height", self.height),
            ("cell", self.cell),
            ("tumor_radius", self.tumor_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.autofluor_amp >= 0.0 && self.autofluor_amp.is_finite()) {
            return Err(Error::param("autofluor_amp", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.autofluor_heterogeneity) {
            return Err(Error::param(
                "autofluor_heterogeneity",
                "must lie in [0, 1)",
            ));
        }
        if !(self.margin_sigma >= 0.0 && self.margin_sigma.is_finite()) {
            return Err(Error::param("margin_sigma", "must be >= 0"));
        }
        if let Some(p) = self.ppix_peak_amp {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::param("ppix_peak_amp", "must be >= 0"));
            }
        }
        if !(self.center_ratio_target >= 0.0 && self.center_ratio_target.is_finite()) {
            return Err(Error::param("center_ratio_target", "must be >= 0"));
        }
        let (cx, cy) = self.tumor_center;
        let r = self.tumor_radius;
        if cx - r < 0.0 || cy - r < 0.0 || cx + r > self.width || cy + r > self.height {
            return Err(Error::OutOfRange {
                what: "tumour disc",
                detail: format!(
                    "centre ({cx}, {cy}) radius {r} does not fit in {} x {} mm",
                    self.width, self.height
                ),
            });
        }
        Ok(())
    }
}

/// Sampled phantom, row-major with `x` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueField {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub autofluor: Vec<f64>,
    pub ppix: Vec<f64>,
    pub truth: Vec<bool>,
}

/// Area-weighted means over a rectangular spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotAverage {
    pub autofluor: f64,
    pub ppix: f64,
    /// Fraction of the spot area covered by ground-truth tumour.
    pub truth_fraction: f64,
}

impl TissueField {
    /// Builds a field from explicit arrays; truth follows the 90 %-of-peak rule.
    pub fn from_arrays(
        nx: usize,
        ny: usize,
        cell: f64,
        autofluor: Vec<f64>,
        ppix: Vec<f64>,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 || !(cell > 0.0) {
            return Err(Error::param("field", "dimensions must be positive"));
        }
        for len in [autofluor.len(), ppix.len()] {
            if len != nx * ny {
                return Err(Error::LengthMismatch {
                    left: len,
                    right: nx * ny,
                });
            }
        }
        if autofluor
            .iter()
            .chain(&ppix)
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::param("field", "amplitudes must be finite and >= 0"));
        }
        let truth = truth_mask(&ppix);
        Ok(TissueField {
            nx,
            ny,
            cell,
            autofluor,
            ppix,
            truth,
        })
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.cell
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.cell
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * self.cell, (iy as f64 + 0.5) * self.cell)
    }

    fn check_point(&self, x: f64, y: f64) -> Result<()> {
        let tol = 1e-9 * self.cell;
        if !(x >= -tol && y >= -tol && x <= self.width() + tol && y <= self.height() + tol) {
            return Err(Error::OutOfRange {
                what: "position",
                detail: format!(
                    "({x}, {y}) mm outside the {} x {} mm field",
                    self.width(),
                    self.height()
                ),
            });
        }
        Ok(())
    }

    /// Bilinear interpolation of `(autofluor, ppix)` between cell centres.
    /// Points in the outer half-cell take the edge values.
    pub fn emission_at(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.check_point(x, y)?;
        let axis = |v: f64, n: usize| {
            let pos = (v / self.cell - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (pos.floor() as usize).min(n.saturating_sub(2));
            let frac = if n == 1 { 0.0 } else { pos - i as f64 };
            (i, frac)
        };
        let (ix, fx) = axis(x, self.nx);
        let (iy, fy) = axis(y, self.ny);
        let ix1 = (ix + 1).min(self.nx - 1);
        let iy1 = (iy + 1).min(self.ny - 1);
        let lerp = |data: &[f64]| {
            let v00 = data[self.index(ix, iy)];
            let v10 = data[self.index(ix1, iy)];
            let v01 = data[self.index(ix, iy1)];
            let v11 = data[self.index(ix1, iy1)];
            (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
        };
        Ok((lerp(&self.autofluor), lerp(&self.ppix)))
    }

    /// Boxcar average over the axis-aligned spot centred at `(x, y)`.
    pub fn spot_average(&self, x: f64, y: f64, spot_w: f64, spot_h: f64) -> Result<SpotAverage> {
        let (x0, x1) = (x - spot_w / 2.0, x + spot_w / 2.0);
        let (y0, y1) = (y - spot_h / 2.0, y + spot_h / 2.0);
        self.check_point(x0, y0)?;
        self.check_point(x1, y1)?;
        let span = |lo: f64, hi: f64, n: usize| {
            let first = ((lo / self.cell).floor().max(0.0) as usize).min(n - 1);
            let last = ((hi / self.cell).ceil() as usize).clamp(first + 1, n);
            first..last
        };
        let overlap = |i: usize, lo: f64, hi: f64| {
            let c0 = i as f64 * self.cell;
            (hi.min(c0 + self.cell) - lo.max(c0)).max(0.0)
        };
        let (mut a, mut p, mut t, mut area) = (0.0, 0.0, 0.0, 0.0);
        for iy in span(y0, y1, self.ny) {
            let wy = overlap(iy, y0, y1);
            if wy == 0.0 {
                continue;
            }
            for ix in span(x0, x1, self.nx) {
                let w = overlap(ix, x0, x1) * wy;
                if w == 0.0 {
                    continue;
                }
                let k = self.index(ix, iy);
                a += w * self.autofluor[k];
                p += w * self.ppix[k];
                if self.truth[k] {
                    t += w;
                }
                area += w;
            }
        }
        Ok(SpotAverage {
            autofluor: a / area,
            ppix: p / area,
            truth_fraction: t / area,
        })
    }

    pub fn max_ppix(&self) -> f64 {
        self.ppix.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with columns `x_mm,y_mm,autofluor,ppix,truth`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x_mm", "y_mm", "autofluor", "ppix", "truth"])?;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (x, y) = self.cell_center(ix, iy);
                let k = self.index(ix, iy);
                w.write_record([
                    x.to_string(),
                    y.to_string(),
                    self.autofluor[k].to_string(),
                    self.ppix[k].to_string(),
                    (self.truth[k] as u8).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn truth_mask(ppix: &[f64]) -> Vec<bool> {
    let max = ppix.iter().copied().fold(0.0, f64::max);
    ppix.iter()
        .map(|p| max > 0.0 && *p >= TRUTH_FRACTION * max)
        .collect()
}

/// 1-D Gaussian kernel with `sigma` in cells, truncated at 4 sigma and
/// normalised to unit sum.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with zero padding outside the field.
fn blur(data: &[f64], nx: usize, ny: usize, sigma_cells: f64) -> Vec<f64> {
    if sigma_cells <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma_cells);
    let half = (kernel.len() / 2) as isize;
    let pass = |src: &[f64], along_x: bool| {
        let mut out = vec![0.0; src.len()];
        for iy in 0..ny {
            for ix in 0..nx {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let off = k as isize - half;
                    let (jx, jy) = if along_x {
                        (ix as isize + off, iy as isize)
                    } else {
                        (ix as isize, iy as isize + off)
                    };
                    if jx >= 0 && jy >= 0 && (jx as usize) < nx && (jy as usize) < ny {
                        acc += w * src[jy as usize * nx + jx as usize];
                    }
                }
                out[iy * nx + ix] = acc;
            }
        }
        out
    };
    let horizontal = pass(data, true);
    pass(&horizontal, false)
}

/// Generates the phantom. When `ppix_peak_amp` is unset the disc amplitude is
/// solved so that the noiseless spectral ratio at the tumour centre equals
/// `center_ratio_target`.
pub fn generate_phantom<R: Rng + ?Sized>(
    cfg: &PhantomConfig,
    emission: &EmissionModel,
    grid: &WavelengthGrid,
    fit: &FitSettings,
    rng: &mut R,
) -> Result<TissueField> {
    cfg.validate()?;
    let nx = (cfg.width / cfg.cell).round() as usize;
    let ny = (cfg.height / cfg.cell).round() as usize;
    if nx == 0 || ny == 0 {
        return Err(Error::param("cell", "larger than the field"));
    }
    let h = cfg.autofluor_heterogeneity;
    let autofluor: Vec<f64> = (0..nx * ny)
        .map(|_| {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            cfg.autofluor_amp * (1.0 + h * u)
        })
        .collect();

    let (cx, cy) = cfg.tumor_center;
    let mut disc = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let x = (ix as f64 + 0.5) * cfg.cell;
            let y = (iy as f64 + 0.5) * cfg.cell;
            if (x - cx).powi(2) + (y - cy).powi(2) <= cfg.tumor_radius.powi(2) {
                disc[iy * nx + ix] = 1.0;
            }
        }
    }
    let unit = blur(&disc, nx, ny, cfg.margin_sigma / cfg.cell);

    let mut field = TissueField::from_arrays(nx, ny, cfg.cell, autofluor, unit)?;
    let amplitude = match cfg.ppix_peak_amp {
        Some(p) => p,
        None => calibrate_amplitude(&field, cfg, emission, grid, fit)?,
    };
    for p in &mut field.ppix {
        *p *= amplitude;
    }
    field.truth = truth_mask(&field.ppix);
    Ok(field)
}

/// Disc amplitude giving the target spectral ratio at the tumour centre. The
/// ratio is linear in the PpIX amplitude up to the fit residual, so a few
/// proportional updates converge to machine precision.
fn calibrate_amplitude(
    unit_field: &TissueField,
    cfg: &PhantomConfig,
    emission: &EmissionModel,
    grid: &WavelengthGrid,
    fit: &FitSettings,
) -> Result<f64> {
    let target = cfg.center_ratio_target;
    let (a, p_unit) = unit_field.emission_at(cfg.tumor_center.0, cfg.tumor_center.1)?;
    if target == 0.0 {
        return Ok(0.0);
    }
    if a <= 0.0 || p_unit <= 0.0 {
        return Err(Error::Degenerate(
            "cannot calibrate the tumour: zero autofluorescence or PpIX at the centre".into(),
        ));
    }
    let ratio_for = |amp: f64| -> Result<f64> {
        let s = synthesize_emission(a, amp * p_unit, emission, grid)?;
        ratio_eq1(&s, fit)
    };
    let mut amp = target * a / p_unit;
    for _ in 0..20 {
        let r = ratio_for(amp)?;
        if (r - target).abs() <= 1e-12 * target {
            break;
        }
        if !(r > 0.0) {
            return Err(Error::Degenerate(format!(
                "spectral ratio {r} at the tumour centre does not respond to PpIX"
            )));
        }
        amp *= target / r;
    }
    Ok(amp)
}
