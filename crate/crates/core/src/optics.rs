//! Filters, the tissue-contact window and its fouling statistics, and the
//! excitation LED.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::spectral::{PeakModel, Spectrum, WavelengthGrid};

/// 10-90 % rise of a logistic spans 2 ln 9 scale lengths.
const LOGISTIC_10_90: f64 = 4.394_449_154_672_439;

/// Parametric filter transmission. Out-of-band transmission never drops
/// below `peak_transmission * 10^-od_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FilterSpec {
    /// Gaussian passband of the given FWHM.
    Bandpass {
        center: f64,
        fwhm: f64,
        peak_transmission: f64,
        od_floor: f64,
    },
    /// Logistic edge at `cutoff`; `edge_width` is the 10-90 % rise in nm
    /// (0 gives a hard step).
    Longpass {
        cutoff: f64,
        edge_width: f64,
        peak_transmission: f64,
        od_floor: f64,
    },
}

impl FilterSpec {
    pub fn bandpass(center: f64, fwhm: f64, peak_transmission: f64, od_floor: f64) -> Result<Self> {
        let f = FilterSpec::Bandpass {
            center,
            fwhm,
            peak_transmission,
            od_floor,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn longpass(
        cutoff: f64,
        edge_width: f64,
        peak_transmission: f64,
        od_floor: f64,
    ) -> Result<Self> {
        let f = FilterSpec::Longpass {
            cutoff,
            edge_width,
            peak_transmission,
            od_floor,
        };
        f.validate()?;
        Ok(f)
    }

    /// Flat unit transmission.
    pub fn all_pass() -> Self {
        FilterSpec::Longpass {
            cutoff: f64::NEG_INFINITY,
            edge_width: 0.0,
            peak_transmission: 1.0,
            od_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (peak, od) = (self.peak_transmission(), self.od_floor());
        if !(peak > 0.0 && peak <= 1.0) {
            return Err(Error::param(
                "peak_transmission",
                format!("must lie in (0, 1], got {peak}"),
            ));
        }
        if !(od >= 0.0 && od.is_finite()) {
            return Err(Error::param("od_floor", format!("must be >= 0, got {od}")));
        }
        match *self {
            FilterSpec::Bandpass { center, fwhm, .. } => {
                if !center.is_finite() {
                    return Err(Error::param("center", "must be finite"));
                }
                if !(fwhm > 0.0 && fwhm.is_finite()) {
                    return Err(Error::param(
                        "fwhm",
                        format!("must be positive, got {fwhm}"),
                    ));
                }
            }
            FilterSpec::Longpass { edge_width, .. } => {
                if !(edge_width >= 0.0 && edge_width.is_finite()) {
                    return Err(Error::param(
                        "edge_width",
                        format!("must be >= 0, got {edge_width}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn peak_transmission(&self) -> f64 {
        match *self {
            FilterSpec::Bandpass {
                peak_transmission, ..
            }
            | FilterSpec::Longpass {
                peak_transmission, ..
            } => peak_transmission,
        }
    }

    pub fn od_floor(&self) -> f64 {
        match *self {
            FilterSpec::Bandpass { od_floor, .. } | FilterSpec::Longpass { od_floor, .. } => {
                od_floor
            }
        }
    }

    /// Transmission in (0, 1] at `lambda`.
    pub fn transmission(&self, lambda: f64) -> f64 {
        let floor = leakage_from_od(self.od_floor());
        let shape = match *self {
            FilterSpec::Bandpass { center, fwhm, .. } => {
                let sigma = fwhm / crate::spectral::FWHM_PER_SIGMA;
                let z = (lambda - center) / sigma;
                (-0.5 * z * z).exp()
            }
            FilterSpec::Longpass {
                cutoff, edge_width, ..
            } => {
                if edge_width == 0.0 {
                    if lambda >= cutoff {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let scale = edge_width / LOGISTIC_10_90;
                    1.0 / (1.0 + (-(lambda - cutoff) / scale).exp())
                }
            }
        };
        self.peak_transmission() * (floor + (1.0 - floor) * shape)
    }
}

/// Convenience form of [`FilterSpec::transmission`].
pub fn transmission(f: &FilterSpec, lambda: f64) -> f64 {
    f.transmission(lambda)
}

/// Pointwise product of `s` with the filter's transmission.
pub fn apply_filter(s: &Spectrum, f: &FilterSpec) -> Spectrum {
    s.modulated(|l| f.transmission(l))
}

/// Out-of-band leakage fraction for an optical density: 10^-od.
pub fn leakage_from_od(od: f64) -> f64 {
    10f64.powf(-od)
}

/// Inverse of [`leakage_from_od`].
pub fn od_from_leakage(leakage: f64) -> f64 {
    -leakage.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMaterial {
    Diamond,
    Glass,
}

/// Optical window between tissue and sensor.
///
/// Base transmission is a two-plateau curve: `base_transmission_green` below
/// `split_nm`, `base_transmission_red` at and above it. Fouling is a
/// wavelength-flat multiplier whose contact-to-contact statistics are given by
/// `fouling_mean`/`fouling_sd` (T/T0 after one contact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowModel {
    pub material: WindowMaterial,
    pub base_transmission_green: f64,
    pub base_transmission_red: f64,
    pub fouling_mean: f64,
    pub fouling_sd: f64,
    pub split_nm: f64,
}

impl WindowModel {
    pub fn diamond() -> Self {
        WindowModel {
            material: WindowMaterial::Diamond,
            base_transmission_green: 0.68,
            base_transmission_red: 0.75,
            fouling_mean: 0.90,
            fouling_sd: 0.08,
            split_nm: 570.0,
        }
    }

    pub fn glass() -> Self {
        WindowModel {
            material: WindowMaterial::Glass,
            base_transmission_green: 0.89,
            base_transmission_red: 0.92,
            fouling_mean: 0.60,
            fouling_sd: 0.17,
            split_nm: 570.0,
        }
    }

    pub fn for_material(material: WindowMaterial) -> Self {
        match material {
            WindowMaterial::Diamond => Self::diamond(),
            WindowMaterial::Glass => Self::glass(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_transmission_green", self.base_transmission_green),
            ("base_transmission_red", self.base_transmission_red),
            ("fouling_mean", self.fouling_mean),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, format!("must lie in (0, 1], got {v}")));
            }
        }
        if !(self.fouling_sd >= 0.0 && self.fouling_sd < 1.0) {
            return Err(Error::param(
                "fouling_sd",
                format!("must lie in [0, 1), got {}", self.fouling_sd),
            ));
        }
        Ok(())
    }

    pub fn base_transmission(&self, lambda: f64) -> f64 {
        if lambda < self.split_nm {
            self.base_transmission_green
        } else {
            self.base_transmission_red
        }
    }
}

impl Default for WindowModel {
    fn default() -> Self {
        Self::diamond()
    }
}

/// A window together with its present fouling level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowState {
    pub model: WindowModel,
    current_attenuation: f64,
}

impl WindowState {
    pub fn pristine(model: WindowModel) -> Self {
        WindowState {
            model,
            current_attenuation: 1.0,
        }
    }

    pub fn with_attenuation(model: WindowModel, attenuation: f64) -> Result<Self> {
        if !(attenuation > 0.0 && attenuation <= 1.0) {
            return Err(Error::param(
                "current_attenuation",
                format!("must lie in (0, 1], got {attenuation}"),
            ));
        }
        Ok(WindowState {
            model,
            current_attenuation: attenuation,
        })
    }

    pub fn current_attenuation(&self) -> f64 {
        self.current_attenuation
    }

    /// Total transmission at `lambda`, base plateau times fouling.
    pub fn transmission(&self, lambda: f64) -> f64 {
        self.model.base_transmission(lambda) * self.current_attenuation
    }
}

pub fn apply_window(s: &Spectrum, w: &WindowState) -> Spectrum {
    s.modulated(|l| w.transmission(l))
}

/// Normal distribution truncated to (0, 1], parameterised so that the
/// *truncated* distribution has the requested mean and standard deviation.
#[derive(Debug, Clone, Copy)]
pub struct FoulingDistribution {
    latent_mean: f64,
    latent_sd: f64,
    cdf_lo: f64,
    cdf_hi: f64,
}

impl FoulingDistribution {
    const MAX_ITER: usize = 500;

    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean > 0.0 && mean <= 1.0) {
            return Err(Error::param(
                "fouling_mean",
                format!("must lie in (0, 1], got {mean}"),
            ));
        }
        if sd == 0.0 {
            return Ok(FoulingDistribution {
                latent_mean: mean,
                latent_sd: 0.0,
                cdf_lo: 0.0,
                cdf_hi: 1.0,
            });
        }
        if !(sd > 0.0 && sd < 0.5) {
            return Err(Error::param(
                "fouling_sd",
                format!("must lie in [0, 0.5), got {sd}"),
            ));
        }
        // Fixed-point moment matching: shift the latent mean by the mean
        // error, rescale the latent sd by the sd ratio.
        let (mut mu, mut sigma) = (mean, sd);
        for _ in 0..Self::MAX_ITER {
            let (m, s) = truncated_moments(mu, sigma);
            let (dm, ratio) = (mean - m, sd / s);
            if dm.abs() < 1e-13 && (ratio - 1.0).abs() < 1e-12 {
                return Ok(Self::from_latent(mu, sigma));
            }
            mu += dm;
            sigma *= ratio;
            if !(mu.is_finite() && sigma.is_finite()) || sigma > 1e3 {
                break;
            }
        }
        Err(Error::param(
            "fouling",
            format!("no truncated normal on (0, 1] has mean {mean} and sd {sd}"),
        ))
    }

    pub fn for_window(model: &WindowModel) -> Result<Self> {
        Self::new(model.fouling_mean, model.fouling_sd)
    }

    fn from_latent(mu: f64, sigma: f64) -> Self {
        let std = std_normal();
        FoulingDistribution {
            latent_mean: mu,
            latent_sd: sigma,
            cdf_lo: std.cdf((0.0 - mu) / sigma),
            cdf_hi: std.cdf((1.0 - mu) / sigma),
        }
    }

    /// Inverse-CDF draw; consumes exactly one uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if self.latent_sd == 0.0 {
            return self.latent_mean;
        }
        let p = self.cdf_lo + u * (self.cdf_hi - self.cdf_lo);
        let x = self.latent_mean + self.latent_sd * std_normal().inverse_cdf(p);
        x.clamp(f64::MIN_POSITIVE, 1.0)
    }

    /// Analytic mean and sd of the truncated distribution.
    pub fn moments(&self) -> (f64, f64) {
        if self.latent_sd == 0.0 {
            return (self.latent_mean, 0.0);
        }
        truncated_moments(self.latent_mean, self.latent_sd)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn truncated_moments(mu: f64, sigma: f64) -> (f64, f64) {
    let std = std_normal();
    let (a, b) = ((0.0 - mu) / sigma, (1.0 - mu) / sigma);
    let z = std.cdf(b) - std.cdf(a);
    let (pa, pb) = (std.pdf(a), std.pdf(b));
    let shift = (pa - pb) / z;
    let mean = mu + sigma * shift;
    let var = sigma * sigma * (1.0 + (a * pa - b * pb) / z - shift * shift);
    (mean, var.max(0.0).sqrt())
}

/// One tissue contact: returns a state whose attenuation is a fresh draw of
/// T/T0 from the window's fouling distribution.
pub fn foul_window<R: Rng + ?Sized>(w: &WindowState, rng: &mut R) -> Result<WindowState> {
    let dist = FoulingDistribution::for_window(&w.model)?;
    Ok(WindowState {
        model: w.model,
        current_attenuation: dist.sample(rng),
    })
}

/// Excitation LED: a primary peak plus a broad secondary shoulder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedModel {
    pub primary: PeakModel,
    pub secondary: PeakModel,
    /// Secondary apex relative to the primary apex.
    pub secondary_fraction: f64,
}

impl Default for LedModel {
    fn default() -> Self {
        LedModel {
            primary: PeakModel {
                center: 405.0,
                fwhm: 15.0,
                amplitude: 1.0,
            },
            secondary: PeakModel {
                center: 550.0,
                fwhm: 100.0,
                amplitude: 1.0,
            },
            secondary_fraction: 0.05,
        }
    }
}

impl LedModel {
    pub fn validate(&self) -> Result<()> {
        self.primary.validate()?;
        self.secondary.validate()?;
        if !(0.0..=1.0).contains(&self.secondary_fraction) {
            return Err(Error::param(
                "secondary_fraction",
                format!("must lie in [0, 1], got {}", self.secondary_fraction),
            ));
        }
        Ok(())
    }

    /// LED emission normalised to `power` nW over the grid.
    pub fn spectrum(&self, power: f64, grid: &WavelengthGrid) -> Spectrum {
        let shape = Spectrum::from_fn(*grid, |l| {
            self.primary.with_amplitude(1.0).value(l)
                + self.secondary_fraction * self.secondary.with_amplitude(1.0).value(l)
        });
        let total = shape.total_power();
        if total > 0.0 {
            shape.scaled(power / total)
        } else {
            shape
        }
    }
}
