//! Two-channel filter-photodiode sensor and the spectrometer used as oracle.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::FilterSpec;
use crate::spectral::{Spectrum, FWHM_PER_SIGMA};

/// The two sensor channels in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "514")]
    Green514,
    #[serde(rename = "635")]
    Red635,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Green514 => f.write_str("514"),
            Channel::Red635 => f.write_str("635"),
        }
    }
}

/// Pigment-filter passband of one sensor channel. Out-of-band leakage is
/// `peak_transmission * 10^-od_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub channel: Channel,
    pub center: f64,
    pub fwhm: f64,
    pub peak_transmission: f64,
    pub od_floor: f64,
}

impl ChannelSpec {
    /// 514 nm channel; OD 2.35 gives the 0.45 % red-into-green leakage.
    pub fn green() -> Self {
        ChannelSpec {
            channel: Channel::Green514,
            center: 514.0,
            fwhm: 45.0,
            peak_transmission: 0.9,
            od_floor: 2.35,
        }
    }

    /// 635 nm channel; OD 2.43 gives the 0.37 % green-into-red leakage.
    pub fn red() -> Self {
        ChannelSpec {
            channel: Channel::Red635,
            center: 635.0,
            fwhm: 45.0,
            peak_transmission: 0.9,
            od_floor: 2.43,
        }
    }

    pub fn filter(&self) -> FilterSpec {
        FilterSpec::Bandpass {
            center: self.center,
            fwhm: self.fwhm,
            peak_transmission: self.peak_transmission,
            od_floor: self.od_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filter().validate()
    }

    pub fn transmission(&self, lambda: f64) -> f64 {
        self.filter().transmission(lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Noise-equivalent power, nW/sqrt(Hz).
    pub nep: f64,
    /// Measurement bandwidth, Hz.
    pub bandwidth: f64,
    pub adc_bits: u32,
    /// Optical power (nW) mapped to the top ADC code.
    pub full_scale_power: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            nep: 4.0,
            bandwidth: 1.0,
            adc_bits: 16,
            full_scale_power: 20_000.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nep >= 0.0 && self.nep.is_finite()) {
            return Err(Error::param(
                "nep",
                format!("must be >= 0, got {}", self.nep),
            ));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::param(
                "bandwidth",
                format!("must be positive, got {}", self.bandwidth),
            ));
        }
        if !(1..=32).contains(&self.adc_bits) {
            return Err(Error::param(
                "adc_bits",
                format!("must lie in 1..=32, got {}", self.adc_bits),
            ));
        }
        if !(self.full_scale_power > 0.0 && self.full_scale_power.is_finite()) {
            return Err(Error::param(
                "full_scale_power",
                format!("must be positive, got {}", self.full_scale_power),
            ));
        }
        Ok(())
    }

    pub fn max_count(&self) -> u32 {
        ((1u64 << self.adc_bits) - 1) as u32
    }

    /// Counts per nW.
    pub fn count_scale(&self) -> f64 {
        self.max_count() as f64 / self.full_scale_power
    }

    /// Power-domain noise standard deviation, nW.
    pub fn noise_sd(&self) -> f64 {
        self.nep * self.bandwidth.sqrt()
    }

    /// Noiseless ADC code for an optical power.
    pub fn quantize(&self, power: f64) -> (u32, bool) {
        let max = self.max_count();
        let code = (power.max(0.0) * self.count_scale()).round();
        if code > max as f64 {
            (max, true)
        } else {
            (code as u32, false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelReading {
    pub channel: Channel,
    pub counts: u32,
    /// Optical power reaching the photodiode before noise, nW.
    pub in_band_power: f64,
    pub saturated: bool,
}

/// Optical power collected by a channel: the integral of the spectrum
/// weighted by the channel transmission over the whole grid, leakage included.
pub fn channel_power(s: &Spectrum, c: &ChannelSpec) -> f64 {
    s.modulated(|l| c.transmission(l)).total_power()
}

/// Adds Gaussian noise of sd `nep * sqrt(bandwidth)` in the power domain,
/// clamps at zero and quantises. Always consumes exactly one normal deviate.
pub fn read_channel<R: Rng + ?Sized>(
    power: f64,
    channel: Channel,
    cfg: &DetectorConfig,
    rng: &mut R,
) -> ChannelReading {
    let z: f64 = rng.sample(StandardNormal);
    let noisy = (power + z * cfg.noise_sd()).max(0.0);
    let (counts, saturated) = cfg.quantize(noisy);
    ChannelReading {
        channel,
        counts,
        in_band_power: power,
        saturated,
    }
}

/// Grating spectrometer used as the reference instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrometerConfig {
    /// Instrument FWHM, nm. Must be at least the grid step.
    pub resolution: f64,
    /// Additive Gaussian noise sd per sample, nW/nm.
    pub noise_floor: f64,
}

impl Default for SpectrometerConfig {
    fn default() -> Self {
        SpectrometerConfig {
            resolution: 2.0,
            noise_floor: 0.02,
        }
    }
}

/// Convolves `s` with a Gaussian instrument function and adds a noise floor.
///
/// One grid sample already spans one step of resolution, so the applied
/// kernel has FWHM `sqrt(resolution^2 - step^2)`; at `resolution == step` the
/// spectrum passes through unchanged. The kernel is renormalised near the
/// grid edges.
pub fn spectrometer_read<R: Rng + ?Sized>(
    s: &Spectrum,
    cfg: &SpectrometerConfig,
    rng: &mut R,
) -> Result<Spectrum> {
    let grid = *s.grid();
    let step = grid.step();
    if !(cfg.resolution >= step * (1.0 - 1e-9)) {
        return Err(Error::param(
            "resolution",
            format!("must be >= grid step {step}, got {}", cfg.resolution),
        ));
    }
    if !(cfg.noise_floor >= 0.0 && cfg.noise_floor.is_finite()) {
        return Err(Error::param("noise_floor", "must be >= 0"));
    }
    let kernel_fwhm = (cfg.resolution * cfg.resolution - step * step)
        .max(0.0)
        .sqrt();
    let sigma = kernel_fwhm / FWHM_PER_SIGMA / step;
    let values = s.values();
    let mut out = if sigma < 1e-6 {
        values.to_vec()
    } else {
        let half = (4.0 * sigma).ceil() as isize;
        let weights: Vec<f64> = (-half..=half)
            .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
            .collect();
        let n = values.len() as isize;
        (0..n)
            .map(|i| {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (w, k) in weights.iter().zip(-half..=half) {
                    let j = i + k;
                    if (0..n).contains(&j) {
                        acc += w * values[j as usize];
                        norm += w;
                    }
                }
                acc / norm
            })
            .collect()
    };
    if cfg.noise_floor > 0.0 {
        for v in &mut out {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v + z * cfg.noise_floor).max(0.0);
        }
    }
    Spectrum::new(grid, out)
}

/// Smallest excitation power (nW) whose emission clears the detector noise:
/// `nep * sqrt(bandwidth) / emission_ratio`.
pub fn min_detectable_excitation(cfg: &DetectorConfig, emission_ratio: f64) -> Result<f64> {
    if emission_ratio == 0.0 {
        return Err(Error::DivisionByZero("emission_ratio"));
    }
    if !(emission_ratio > 0.0 && emission_ratio.is_finite()) {
        return Err(Error::param(
            "emission_ratio",
            format!("must be positive, got {emission_ratio}"),
        ));
    }
    Ok(cfg.noise_sd() / emission_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use crate::spectral::{evaluate_peak, PeakModel, WavelengthGrid};

    fn noiseless() -> DetectorConfig {
        DetectorConfig {
            nep: 0.0,
            ..DetectorConfig::default()
        }
    }

    /// FWHM of a sampled single peak, by linear interpolation of the
    /// half-maximum crossings.
    fn measured_fwhm(s: &Spectrum) -> f64 {
        let v = s.values();
        let (imax, &vmax) = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let half = vmax / 2.0;
        let g = s.grid();
        let mut left = imax;
        while v[left] > half {
            left -= 1;
        }
        let mut right = imax;
        while v[right] > half {
            right += 1;
        }
        let cross = |lo: usize, hi: usize| {
            let t = (half - v[lo]) / (v[hi] - v[lo]);
            g.wavelength(lo) + t * g.step()
        };
        cross(right - 1, right) - cross(left, left + 1)
    }

    /// Relative transmission `10^-od + (1 - 10^-od) * exp(-z^2 / 2)` at
    /// `offset` nm from the centre of a Gaussian passband.
    fn closed_form_leak(offset: f64, fwhm: f64, od: f64) -> f64 {
        let f = 10f64.powf(-od);
        let z = offset / (fwhm / crate::spectral::FWHM_PER_SIGMA);
        f + (1.0 - f) * (-0.5 * z * z).exp()
    }

    #[test]
    fn channel_power_examples() {
        let grid = WavelengthGrid::default();
        let ideal = ChannelSpec {
            peak_transmission: 1.0,
            ..ChannelSpec::red()
        };
        let line = Spectrum::line(grid, 635.0, 100.0).unwrap();
        assert!((channel_power(&line, &ideal) - 100.0).abs() < 1e-9);

        let green = Spectrum::line(grid, 514.0, 100.0).unwrap();
        let leak = channel_power(&green, &ideal) / 100.0;
        assert!((leak - closed_form_leak(121.0, 45.0, 2.43)).abs() < 1e-12);
        assert!((leak - 0.0037).abs() < 2e-5);

        assert_eq!(channel_power(&Spectrum::zeros(grid), &ideal), 0.0);
    }

    #[test]
    fn cross_talk_reciprocity() {
        let grid = WavelengthGrid::default();
        let (g, r) = (ChannelSpec::green(), ChannelSpec::red());
        let green_line = Spectrum::line(grid, 514.0, 1.0).unwrap();
        let red_line = Spectrum::line(grid, 635.0, 1.0).unwrap();
        let g_into_r = channel_power(&green_line, &r) / channel_power(&green_line, &g);
        let r_into_g = channel_power(&red_line, &g) / channel_power(&red_line, &r);
        let leak_r = closed_form_leak(121.0, r.fwhm, r.od_floor);
        let leak_g = closed_form_leak(121.0, g.fwhm, g.od_floor);
        assert!((g_into_r - leak_r).abs() < 1e-12);
        assert!((r_into_g - leak_g).abs() < 1e-12);
        // the passband tail 121 nm out is negligible next to the OD floor
        assert!((leak_r / 10f64.powf(-r.od_floor) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn read_channel_examples() {
        let mut rng = substream(1, Domain::Auxiliary, 0);
        let cfg = noiseless();
        assert_eq!(read_channel(0.0, Channel::Red635, &cfg, &mut rng).counts, 0);
        let full = read_channel(cfg.full_scale_power, Channel::Red635, &cfg, &mut rng);
        assert_eq!(full.counts, 65535);
        assert!(!full.saturated);
        let over = read_channel(2.0 * cfg.full_scale_power, Channel::Red635, &cfg, &mut rng);
        assert_eq!(over.counts, 65535);
        assert!(over.saturated);
    }

    #[test]
    fn read_noise_matches_nep() {
        let cfg = DetectorConfig::default();
        let mut rng = substream(99, Domain::Auxiliary, 1);
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|_| read_channel(100.0, Channel::Green514, &cfg, &mut rng).counts as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let sd = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let expected_sd = 4.0 * cfg.count_scale();
        assert!(
            (sd / expected_sd - 1.0).abs() < 0.05,
            "{sd} vs {expected_sd}"
        );
        // law of large numbers against the noiseless code
        let (clean, _) = cfg.quantize(100.0);
        assert!((mean - clean as f64).abs() < 3.0 * expected_sd / (n as f64).sqrt());
    }

    #[test]
    fn noiseless_reads_are_monotone() {
        let cfg = DetectorConfig {
            nep: 0.0,
            adc_bits: 8,
            ..DetectorConfig::default()
        };
        let mut rng = substream(5, Domain::Auxiliary, 0);
        let mut last = 0;
        for i in 0..=600 {
            let c = read_channel(i as f64 * 0.5, Channel::Red635, &cfg, &mut rng).counts;
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn spectrometer_examples() {
        let grid = WavelengthGrid::default();
        let mut rng = substream(3, Domain::Auxiliary, 0);
        let quiet = |resolution| SpectrometerConfig {
            resolution,
            noise_floor: 0.0,
        };
        let peak = evaluate_peak(&PeakModel::new(635.0, 14.0, 10.0).unwrap(), &grid);

        let same = spectrometer_read(&peak, &quiet(1.0), &mut rng).unwrap();
        for (a, b) in same.values().iter().zip(peak.values()) {
            assert!((a - b).abs() <= 1e-3 * b.abs() + 1e-300);
        }

        let broad = spectrometer_read(&peak, &quiet(5.0), &mut rng).unwrap();
        let w = measured_fwhm(&broad);
        let expected = (14.0f64 * 14.0 + 5.0 * 5.0).sqrt();
        assert!((w - expected).abs() < 0.1, "{w} vs {expected}");
        let w0 = measured_fwhm(&peak);
        assert!((w0 - 14.0).abs() < 0.05);

        let zero = spectrometer_read(&Spectrum::zeros(grid), &quiet(5.0), &mut rng).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));

        assert!(spectrometer_read(&peak, &quiet(0.5), &mut rng).is_err());
    }

    #[test]
    fn detection_limit_examples() {
        let cfg = DetectorConfig::default();
        let p = min_detectable_excitation(&cfg, 0.017).unwrap();
        assert!((p - 235.294_117_647).abs() < 1e-6);
        assert_eq!(min_detectable_excitation(&cfg, 1.0).unwrap(), 4.0);
        let p = min_detectable_excitation(&cfg, 0.110).unwrap();
        assert!((p - 36.36).abs() < 0.01);
        assert!(min_detectable_excitation(&cfg, 0.0).is_err());
    }

    #[test]
    fn detector_validation() {
        let bad = [
            DetectorConfig {
                nep: -1.0,
                ..Default::default()
            },
            DetectorConfig {
                bandwidth: 0.0,
                ..Default::default()
            },
            DetectorConfig {
                adc_bits: 0,
                ..Default::default()
            },
            DetectorConfig {
                adc_bits: 33,
                ..Default::default()
            },
            DetectorConfig {
                full_scale_power: 0.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        let cfg32 = DetectorConfig {
            adc_bits: 32,
            ..Default::default()
        };
        assert_eq!(cfg32.max_count(), u32::MAX);
    }
}
