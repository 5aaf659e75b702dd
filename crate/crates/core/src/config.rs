//! Experiment definition: one nested TOML document covering every stage of
//! the pipeline. Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::FitSettings;
use crate::detector::{ChannelSpec, DetectorConfig, SpectrometerConfig};
use crate::error::{Error, Result};
use crate::optics::{FilterSpec, LedModel, WindowMaterial, WindowModel, WindowState};
use crate::phantom::PhantomConfig;
use crate::scanner::{OpticalChain, ScanConfig};
use crate::spectral::{EmissionModel, WavelengthGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: WavelengthGrid,
    pub emission: EmissionModel,
    pub filters: FilterConfig,
    pub led: LedModel,
    pub window: WindowConfig,
    pub channels: ChannelConfig,
    pub detector: DetectorConfig,
    pub spectrometer: SpectrometerConfig,
    pub phantom: PhantomConfig,
    pub scan: ScanConfig,
    pub line: LineConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 2024,
            output_dir: PathBuf::from("out"),
            grid: WavelengthGrid::default(),
            emission: EmissionModel::default(),
            filters: FilterConfig::default(),
            led: LedModel::default(),
            window: WindowConfig::default(),
            channels: ChannelConfig::default(),
            detector: DetectorConfig::default(),
            spectrometer: SpectrometerConfig::default(),
            phantom: PhantomConfig::default(),
            scan: ScanConfig::default(),
            line: LineConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub detection: FilterSpec,
    pub excitation: FilterSpec,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            detection: OpticalChain::default_detection_filter(),
            excitation: OpticalChain::default_excitation_filter(),
        }
    }
}

/// Window material and its fouling level at the start of the scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub material: WindowMaterial,
    pub attenuation: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            material: WindowMaterial::Diamond,
            attenuation: 1.0,
        }
    }
}

impl WindowConfig {
    pub fn state(&self) -> Result<WindowState> {
        WindowState::with_attenuation(WindowModel::for_material(self.material), self.attenuation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub green: ChannelSpec,
    pub red: ChannelSpec,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            green: ChannelSpec::green(),
            red: ChannelSpec::red(),
        }
    }
}

/// Line profile through the tumour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineConfig {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub step: f64,
}

impl Default for LineConfig {
    fn default() -> Self {
        LineConfig {
            start: (0.5, 5.5),
            end: (10.5, 5.5),
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Offset subtracted from the two-channel ratio.
    pub alpha: f64,
    /// Margin threshold on the peak-normalised sensor ratio.
    pub sensor_threshold: f64,
    /// Margin threshold on the peak-normalised spectrometer ratio.
    pub spectrometer_threshold: f64,
    pub fit: FitSettings,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha: 0.0,
            sensor_threshold: 0.21,
            spectrometer_threshold: 0.5,
            fit: FitSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML rendering; equal configs render to equal bytes.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.optical_chain()?.validate()?;
        self.spectrometer_check()?;
        self.phantom.validate()?;
        self.scan.validate()?;
        if !(self.line.step > 0.0 && self.line.step.is_finite()) {
            return Err(Error::param("line.step", "must be positive"));
        }
        for (name, v) in [
            ("alpha", self.analysis.alpha),
            ("sensor_threshold", self.analysis.sensor_threshold),
            (
                "spectrometer_threshold",
                self.analysis.spectrometer_threshold,
            ),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        Ok(())
    }

    fn spectrometer_check(&self) -> Result<()> {
        if !(self.spectrometer.resolution >= self.grid.step() * (1.0 - 1e-9)) {
            return Err(Error::param(
                "spectrometer.resolution",
                format!("must be >= grid step {}", self.grid.step()),
            ));
        }
        if !(self.spectrometer.noise_floor >= 0.0) {
            return Err(Error::param("spectrometer.noise_floor", "must be >= 0"));
        }
        Ok(())
    }

    pub fn optical_chain(&self) -> Result<OpticalChain> {
        Ok(OpticalChain {
            grid: self.grid,
            emission: self.emission,
            window: self.window.state()?,
            detection_filter: self.filters.detection,
            excitation_filter: self.filters.excitation,
            led: self.led,
            green: self.channels.green,
            red: self.channels.red,
            detector: self.detector,
            spectrometer: self.spectrometer,
        })
    }

    /// Switches off every stochastic term: detector and spectrometer noise
    /// and autofluorescence heterogeneity.
    pub fn without_noise(mut self) -> Self {
        self.detector.nep = 0.0;
        self.spectrometer.noise_floor = 0.0;
        self.phantom.autofluor_heterogeneity = 0.0;
        self.scan.fouling_per_position = false;
        self
    }
}
